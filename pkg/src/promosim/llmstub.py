"""Deterministic local stand-in for the chat/embeddings endpoints.

Serves the OpenAI-compatible wire format over localhost so fixtures can be
recorded (and the CLI exercised) without any external service. Replies are
pure functions of the prompt: rewrites follow a fixed promotional "house
style" that repeats its content and reuses stock phrases, which both makes
the attack texts embed near whatever reference material the prompt carries
and makes the generator's output highly self-consistent across runs.

Run standalone with:  python -m promosim.llmstub --port 8123
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

# Stock promotional phrases; every generated text reuses these, so probing a
# generated text regenerates heavily overlapping n-grams.
HOUSE_PHRASES = [
    "thoughtfully finished so every detail feels considered and dependable",
    "an easy pick for shoppers who expect honest everyday performance",
    "ready to impress from the very first use and for years after",
]

PERSONA_TEXTS = [
    "Nora - an enthusiastic naturalist who spotlights gentle honest ingredients",
    "Victor - a detail-driven analyst who catalogs every practical benefit",
    "Paloma - a luxury advocate who frames products as small indulgences",
    "Rustam - a pragmatist who cares about fit with daily routines",
    "Selene - a wellness guide who links products to feeling good",
    "Quentin - a storyteller who gives each product a memorable arc",
    "Imani - a trend watcher who knows what shoppers are loving now",
    "Bashir - a value hunter who weighs quality against price",
]

# Fraction of the reference text each persona weaves into its draft; later
# personas lean harder on the reference, so drafts span a quality gradient.
PERSONA_DENSITIES = [0.30, 0.45, 0.60, 0.75, 0.90, 0.95, 0.80, 0.50]

GENERIC_KEYWORDS = frozenset(
    "product products item items new good great one use get thing nice".split()
)

_BLOCK_RE = re.compile(r'"""\n?(.*?)\n?"""', re.DOTALL)
_PUNCT_STRIP = ".,!?;:()[]\"'"


def _blocks(prompt: str) -> list[str]:
    return [b.strip() for b in _BLOCK_RE.findall(prompt)]


def _words(text: str) -> list[str]:
    out = []
    for raw in text.split():
        w = raw.strip(_PUNCT_STRIP)
        if w:
            out.append(w)
    return out


def _dedup(tokens: list[str]) -> list[str]:
    seen, out = set(), []
    for t in tokens:
        key = t.lower()
        if key not in seen:
            seen.add(key)
            out.append(t)
    return out


def _name_tokens(original: str) -> list[str]:
    return _words(original)[:4]


_HOUSE_WORDS = frozenset(w for phrase in HOUSE_PHRASES for w in phrase.split())


def _house_text(name: list[str], run: list[str]) -> str:
    """Verbose house style: name, stock phrase, content run, stock phrase,
    the same run again, stock phrase. Maximally self-consistent."""
    run_text = " ".join(run)
    return (
        f"{' '.join(name)}. {HOUSE_PHRASES[0]}. {run_text}. "
        f"{HOUSE_PHRASES[1]}. {run_text}. {HOUSE_PHRASES[2]}."
    )


def _promo_text(name: list[str], run: list[str]) -> str:
    """Tight promotional copy: the content run with one trailing stock phrase."""
    return f"{' '.join(name)}. {' '.join(run)}. {HOUSE_PHRASES[2]}."


def _density_for(persona: str) -> float:
    for i, text in enumerate(PERSONA_TEXTS):
        if persona.strip() == text:
            return PERSONA_DENSITIES[i]
    digest = hashlib.sha256(persona.encode("utf-8")).digest()
    return 0.3 + 0.6 * (digest[0] / 255.0)


def _draft(original: str, reference: str, keywords: list[str], persona: str) -> str:
    density = _density_for(persona)
    ref_tokens = _words(reference)
    take = max(1, int(round(density * len(ref_tokens))))
    kw = [k for k in keywords if k]
    # keywords lead and close the pitch, so they dominate the copy
    run = kw + ref_tokens[:take] + kw
    return _promo_text(_name_tokens(original), run)


def _consensus(original: str, drafts: list[str]) -> str:
    counts: dict[str, int] = {}
    order: list[str] = []
    for d in drafts:
        for t in _dedup(_words(d)):
            key = t.lower()
            if key not in counts:
                order.append(t)
            counts[key] = counts.get(key, 0) + 1
    name = _name_tokens(original)
    skip = {t.lower() for t in name} | _HOUSE_WORDS
    # lead with what every expert agreed on, then the full merged content
    agreed = [
        t for t in order if counts[t.lower()] == len(drafts) and t.lower() not in skip
    ]
    union = [t for t in order if t.lower() not in skip]
    return _promo_text(name, agreed + union)


def _completion(prefix: str) -> str:
    run = _dedup(_words(prefix))
    return f"{HOUSE_PHRASES[0]}. {HOUSE_PHRASES[1]}. {HOUSE_PHRASES[2]}. {' '.join(run)}."


def rewrite_plain(text: str) -> str:
    """House-style rewrite of arbitrary text, outside any prompt flow; used to
    build detection benchmarks from the same generator that answers probes."""
    return _house_text(_name_tokens(text), _dedup(_words(text)))


def generate_reply(prompt: str) -> str:
    """Deterministic reply for any prompt produced by this package's
    templates; unrecognized prompts get a canned echo."""

    if "sales experts, each with distinct personas" in prompt:
        match = re.search(r"set of (\d+) sales experts", prompt)
        n = int(match.group(1)) if match else 5
        lines = []
        for i in range(n):
            lines.append(f"Expert {i + 1}: {PERSONA_TEXTS[i % len(PERSONA_TEXTS)]}")
        return "\n".join(lines)

    if "Candidate keywords:" in prompt and "appealing keywords" in prompt:
        raw = prompt.split("Candidate keywords:", 1)[1].strip()
        kept = [
            t.strip()
            for t in raw.split(",")
            if t.strip() and t.strip().lower() not in GENERIC_KEYWORDS
        ]
        return ", ".join(kept)

    if "Adopt the role of the following sales expert:" in prompt:
        persona = prompt.split("sales expert:", 1)[1].splitlines()[1].strip()
        keywords_raw = prompt.split("the keywords:", 1)[1].splitlines()[0].strip()
        keywords = [] if keywords_raw == "(none)" else [
            k.strip() for k in keywords_raw.split(",") if k.strip()
        ]
        original, reference = _blocks(prompt)[:2]
        return _draft(original, reference, keywords, persona)

    if "Candidate rewrites:" in prompt:
        original = _blocks(prompt)[0]
        drafts = [
            d.strip()
            for d in re.split(r"Draft \d+:\n", prompt.split("Candidate rewrites:", 1)[1])
            if d.strip() and not d.strip().startswith("Respond with")
        ]
        drafts = [d.split("\n\nRespond with", 1)[0].strip() for d in drafts]
        return _consensus(original, drafts)

    if "Text so far:" in prompt:
        return _completion(_blocks(prompt)[0])

    if "closely align with the reference content" in prompt:
        original, reference = _blocks(prompt)[:2]
        name = _name_tokens(original)
        return f"{' '.join(name)}. {' '.join(_words(reference))}."

    if "more likely to be liked by users" in prompt:
        original = _blocks(prompt)[0]
        return _house_text(_name_tokens(original), _dedup(_words(original)))

    digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
    return f"Acknowledged ({digest})."


def hash_embedding(text: str, dim: int = 16) -> list[float]:
    values = [0.0] * dim
    for token in text.lower().split():
        h = int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")
        values[(h >> 1) % dim] += 1.0 if h & 1 == 0 else -1.0
    return values


@dataclass
class StubLLMServer:
    """Threaded localhost server speaking the package's wire format.

    Test hooks: `fail_statuses` is a queue of HTTP statuses to emit before
    answering normally; `delay` holds each request open so concurrency is
    observable; `max_inflight_seen` records the high-water mark.
    """

    port: int = 0
    fail_statuses: list[int] = field(default_factory=list)
    delay: float = 0.0
    embed_dim: int = 16
    reply_fn: object = None  # optional callable(prompt) -> str override

    def __post_init__(self) -> None:
        self.request_count = 0
        self.max_inflight_seen = 0
        self._inflight = 0
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence request logging
                pass

            def do_POST(self) -> None:
                with stub._lock:
                    stub.request_count += 1
                    stub._inflight += 1
                    stub.max_inflight_seen = max(stub.max_inflight_seen, stub._inflight)
                    forced = stub.fail_statuses.pop(0) if stub.fail_statuses else None
                try:
                    if stub.delay:
                        import time

                        time.sleep(stub.delay)
                    length = int(self.headers.get("Content-Length", "0"))
                    payload = json.loads(self.rfile.read(length).decode("utf-8"))
                    if forced is not None:
                        self._reply(forced, {"error": f"injected status {forced}"})
                        return
                    if self.path.endswith("/chat/completions"):
                        responder = stub.reply_fn or generate_reply
                        content = responder(payload["messages"][-1]["content"])
                        self._reply(
                            200,
                            {"choices": [{"message": {"role": "assistant", "content": content}}]},
                        )
                    elif self.path.endswith("/embeddings"):
                        vec = hash_embedding(payload["input"], stub.embed_dim)
                        self._reply(200, {"data": [{"index": 0, "embedding": vec}]})
                    else:
                        self._reply(404, {"error": f"unknown path {self.path}"})
                finally:
                    with stub._lock:
                        stub._inflight -= 1

            def _reply(self, status: int, doc: dict) -> None:
                body = json.dumps(doc).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self._server = ThreadingHTTPServer(("127.0.0.1", self.port), Handler)
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "StubLLMServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubLLMServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main() -> None:
    parser = argparse.ArgumentParser(description="Run the offline stub LLM server")
    parser.add_argument("--port", type=int, default=8123)
    args = parser.parse_args()
    server = StubLLMServer(port=args.port).start()
    print(f"stub LLM listening on {server.base_url} (Ctrl-C to stop)")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    main()
