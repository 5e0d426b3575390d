"""Black-box text promotion attack and baselines.

Pipeline for one target item: pick the most similar popular items as a
reference pool, mine recurring keywords from the pool with TextRank, ask an
LLM to keep the appealing ones, then rewrite the target's text via a
multi-persona draft-and-consensus prompt sequence. Simpler modes send just
the plain rewrite prompt (naive), the reference-alignment prompt (simulate),
or copy another item's text outright (copycat).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import Catalog, Item, PopularityIndex
from .embedder import EmbedConfig, cosine, embed_text, tokenize
from .errors import AttackError, ConfigError, TransportError, UsageError
from .llm_client import ChatRequest, Transport, chat_complete, user_chat

logger = logging.getLogger(__name__)

ATTACK_MODES = ("naive", "simulate", "full", "copycat")

DEFAULT_STOPWORDS = frozenset(
    """a about above after again against all am an and any are as at be because
    been before being below between both but by can could did do does doing down
    during each few for from further had has have having he her here hers him his
    how i if in into is it its itself just me more most my no nor not now of off
    on once only or other our ours out over own same she should so some such than
    that the their theirs them then there these they this those through to too
    under until up very was we were what when where which while who whom why will
    with you your yours""".split()
)

# Commercial filler removed by the no-LLM keyword filter path.
GENERIC_WORDS = frozenset(
    """product products item items thing things buy purchase use used using get
    gets make makes made good great best well nice fine like new one two also
    every many much includes include including available pack count size
    ounce oz ml""".split()
)


def load_template(name: str) -> str:
    return resources.files("promosim.prompts").joinpath(f"{name}.txt").read_text("utf-8")


def render(template: str, **slots: str) -> str:
    """Substitute <Slot Name> placeholders; slot keys use underscores."""
    out = template
    for key, value in slots.items():
        out = out.replace(f"<{key.replace('_', ' ').title()}>", value)
    return out


# --------------------------------------------------------------------------
# Reference selection


@dataclass
class ReferenceSelection:
    pool: list[tuple[str, float]]  # (item_id, similarity), descending
    reference_id: str
    reference_text: str


def select_reference(
    target: Item,
    index: PopularityIndex,
    catalog: Catalog,
    cfg: EmbedConfig,
    m: int = 50,
) -> ReferenceSelection:
    """Rank popular items by cosine similarity to the target's text and keep
    the top-min(m, |popular|) pool; the pool head is the reference item."""
    if not index.popular_set:
        raise UsageError("popularity index has an empty popular set")
    target_text = target.assembled_text()
    if not tokenize(target_text):
        raise AttackError(f"target {target.item_id!r} has empty text")
    tvec = embed_text(target_text, cfg)
    scored = [
        (item_id, cosine(tvec, embed_text(catalog.item_text(item_id), cfg)))
        for item_id in index.popular_set
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    pool = scored[: min(m, len(scored))]
    ref_id = pool[0][0]
    return ReferenceSelection(pool, ref_id, catalog.item_text(ref_id))


# --------------------------------------------------------------------------
# Unified keyword extraction (TextRank over a token-adjacency graph)


@dataclass
class KeywordSet:
    keywords: list[tuple[str, float]]  # (token, score), descending

    def tokens(self) -> list[str]:
        return [t for t, _ in self.keywords]

    def __len__(self) -> int:
        return len(self.keywords)


def build_adjacency(
    token_sequences: list[list[str]], window: int = 2
) -> dict[str, dict[str, float]]:
    """Undirected co-occurrence graph: tokens within `window` positions of
    each other in a sequence are linked; weights count co-occurrences."""
    adj: dict[str, dict[str, float]] = {}
    for seq in token_sequences:
        for tok in seq:
            adj.setdefault(tok, {})
        for i, tok in enumerate(seq):
            for j in range(i + 1, min(i + window, len(seq))):
                other = seq[j]
                if other == tok:
                    continue
                adj[tok][other] = adj[tok].get(other, 0.0) + 1.0
                adj[other][tok] = adj[other].get(tok, 0.0) + 1.0
    return adj


def textrank_scores(
    adjacency: dict[str, dict[str, float]],
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> dict[str, float]:
    """Iterate the weighted TextRank recurrence to convergence (L-inf < tol)
    and normalize scores so the maximum is 1.0."""
    nodes = sorted(adjacency)
    if not nodes:
        return {}
    degree = {n: sum(adjacency[n].values()) for n in nodes}
    scores = {n: 1.0 for n in nodes}
    for _ in range(max_iter):
        delta = 0.0
        new_scores = {}
        for n in nodes:
            rank = sum(
                scores[j] * w / degree[j] for j, w in adjacency[n].items() if degree[j] > 0
            )
            new_scores[n] = (1.0 - damping) + damping * rank
            delta = max(delta, abs(new_scores[n] - scores[n]))
        scores = new_scores
        if delta < tol:
            break
    top = max(scores.values())
    return {n: s / top for n, s in scores.items()} if top > 0 else scores


def extract_unified_keywords(
    pool_texts: list[str],
    k: int = 20,
    stopwords: frozenset[str] | set[str] | None = None,
) -> KeywordSet:
    """Top-k content tokens of the pool texts ranked by TextRank score."""
    if not pool_texts:
        raise UsageError("keyword extraction needs a nonempty text pool")
    stop = DEFAULT_STOPWORDS if stopwords is None else stopwords
    sequences = [[t for t in tokenize(text) if t not in stop] for text in pool_texts]
    adjacency = build_adjacency(sequences, window=2)
    if not adjacency:
        logger.warning("all pool tokens were filtered; attack proceeds without keywords")
        return KeywordSet([])
    scores = textrank_scores(adjacency)
    ranked = sorted(scores.items(), key=lambda pair: (-pair[1], pair[0]))
    return KeywordSet(ranked[:k])


def filter_keywords(
    raw: KeywordSet,
    transport: Transport | None = None,
    model: str = "default",
    generic: frozenset[str] | set[str] = GENERIC_WORDS,
) -> tuple[KeywordSet, list["LlmExchange"]]:
    """Keep appealing keywords: via an LLM pass when a transport is given
    (falling back to the static list if the reply is unparseable), otherwise
    by dropping the static generic-word list."""
    if not raw.keywords:
        return raw, []
    if transport is not None:
        prompt = render(load_template("keyword_filter"), keywords=", ".join(raw.tokens()))
        req = user_chat(model, prompt, temperature=0.0)
        reply = chat_complete(req, transport)
        exchange = LlmExchange("keyword_filter", req, reply)
        kept = {t.strip().lower() for t in re.split(r"[,;\n]+", reply) if t.strip()}
        kept = {t for t in kept if t}
        survivors = [(t, s) for t, s in raw.keywords if t in kept]
        if kept and survivors:
            return KeywordSet(survivors), [exchange]
        logger.warning("unparseable keyword-filter reply; falling back to the static list")
        return KeywordSet([(t, s) for t, s in raw.keywords if t not in generic]), [exchange]
    return KeywordSet([(t, s) for t, s in raw.keywords if t not in generic]), []


# --------------------------------------------------------------------------
# Prompt orchestration


@dataclass
class LlmExchange:
    stage: str
    request: ChatRequest
    response: str

    def to_dict(self) -> dict:
        return {"stage": self.stage, "request": self.request.payload(), "response": self.response}


@dataclass
class AttackOutput:
    target_id: str
    original_text: str
    malicious_text: str
    mode: str
    persona_drafts: list[str] = field(default_factory=list)
    transcript: list[LlmExchange] = field(default_factory=list)

    def candidates(self) -> list[str]:
        """Draft rewrites plus the final text, in generation order."""
        return [*self.persona_drafts, self.malicious_text]

    def to_json(self, path: str | Path) -> None:
        doc = {
            "target_id": self.target_id,
            "mode": self.mode,
            "original_text": self.original_text,
            "malicious_text": self.malicious_text,
            "persona_drafts": self.persona_drafts,
            "transcript": [x.to_dict() for x in self.transcript],
        }
        Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1), encoding="utf-8")


_PERSONA_LINE = re.compile(r"^\s*(?:expert\s*)?\d+\s*[:.\-]\s*(\S.*)$", re.IGNORECASE)


def _parse_personas(reply: str, n: int) -> list[str]:
    found = []
    for line in reply.splitlines():
        match = _PERSONA_LINE.match(line.strip())
        if match:
            found.append(match.group(1).strip())
    while len(found) < n:
        found.append(f"a seasoned sales expert with a distinct persona ({len(found) + 1})")
    return found[:n]


def synthesize_textsimu(
    target: Item,
    ref: ReferenceSelection | None,
    keywords: KeywordSet | None,
    transport: Transport,
    model: str = "default",
    n_personas: int = 5,
    mode: str = "full",
    temperature: float = 0.8,
) -> AttackOutput:
    """Generate the malicious rewrite for one target.

    naive     one plain rewrite prompt, no reference and no keywords;
    simulate  one prompt aligning the rewrite with the reference content;
    full      persona generation, one draft per persona (concurrent up to
              the transport's in-flight cap), then a consensus call whose
              full reply becomes the malicious text.
    """
    if mode not in ("naive", "simulate", "full"):
        raise ConfigError(f"unsupported synthesis mode {mode!r}")
    if n_personas < 1:
        raise ConfigError("n_personas must be >= 1")
    original = target.assembled_text()
    if not tokenize(original):
        raise AttackError(f"target {target.item_id!r} has empty text")
    if mode in ("simulate", "full") and ref is None:
        raise UsageError(f"mode {mode!r} requires a reference selection")

    transcript: list[LlmExchange] = []

    def call(stage: str, prompt: str, temp: float) -> str:
        req = user_chat(model, prompt, temperature=temp)
        try:
            reply = chat_complete(req, transport)
        except TransportError as exc:
            raise AttackError(f"LLM call failed at stage {stage}: {exc}", transcript) from exc
        transcript.append(LlmExchange(stage, req, reply))
        return reply

    if mode == "naive":
        reply = call("naive", render(load_template("naive"), original_content=original), temperature)
        return AttackOutput(target.item_id, original, reply, mode, [], transcript)

    if mode == "simulate":
        prompt = render(
            load_template("simulate"),
            original_content=original,
            reference_content=ref.reference_text,
        )
        reply = call("simulate", prompt, temperature)
        return AttackOutput(target.item_id, original, reply, mode, [], transcript)

    keyword_line = ", ".join(keywords.tokens()) if keywords and len(keywords) else "(none)"
    if not keywords or not len(keywords):
        logger.warning("synthesizing without keywords for target %s", target.item_id)

    persona_reply = call(
        "persona_generate",
        render(load_template("persona_generate"), n=str(n_personas)),
        temperature,
    )
    personas = _parse_personas(persona_reply, n_personas)

    draft_template = load_template("persona_draft")
    draft_requests = [
        user_chat(
            model,
            render(
                draft_template,
                persona=persona,
                original_content=original,
                reference_content=ref.reference_text,
                keywords=keyword_line,
            ),
            temperature=temperature,
        )
        for persona in personas
    ]
    try:
        with transport.executor() as pool:
            drafts = list(pool.map(lambda r: chat_complete(r, transport), draft_requests))
    except TransportError as exc:
        raise AttackError(f"LLM call failed at stage persona_draft: {exc}", transcript) from exc
    for i, (req, reply) in enumerate(zip(draft_requests, drafts), start=1):
        transcript.append(LlmExchange(f"persona_draft_{i}", req, reply))

    if n_personas == 1:
        # single-candidate consensus returns the draft unchanged
        return AttackOutput(target.item_id, original, drafts[0], mode, list(drafts), transcript)

    blocks = "\n\n".join(f"Draft {i}:\n{d}" for i, d in enumerate(drafts, start=1))
    consensus = call(
        "consensus",
        render(load_template("consensus"), original_content=original, drafts=blocks),
        temperature,
    )
    return AttackOutput(target.item_id, original, consensus, mode, list(drafts), transcript)


def copycat_baseline(target: Item, catalog: Catalog, seed: int) -> AttackOutput:
    """Replace the target's text with a uniformly sampled other item's text."""
    donors = sorted(i for i in catalog.items if i != target.item_id)
    if not donors:
        raise UsageError("copycat needs at least two items")
    rng = np.random.default_rng(seed)
    donor = donors[int(rng.integers(0, len(donors)))]
    return AttackOutput(
        target.item_id,
        target.assembled_text(),
        catalog.item_text(donor),
        "copycat",
    )


def run_text_attack(
    catalog: Catalog,
    index: PopularityIndex,
    embed_cfg: EmbedConfig,
    target_id: str,
    mode: str,
    transport: Transport | None = None,
    model: str = "default",
    n_personas: int = 5,
    pool_size: int = 50,
    keyword_count: int = 20,
    llm_keyword_filter: bool = True,
    reference_choice: str = "top1",
    seed: int = 0,
    temperature: float = 0.8,
) -> AttackOutput:
    """Full per-target driver: reference selection, keyword mining/filtering
    (full mode only), then synthesis. `reference_choice` picks either the
    most similar pool item ("top1") or a seeded uniform pool sample
    ("sampled")."""
    if mode not in ATTACK_MODES:
        raise ConfigError(f"unknown attack mode {mode!r}")
    target = catalog.items[target_id]
    if mode == "copycat":
        return copycat_baseline(target, catalog, seed)
    if transport is None:
        raise ConfigError(f"mode {mode!r} requires an LLM transport")
    if mode == "naive":
        return synthesize_textsimu(
            target, None, None, transport, model, n_personas, mode, temperature
        )

    ref = select_reference(target, index, catalog, embed_cfg, m=pool_size)
    if reference_choice == "sampled":
        rng = np.random.default_rng(seed)
        ref_id = ref.pool[int(rng.integers(0, len(ref.pool)))][0]
        ref = ReferenceSelection(ref.pool, ref_id, catalog.item_text(ref_id))
    elif reference_choice != "top1":
        raise ConfigError(f"unknown reference_choice {reference_choice!r}")

    if mode == "simulate":
        return synthesize_textsimu(
            target, ref, None, transport, model, n_personas, mode, temperature
        )

    pool_texts = [catalog.item_text(item_id) for item_id, _ in ref.pool]
    raw_keywords = extract_unified_keywords(pool_texts, k=keyword_count)
    keywords, filter_exchanges = filter_keywords(
        raw_keywords, transport if llm_keyword_filter else None, model
    )
    output = synthesize_textsimu(
        target, ref, keywords, transport, model, n_personas, mode, temperature
    )
    output.transcript = filter_exchanges + output.transcript
    return output
