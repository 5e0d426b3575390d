"""Transport-abstracted client for chat completions and remote embeddings.

Three modes share one OpenAI-compatible wire format:
  live    POSTs to {base_url}/v1/chat/completions and /v1/embeddings with
          bearer auth read from an environment variable, retrying 429/5xx
          with exponential backoff;
  replay  serves recorded responses from content-addressed fixture files and
          performs zero network activity;
  record  behaves like live and additionally writes the fixture file, so a
          later replay run reproduces the exchange bit-for-bit.

Fixture layout: {fixture_dir}/{sha256-of-canonical-request}.json with the
canonical request kept alongside the response for auditability.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .errors import ConfigError, ProtocolError, ReplayMissError, TransportError

logger = logging.getLogger(__name__)

_ROLES = ("system", "user", "assistant")
_RETRYABLE = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ConfigError(f"unknown chat role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ConfigError(f"{self.role} message content must be nonempty")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ConfigError("a chat request needs at least one message")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_tokens is not None and self.max_tokens <= 0:
            raise ConfigError("max_tokens must be positive")

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def user_chat(model: str, content: str, temperature: float = 0.0) -> ChatRequest:
    """Single user-message request, the shape used by most pipeline calls."""
    return ChatRequest(model=model, messages=(ChatMessage("user", content),), temperature=temperature)


@dataclass
class Transport:
    """Where LLM exchanges go: live endpoint, fixture replay, or both."""

    mode: str = "replay"  # live | replay | record
    base_url: str | None = None
    api_key_env: str = "PROMOSIM_API_KEY"
    fixture_dir: str | Path | None = None
    max_inflight: int = 4
    max_retries: int = 3
    retry_base_delay: float = 0.2
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.mode not in ("live", "replay", "record"):
            raise ConfigError(f"unknown transport mode {self.mode!r}")
        if self.mode in ("live", "record") and not self.base_url:
            raise ConfigError(f"{self.mode} transport requires base_url")
        if self.mode in ("replay", "record") and not self.fixture_dir:
            raise ConfigError(f"{self.mode} transport requires fixture_dir")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        self._gate = threading.BoundedSemaphore(self.max_inflight)

    def executor(self) -> ThreadPoolExecutor:
        """Pool sized to the in-flight cap, for callers batching requests."""
        return ThreadPoolExecutor(max_workers=self.max_inflight)


def canonical_hash(payload: dict) -> str:
    """Stable sha256 of a request body rendered with sorted keys."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _fixture_path(transport: Transport, digest: str) -> Path:
    return Path(transport.fixture_dir) / f"{digest}.json"


def _load_fixture(transport: Transport, payload: dict) -> dict | None:
    digest = canonical_hash(payload)
    path = _fixture_path(transport, digest)
    if not path.exists():
        if transport.mode == "replay":
            raise ReplayMissError(
                f"no fixture {digest} in {transport.fixture_dir} for this request"
            )
        return None
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)["response"]


def _store_fixture(transport: Transport, payload: dict, response: dict) -> None:
    digest = canonical_hash(payload)
    path = _fixture_path(transport, digest)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        json.dump({"request": payload, "response": response}, fh, ensure_ascii=False,
                  sort_keys=True, indent=1)
    tmp.replace(path)


def _post_with_retries(transport: Transport, endpoint: str, payload: dict) -> dict:
    url = transport.base_url.rstrip("/") + endpoint
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(transport.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last_detail = "no attempt made"
    for attempt in range(transport.max_retries + 1):
        if attempt:
            time.sleep(transport.retry_base_delay * (2 ** (attempt - 1)))
            logger.info("retrying %s (attempt %d/%d)", endpoint, attempt, transport.max_retries)
        try:
            with transport._gate:
                resp = requests.post(url, json=payload, headers=headers, timeout=transport.timeout)
        except requests.RequestException as exc:
            last_detail = f"connection error: {exc}"
            continue
        if resp.status_code == 200:
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON 200 response from {url}: {exc}") from exc
        last_detail = f"status {resp.status_code}: {resp.text[:200]}"
        if resp.status_code not in _RETRYABLE:
            break
    raise TransportError(f"request to {url} failed after retries ({last_detail})")


def chat_complete(req: ChatRequest, transport: Transport) -> str:
    """Run one chat exchange and return the first choice's message content."""
    payload = req.payload()
    if transport.mode in ("replay", "record"):
        cached = _load_fixture(transport, payload)
        if cached is not None:
            return cached["content"]
    body = _post_with_retries(transport, "/v1/chat/completions", payload)
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed chat completion response: {body!r:.200}") from exc
    if not isinstance(content, str):
        raise ProtocolError("chat completion content is not a string")
    if transport.mode == "record":
        _store_fixture(transport, payload, {"content": content})
    return content


def _embed_payload(model: str, text: str) -> dict:
    return {"model": model, "input": text}


def _one_embedding(transport: Transport, model: str, text: str) -> list[float]:
    payload = _embed_payload(model, text)
    if transport.mode in ("replay", "record"):
        cached = _load_fixture(transport, payload)
        if cached is not None:
            return cached["embedding"]
    body = _post_with_retries(transport, "/v1/embeddings", payload)
    try:
        vec = body["data"][0]["embedding"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed embeddings response: {body!r:.200}") from exc
    if not isinstance(vec, list) or not all(isinstance(x, (int, float)) for x in vec):
        raise ProtocolError("embedding is not a list of numbers")
    if transport.mode == "record":
        _store_fixture(transport, payload, {"embedding": vec})
    return vec


def embed_remote(texts: list[str], transport: Transport, model: str = "embedding") -> list[np.ndarray]:
    """Fetch one vector per input text, order preserved, L2-normalized on
    receipt. Issues one request per text, never exceeding max_inflight."""
    if not texts:
        return []
    with transport.executor() as pool:
        raw = list(pool.map(lambda t: _one_embedding(transport, model, t), texts))
    dims = {len(v) for v in raw}
    if len(dims) != 1:
        raise ProtocolError(f"inconsistent embedding dimensions in batch: {sorted(dims)}")
    out = []
    for vec in raw:
        arr = np.asarray(vec, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm > 0:
            arr = arr / norm
        out.append(arr)
    return out
