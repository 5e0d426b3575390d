"""Deterministic feature-hashing text encoder and vector utilities.

Stands in for a language-model encoder so the whole pipeline runs offline
and reproducibly: word n-grams are hashed into a fixed number of signed
buckets and the result is L2-normalized. Identical (text, config) pairs
always produce bitwise-identical vectors, on any platform.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, UsageError

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Norm below which a vector is treated as the flagged empty-text vector.
ZERO_NORM_EPS = 1e-12


def tokenize(text: str) -> list[str]:
    """Lowercase and split into alphanumeric word tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class EmbedConfig:
    """Parameters of the hashing encoder."""

    dimension: int = 256
    ngram_min: int = 1
    ngram_max: int = 2
    hash_seed: int = 0

    def __post_init__(self) -> None:
        if self.dimension < 8:
            raise ConfigError(f"embedding dimension must be >= 8, got {self.dimension}")
        if self.ngram_min < 1 or self.ngram_max < self.ngram_min:
            raise ConfigError(
                f"invalid n-gram range ({self.ngram_min}, {self.ngram_max})"
            )


def _hash64(ngram: str, seed: int) -> int:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


@lru_cache(maxsize=65536)
def _embed_cached(text: str, cfg: EmbedConfig) -> np.ndarray:
    values = np.zeros(cfg.dimension, dtype=np.float64)
    tokens = tokenize(text)
    for n in range(cfg.ngram_min, cfg.ngram_max + 1):
        for i in range(len(tokens) - n + 1):
            h = _hash64(" ".join(tokens[i : i + n]), cfg.hash_seed)
            sign = 1.0 if h & 1 == 0 else -1.0  # parity bit carries the sign
            values[(h >> 1) % cfg.dimension] += sign
    norm = float(np.linalg.norm(values))
    if norm > ZERO_NORM_EPS:
        values /= norm
    values.setflags(write=False)
    return values


def embed_text(text: str, cfg: EmbedConfig | None = None) -> np.ndarray:
    """Encode text into a unit-norm vector; empty text yields the zero vector.

    The returned array is read-only (vectors are cached); copy before mutating.
    """
    return _embed_cached(text, cfg or EmbedConfig())


def is_empty_vector(v: np.ndarray) -> bool:
    """True for the flagged zero vector produced only for empty text."""
    return float(np.linalg.norm(v)) <= ZERO_NORM_EPS


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; pairs involving a zero vector score 0."""
    if u.shape != v.shape:
        raise UsageError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= ZERO_NORM_EPS or nv <= ZERO_NORM_EPS:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
