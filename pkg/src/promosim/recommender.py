"""Desk-scale text-driven recommender.

Items are represented by hashed text vectors, optionally mapped through a
trained square adaptor matrix; users by recency-decayed pooling of the item
vectors they interacted with in train. Scoring is a plain dot product and
the headline metric is Hit Ratio@K (fraction of users whose top-K list
contains at least one target item).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Catalog, DataSplit
from .embedder import ZERO_NORM_EPS, EmbedConfig, embed_text
from .errors import ConfigError, TrainingError, UsageError

logger = logging.getLogger(__name__)

FORGED_PREFIX = "forged::"


@dataclass
class ItemMatrix:
    """Row-per-item matrix aligned to a stable (sorted) item-id ordering."""

    item_ids: list[str]
    matrix: np.ndarray  # (n_items, d), rows unit-norm or flagged zero
    index: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        if self.matrix.shape[0] != len(self.item_ids):
            raise UsageError("item matrix row count does not match id list")
        self.index = {item_id: i for i, item_id in enumerate(self.item_ids)}

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def row(self, item_id: str) -> np.ndarray:
        return self.matrix[self.index[item_id]]


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 20
    negatives: int = 1
    batch_size: int = 128
    decay: float = 0.9
    weight_decay: float = 0.05  # ridge pull toward identity, applied per batch
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.epochs < 0 or self.negatives < 1:
            raise ConfigError("invalid adaptor training hyperparameters")
        if not (0.0 < self.decay <= 1.0):
            raise ConfigError("decay must lie in (0, 1]")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass
class AdaptorParams:
    matrix: np.ndarray  # (d, d)
    config: TrainConfig
    epoch_losses: list[float] = field(default_factory=list)


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms > ZERO_NORM_EPS, norms, 1.0)
    return mat / safe


def apply_adaptor(vec: np.ndarray, adaptor: AdaptorParams | None) -> np.ndarray:
    """Map a raw embedding through the adaptor and re-normalize."""
    if adaptor is None:
        return vec
    out = adaptor.matrix @ vec
    norm = float(np.linalg.norm(out))
    return out / norm if norm > ZERO_NORM_EPS else out


def build_item_reps(
    catalog: Catalog,
    cfg: EmbedConfig,
    adaptor: AdaptorParams | None = None,
    overrides: Mapping[str, str] | None = None,
) -> ItemMatrix:
    """Embed every item's assembled text (or its override, the attack's entry
    point); adapted rows are re-normalized."""
    overrides = overrides or {}
    unknown = set(overrides) - set(catalog.items)
    if unknown:
        raise UsageError(f"overrides reference unknown items: {sorted(unknown)[:5]}")
    item_ids = sorted(catalog.items)
    rows = np.stack(
        [
            embed_text(overrides.get(i, catalog.items[i].assembled_text()), cfg)
            for i in item_ids
        ]
    )
    if adaptor is not None:
        rows = _normalize_rows(rows @ adaptor.matrix.T)
    return ItemMatrix(item_ids, rows)


def pairwise_loss_and_grad(
    W: np.ndarray, users: np.ndarray, pos: np.ndarray, neg: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean pairwise ranking loss -log sigmoid(u'W(p-n)) over a batch and its
    gradient with respect to W."""
    diff = pos - neg
    x = np.einsum("bi,ij,bj->b", users, W, diff)
    loss = float(np.mean(np.logaddexp(0.0, -x)))  # softplus(-x)
    coeff = 1.0 / (1.0 + np.exp(x))  # sigmoid(-x)
    grad = -(users * coeff[:, None]).T @ diff / len(x)
    return loss, grad


def _profile_vectors(
    split: DataSplit, item_reps: ItemMatrix, decay: float
) -> dict[str, np.ndarray]:
    profiles: dict[str, np.ndarray] = {}
    for user_id, seq in sorted(split.train_by_user().items()):
        acc = np.zeros(item_reps.dimension)
        for age, x in enumerate(reversed(seq)):  # most recent first, age 0
            acc += (decay**age) * item_reps.row(x.item_id)
        norm = float(np.linalg.norm(acc))
        if norm <= ZERO_NORM_EPS:
            logger.info("user %s has a degenerate (zero) profile; omitted", user_id)
            continue
        profiles[user_id] = acc / norm
    return profiles


def build_user_profiles(
    split: DataSplit, item_reps: ItemMatrix, decay: float = 0.9
) -> dict[str, np.ndarray]:
    """Unit-norm recency-decayed pooling of each user's train items; users
    with no train interactions are omitted (logged)."""
    if not (0.0 < decay <= 1.0):
        raise ConfigError("decay must lie in (0, 1]")
    by_user = split.train_by_user()
    profiles = _profile_vectors(split, item_reps, decay)
    missing = set(by_user) - set(profiles)
    if missing:
        logger.info("%d users omitted from profiles", len(missing))
    return profiles


def _sample_negative(rng: np.random.Generator, n_items: int, seen: set[int]) -> int:
    for _ in range(100):
        cand = int(rng.integers(0, n_items))
        if cand not in seen:
            return cand
    return int(rng.integers(0, n_items))  # saturated user; accept anything


def train_adaptor(split: DataSplit, item_reps: ItemMatrix, hyper: TrainConfig) -> AdaptorParams:
    """Train the square adaptor by mini-batch SGD on pairwise ranking triples
    (user profile, train positive, sampled negative).

    Interactions of forged users (ids prefixed "forged::") are processed as
    their own block at the end of each epoch, with their own RNG streams, so
    the real-user triple stream of an injection variant is identical to the
    clean run's (paired comparisons across variants).
    """
    if not split.train:
        raise TrainingError("train split is empty")
    W = np.eye(item_reps.dimension)
    params = AdaptorParams(W, hyper)
    if hyper.epochs == 0 or hyper.learning_rate == 0.0:
        return params

    profiles = _profile_vectors(split, item_reps, hyper.decay)
    seen: dict[str, set[int]] = {}
    for x in split.train:
        seen.setdefault(x.user_id, set()).add(item_reps.index[x.item_id])

    n_items = len(item_reps.item_ids)

    def build_triples(
        pairs: list[tuple[str, str]], neg_rng: np.random.Generator
    ) -> list[tuple[np.ndarray, int, int]]:
        """Fixed (profile, positive, sampled-negative) triples; the negative
        is drawn once per triple so epochs revisit a stable training set."""
        triples = []
        for u, i in pairs:
            if u not in profiles:
                continue
            pos_idx = item_reps.index[i]
            for _ in range(hyper.negatives):
                triples.append((profiles[u], pos_idx, _sample_negative(neg_rng, n_items, seen[u])))
        return triples

    rng_order = np.random.default_rng(hyper.seed)
    rng_forged_order = np.random.default_rng(hyper.seed + 0xF0F0)
    base = build_triples(
        [(x.user_id, x.item_id) for x in split.train if not x.user_id.startswith(FORGED_PREFIX)],
        np.random.default_rng(hyper.seed + 0x5EED),
    )
    forged = build_triples(
        [(x.user_id, x.item_id) for x in split.train if x.user_id.startswith(FORGED_PREFIX)],
        np.random.default_rng(hyper.seed + 0xFA11),
    )

    eye = np.eye(item_reps.dimension)

    def run_block(triples, order_rng) -> tuple[float, int]:
        total, count = 0.0, 0
        order = order_rng.permutation(len(triples))
        for start in range(0, len(order), hyper.batch_size):
            chunk = [triples[j] for j in order[start : start + hyper.batch_size]]
            users = np.stack([p for p, _, _ in chunk])
            pos = item_reps.matrix[[i for _, i, _ in chunk]]
            neg = item_reps.matrix[[n for _, _, n in chunk]]
            loss, grad = pairwise_loss_and_grad(params.matrix, users, pos, neg)
            scale = len(chunk) / hyper.batch_size
            params.matrix -= hyper.learning_rate * (
                grad * len(chunk) + hyper.weight_decay * scale * (params.matrix - eye)
            )
            total += loss * len(chunk)
            count += len(chunk)
        return total, count

    for epoch in range(hyper.epochs):
        total, count = run_block(base, rng_order)
        if forged:
            t2, c2 = run_block(forged, rng_forged_order)
            total, count = total + t2, count + c2
        if count == 0:
            raise TrainingError("no usable training triples (all users omitted)")
        avg = total / count
        if not np.isfinite(avg) or not np.all(np.isfinite(params.matrix)):
            raise TrainingError(f"training diverged at epoch {epoch}")
        if params.epoch_losses and avg > params.epoch_losses[-1] * 1.05:
            logger.warning(
                "epoch %d loss %.5f exceeds previous by >5%% (%.5f)",
                epoch, avg, params.epoch_losses[-1],
            )
        params.epoch_losses.append(avg)
    return params


def recommend_topk(
    profiles: Mapping[str, np.ndarray],
    item_reps: ItemMatrix,
    k: int = 50,
    seen: Mapping[str, set[str]] | None = None,
    exclude_seen: bool = True,
) -> dict[str, list[str]]:
    """Per user, score every eligible item by dot product and return the top-k
    ids (score descending, ties by item_id ascending)."""
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    seen = seen or {}
    ids = item_reps.item_ids
    out: dict[str, list[str]] = {}
    for user_id in sorted(profiles):
        scores = item_reps.matrix @ profiles[user_id]
        if exclude_seen and user_id in seen:
            for item_id in seen[user_id]:
                idx = item_reps.index.get(item_id)
                if idx is not None:
                    scores[idx] = -np.inf
        eligible = int(np.sum(scores > -np.inf))
        take = min(k, eligible)
        if take == 0:
            out[user_id] = []
            continue
        if eligible > take:
            part = np.argpartition(-scores, take - 1)[:take]
            floor = scores[part].min()
            cand = np.flatnonzero(scores >= floor)
        else:
            cand = np.flatnonzero(scores > -np.inf)
        ranked = sorted(cand, key=lambda i: (-scores[i], ids[i]))[:take]
        out[user_id] = [ids[i] for i in ranked]
    return out


def hit_ratio_at_k(reclists: Mapping[str, Sequence[str]], targets: Sequence[str]) -> float:
    """Fraction of users whose list contains at least one target item."""
    if not targets:
        raise UsageError("hit_ratio_at_k needs a nonempty target list")
    if not reclists:
        return 0.0
    target_set = set(targets)
    hits = sum(1 for items in reclists.values() if target_set.intersection(items))
    return hits / len(reclists)


def per_target_exposure(
    reclists: Mapping[str, Sequence[str]], targets: Sequence[str]
) -> dict[str, float]:
    """Per-target fraction of users exposed, reported alongside the headline
    any-target Hit Ratio@K."""
    if not reclists:
        return {t: 0.0 for t in targets}
    out = {}
    for t in targets:
        out[t] = sum(1 for items in reclists.values() if t in items) / len(reclists)
    return out


@dataclass
class RecommenderSnapshot:
    """Frozen model state the defense re-runs against: item matrix, profiles,
    train-seen sets, the embedding config and adaptor used to re-embed texts,
    and each item's current (possibly overridden) full text."""

    item_reps: ItemMatrix
    profiles: dict[str, np.ndarray]
    seen: dict[str, set[str]]
    k: int
    embed_cfg: EmbedConfig
    adaptor: AdaptorParams | None
    texts: dict[str, str]

    def __post_init__(self) -> None:
        self._users = sorted(self.profiles)
        self._P = (
            np.stack([self.profiles[u] for u in self._users])
            if self._users
            else np.zeros((0, self.item_reps.dimension))
        )
        self._S = self._P @ self.item_reps.matrix.T
        self._seen_mask = np.zeros(self._S.shape, dtype=bool)
        for ui, u in enumerate(self._users):
            for item_id in self.seen.get(u, ()):
                idx = self.item_reps.index.get(item_id)
                if idx is not None:
                    self._seen_mask[ui, idx] = True
        self._ids_arr = np.array(self.item_reps.item_ids)

    @property
    def n_users(self) -> int:
        return len(self._users)

    def embed_item_text(self, text: str) -> np.ndarray:
        return apply_adaptor(embed_text(text, self.embed_cfg), self.adaptor)

    def recnum(self, item_id: str, text: str | None = None) -> int:
        """Number of users whose top-k contains the item when its row is
        re-embedded from `text` (current text when None)."""
        if item_id not in self.item_reps.index:
            raise UsageError(f"unknown item {item_id!r}")
        if self.n_users == 0:
            return 0
        j = self.item_reps.index[item_id]
        vec = self.item_reps.matrix[j] if text is None else self.embed_item_text(text)
        own = self._P @ vec  # (users,)
        less_than_j = self._ids_arr < self._ids_arr[j]  # tie-break by item id
        better = (self._S > own[:, None]) | ((self._S == own[:, None]) & less_than_j[None, :])
        better &= ~self._seen_mask
        better[:, j] = False
        counts = better.sum(axis=1)
        eligible = ~self._seen_mask[:, j]
        return int(np.sum(eligible & (counts < self.k)))

    def to_json(self, path: str | Path) -> None:
        doc = {
            "k": self.k,
            "embed_cfg": {
                "dimension": self.embed_cfg.dimension,
                "ngram_min": self.embed_cfg.ngram_min,
                "ngram_max": self.embed_cfg.ngram_max,
                "hash_seed": self.embed_cfg.hash_seed,
            },
            "item_ids": self.item_reps.item_ids,
            "item_matrix": self.item_reps.matrix.tolist(),
            "profiles": {u: v.tolist() for u, v in sorted(self.profiles.items())},
            "seen": {u: sorted(s) for u, s in sorted(self.seen.items())},
            "adaptor": None if self.adaptor is None else self.adaptor.matrix.tolist(),
            "texts": self.texts,
        }
        Path(path).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "RecommenderSnapshot":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = EmbedConfig(**doc["embed_cfg"])
        adaptor = None
        if doc["adaptor"] is not None:
            adaptor = AdaptorParams(np.asarray(doc["adaptor"], dtype=np.float64), TrainConfig())
        return cls(
            item_reps=ItemMatrix(doc["item_ids"], np.asarray(doc["item_matrix"], dtype=np.float64)),
            profiles={u: np.asarray(v, dtype=np.float64) for u, v in doc["profiles"].items()},
            seen={u: set(s) for u, s in doc["seen"].items()},
            k=doc["k"],
            embed_cfg=cfg,
            adaptor=adaptor,
            texts=doc["texts"],
        )
