"""Item/interaction corpus: loading, validation, splitting, popularity index.

File formats (one JSON object per line, UTF-8, unknown keys ignored):
    items JSONL:        {"item_id": str, "title": str, "brand": str|null,
                         "category": str|null, "description": str}
    interactions JSONL: {"user_id": str, "item_id": str, "timestamp": int}
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass
class Item:
    item_id: str
    title: str
    description: str
    brand: str | None = None
    category: str | None = None
    interaction_count: int = 0

    def assembled_text(self) -> str:
        """Item text used everywhere downstream: title, brand, category,
        description, space-joined with empty fields skipped."""
        parts = [self.title, self.brand, self.category, self.description]
        return " ".join(p.strip() for p in parts if p and p.strip())


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int


@dataclass
class Catalog:
    items: dict[str, Item]
    interactions: list[Interaction]
    users: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        self.users = {x.user_id for x in self.interactions}
        counts: dict[str, int] = {}
        for x in self.interactions:
            counts[x.item_id] = counts.get(x.item_id, 0) + 1
        for item in self.items.values():
            item.interaction_count = counts.get(item.item_id, 0)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_interactions(self) -> int:
        return len(self.interactions)

    def item_text(self, item_id: str) -> str:
        return self.items[item_id].assembled_text()

    def by_user(self) -> dict[str, list[Interaction]]:
        """Interactions grouped per user, chronologically sorted
        (ties broken by item_id)."""
        grouped: dict[str, list[Interaction]] = {}
        for x in self.interactions:
            grouped.setdefault(x.user_id, []).append(x)
        for seq in grouped.values():
            seq.sort(key=lambda x: (x.timestamp, x.item_id))
        return grouped


@dataclass
class DataSplit:
    train: list[Interaction]
    valid: list[Interaction]
    test: list[Interaction]

    def train_by_user(self) -> dict[str, list[Interaction]]:
        grouped: dict[str, list[Interaction]] = {}
        for x in self.train:
            grouped.setdefault(x.user_id, []).append(x)
        for seq in grouped.values():
            seq.sort(key=lambda x: (x.timestamp, x.item_id))
        return grouped

    def seen_in_train(self) -> dict[str, set[str]]:
        seen: dict[str, set[str]] = {}
        for x in self.train:
            seen.setdefault(x.user_id, set()).add(x.item_id)
        return seen

    def with_extra_train(self, extra: Sequence[Interaction]) -> "DataSplit":
        """New split with forged interactions appended to train only."""
        return DataSplit(self.train + list(extra), list(self.valid), list(self.test))


@dataclass
class PopularityIndex:
    ranked_items: list[str]
    popular_set: list[str]
    unpopular_pool: list[str]

    def is_popular(self, item_id: str) -> bool:
        return item_id in self._popular_lookup

    def __post_init__(self) -> None:
        self._popular_lookup = set(self.popular_set)


def _parse_jsonl(path: str | Path, required: Mapping[str, type]) -> Iterable[tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON line ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            for key, typ in required.items():
                if key not in obj:
                    raise DataError(f"{path}:{lineno}: missing required key {key!r}")
                if not isinstance(obj[key], typ):
                    raise DataError(
                        f"{path}:{lineno}: key {key!r} must be {typ.__name__}, "
                        f"got {type(obj[key]).__name__}"
                    )
            yield lineno, obj


def ingest_catalog(items_path: str | Path, interactions_path: str | Path) -> Catalog:
    """Load and validate the corpus; every interaction must resolve to an item."""
    items: dict[str, Item] = {}
    for lineno, obj in _parse_jsonl(items_path, {"item_id": str, "title": str, "description": str}):
        item_id = obj["item_id"]
        if item_id in items:
            raise DataError(f"{items_path}:{lineno}: duplicate item_id {item_id!r}")
        brand = obj.get("brand")
        category = obj.get("category")
        if brand is not None and not isinstance(brand, str):
            raise DataError(f"{items_path}:{lineno}: brand must be a string or null")
        if category is not None and not isinstance(category, str):
            raise DataError(f"{items_path}:{lineno}: category must be a string or null")
        item = Item(item_id, obj["title"], obj["description"], brand, category)
        if not item.assembled_text():
            raise DataError(f"{items_path}:{lineno}: item {item_id!r} has empty assembled text")
        items[item_id] = item

    interactions: list[Interaction] = []
    for lineno, obj in _parse_jsonl(
        interactions_path, {"user_id": str, "item_id": str, "timestamp": int}
    ):
        if obj["timestamp"] < 0:
            raise DataError(f"{interactions_path}:{lineno}: negative timestamp")
        if obj["item_id"] not in items:
            raise DataError(
                f"{interactions_path}:{lineno}: interaction references unknown item "
                f"{obj['item_id']!r} (user {obj['user_id']!r})"
            )
        interactions.append(Interaction(obj["user_id"], obj["item_id"], obj["timestamp"]))

    return Catalog(items=items, interactions=interactions)


def write_catalog(catalog: Catalog, items_path: str | Path, interactions_path: str | Path) -> None:
    """Serialize back to the JSONL formats accepted by ingest_catalog."""
    with Path(items_path).open("w", encoding="utf-8") as fh:
        for item_id in sorted(catalog.items):
            item = catalog.items[item_id]
            fh.write(
                json.dumps(
                    {
                        "item_id": item.item_id,
                        "title": item.title,
                        "brand": item.brand,
                        "category": item.category,
                        "description": item.description,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    with Path(interactions_path).open("w", encoding="utf-8") as fh:
        for x in catalog.interactions:
            fh.write(
                json.dumps(
                    {"user_id": x.user_id, "item_id": x.item_id, "timestamp": x.timestamp},
                    ensure_ascii=False,
                )
                + "\n"
            )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def chronological_split(
    catalog: Catalog, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
) -> DataSplit:
    """Per-user chronological train/valid/test partition.

    Part sizes are round-half-up of ratio*n, with any rounding residual
    absorbed by the train part. Users with fewer than 3 interactions are
    placed entirely in train.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"need three nonnegative ratios, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios!r}")

    train: list[Interaction] = []
    valid: list[Interaction] = []
    test: list[Interaction] = []
    grouped = catalog.by_user()
    for user_id in sorted(grouped):
        seq = grouped[user_id]
        n = len(seq)
        if n < 3:
            train.extend(seq)
            continue
        counts = [_round_half_up(r * n) for r in ratios]
        counts[0] += n - sum(counts)
        if counts[0] < 0:  # pathological ratios; rebalance from the tail parts
            deficit = -counts[0]
            counts[0] = 0
            take = min(deficit, counts[1])
            counts[1] -= take
            counts[2] -= deficit - take
        train.extend(seq[: counts[0]])
        valid.extend(seq[counts[0] : counts[0] + counts[1]])
        test.extend(seq[counts[0] + counts[1] :])
    return DataSplit(train, valid, test)


def popularity_partition(catalog: Catalog) -> PopularityIndex:
    """Rank items by interaction count (ties by item_id ascending);
    popular set is the top ceil(10%)."""
    if not catalog.items:
        raise ConfigError("cannot build a popularity index over an empty catalog")
    ranked = sorted(catalog.items, key=lambda i: (-catalog.items[i].interaction_count, i))
    cut = math.ceil(0.1 * len(ranked))
    return PopularityIndex(ranked, ranked[:cut], ranked[cut:])


def exposure_counts(
    reclists: Mapping[str, Sequence[str]] | Iterable[Mapping[str, Sequence[str]]],
) -> dict[str, int]:
    """Number of users whose top-K list contains each item. Accepts a single
    reclist mapping or several (exposures are summed across them)."""
    if isinstance(reclists, Mapping):
        reclists = [reclists]
    counts: dict[str, int] = {}
    for mapping in reclists:
        for items in mapping.values():
            for item_id in items:
                counts[item_id] = counts.get(item_id, 0) + 1
    return counts


def select_targets(
    index: PopularityIndex,
    baseline_reclists: Mapping[str, Sequence[str]] | Iterable[Mapping[str, Sequence[str]]],
    n: int,
    seed: int,
) -> list[str]:
    """Sample n attack targets from the unpopular pool, restricted to items
    with zero baseline exposure; falls back to lowest-exposure items when the
    zero-exposure pool is too small (the fallback is logged)."""
    if n < 0:
        raise ConfigError(f"target count must be nonnegative, got {n}")
    if n > len(index.unpopular_pool):
        raise ConfigError(
            f"requested {n} targets but the unpopular pool has only "
            f"{len(index.unpopular_pool)} items"
        )
    if n == 0:
        return []
    exposure = exposure_counts(baseline_reclists)
    eligible = sorted(i for i in index.unpopular_pool if exposure.get(i, 0) == 0)
    rng = np.random.default_rng(seed)
    if len(eligible) >= n:
        picked = rng.choice(len(eligible), size=n, replace=False)
        return [eligible[i] for i in picked]
    rest = sorted(
        (i for i in index.unpopular_pool if exposure.get(i, 0) > 0),
        key=lambda i: (exposure[i], i),
    )
    chosen = eligible + rest[: n - len(eligible)]
    logger.warning(
        "only %d zero-exposure unpopular items; padded to %d with lowest-exposure items",
        len(eligible),
        n,
    )
    return chosen
