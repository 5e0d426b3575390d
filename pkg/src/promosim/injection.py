"""Injection-poisoning baselines: forged user profiles carrying the targets.

Random forgeries pad the targets with uniformly sampled non-target items;
bandwagon forgeries pad with uniformly sampled popular items. Forged
interactions are meant to be appended to the train split only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Catalog, DataSplit, Interaction, PopularityIndex
from .errors import ConfigError
from .recommender import FORGED_PREFIX

INJECTION_KINDS = ("random", "bandwagon")
MAX_ATTACK_SIZE = 0.05  # guardrail; realistic injection budgets stay below this


@dataclass
class ForgedProfile:
    user_id: str  # namespaced "forged::" so it can never collide with real ids
    interactions: list[Interaction]


def _average_interaction_count(catalog: Catalog) -> int:
    if not catalog.users:
        return 1
    return int(math.floor(len(catalog.interactions) / len(catalog.users) + 0.5))


def forge_profiles(
    kind: str,
    attack_size: float,
    catalog: Catalog,
    index: PopularityIndex,
    targets: list[str],
    seed: int,
    split: DataSplit | None = None,
    targets_last: bool = True,
) -> list[ForgedProfile]:
    """Build ceil(attack_size * |users|) forged profiles, each containing
    every target exactly once plus filler items up to the average normal-user
    interaction count (at least one filler). Timestamps sit at the train
    period's end; targets come last unless targets_last is False (then the
    whole profile order is shuffled)."""
    if kind not in INJECTION_KINDS:
        raise ConfigError(f"unknown injection kind {kind!r}")
    if not (0.0 <= attack_size <= MAX_ATTACK_SIZE):
        raise ConfigError(
            f"attack size must lie in [0, {MAX_ATTACK_SIZE}], got {attack_size}"
        )
    if not targets:
        raise ConfigError("injection needs a nonempty target list")
    if attack_size == 0.0:
        return []

    target_set = set(targets)
    if kind == "bandwagon":
        filler_pool = sorted(i for i in index.popular_set if i not in target_set)
    else:
        filler_pool = sorted(i for i in catalog.items if i not in target_set)
    if not filler_pool:
        raise ConfigError("no filler items available outside the target set")

    total = max(_average_interaction_count(catalog), len(targets) + 1)
    n_filler = total - len(targets)
    n_profiles = math.ceil(attack_size * len(catalog.users))
    base_ts = max(
        (x.timestamp for x in (split.train if split is not None else catalog.interactions)),
        default=0,
    )

    rng = np.random.default_rng(seed)
    profiles = []
    for p in range(n_profiles):
        user_id = f"{FORGED_PREFIX}{p:04d}"
        fillers = [filler_pool[int(j)] for j in rng.integers(0, len(filler_pool), size=n_filler)]
        ordered = fillers + sorted(targets)
        if not targets_last:
            ordered = [ordered[int(j)] for j in rng.permutation(len(ordered))]
        interactions = [
            Interaction(user_id, item_id, base_ts + 1 + i) for i, item_id in enumerate(ordered)
        ]
        profiles.append(ForgedProfile(user_id, interactions))
    return profiles


def forged_interactions(profiles: list[ForgedProfile]) -> list[Interaction]:
    return [x for profile in profiles for x in profile.interactions]


def write_profiles_jsonl(profiles: list[ForgedProfile], path: str | Path) -> None:
    """Serialize to the standard interactions JSONL, consumable unchanged."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for x in forged_interactions(profiles):
            fh.write(
                json.dumps(
                    {"user_id": x.user_id, "item_id": x.item_id, "timestamp": x.timestamp}
                )
                + "\n"
            )
