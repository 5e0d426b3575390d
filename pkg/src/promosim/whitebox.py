"""White-box target-rank promotion in embedding space.

A capped-margin ranking objective sums, over eligible users, how far the
target's representation scores above the weakest non-target item in that
user's current top-K list (capped at the margin, so nothing is gained once
the target safely surpasses it). The target vector is optimized by projected
gradient ascent on the unit sphere, alternating with an anchor step that
pulls toward the popular-item centroid, and the result re-ranks the
black-box rewrite candidates.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import OptimizationError, UsageError
from .recommender import ItemMatrix

logger = logging.getLogger(__name__)


@dataclass
class CwConfig:
    margin: float = 0.01
    step_size: float = 0.05
    iterations: int = 200
    anchor_weight: float = 0.1
    alternation_period: int = 10

    def __post_init__(self) -> None:
        if self.step_size < 0:
            raise UsageError("step size must be >= 0")
        if self.iterations < 1:
            raise UsageError("iteration count must be >= 1")
        if self.anchor_weight < 0:
            raise UsageError("anchor weight must be >= 0")
        if self.alternation_period < 1:
            raise UsageError("alternation period must be >= 1")


@dataclass
class OptimizedTarget:
    vector: np.ndarray
    trajectory: list[float] = field(default_factory=list)
    eligible_user_count: int = 0


def _contributors(
    profiles: Mapping[str, np.ndarray],
    reclists: Mapping[str, Sequence[str]],
    item_reps: ItemMatrix,
    targets: Sequence[str],
) -> tuple[np.ndarray, np.ndarray]:
    """Stack (profile, weakest non-target rec score) for every contributing
    user; users with an empty list or a targets-only list are skipped."""
    target_set = set(targets)
    rows, weakest = [], []
    for user_id in sorted(profiles):
        rec = [i for i in reclists.get(user_id, ()) if i not in target_set]
        if not rec:
            continue
        z_u = profiles[user_id]
        rows.append(z_u)
        weakest.append(min(float(z_u @ item_reps.row(i)) for i in rec))
    if not rows:
        return np.zeros((0, item_reps.dimension)), np.zeros(0)
    return np.stack(rows), np.asarray(weakest)


def cw_objective(
    z_t: np.ndarray,
    profiles: Mapping[str, np.ndarray],
    reclists: Mapping[str, Sequence[str]],
    item_reps: ItemMatrix,
    targets: Sequence[str],
    margin: float = 0.01,
) -> float:
    """Sum over users of min(z_u.z_t - weakest_rec_score, margin)."""
    P, w = _contributors(profiles, reclists, item_reps, targets)
    if z_t.shape[0] != item_reps.dimension:
        raise UsageError(f"target vector has dimension {z_t.shape[0]}, expected {item_reps.dimension}")
    if not len(P):
        return 0.0
    gaps = P @ z_t - w
    return float(np.minimum(gaps, margin).sum())


def cw_gradient(
    z_t: np.ndarray,
    profiles: Mapping[str, np.ndarray],
    reclists: Mapping[str, Sequence[str]],
    item_reps: ItemMatrix,
    targets: Sequence[str],
    margin: float = 0.01,
) -> np.ndarray:
    """Subgradient of cw_objective: the sum of profiles of users still below
    the margin (the weakest-item choice is held fixed at the current point)."""
    P, w = _contributors(profiles, reclists, item_reps, targets)
    if z_t.shape[0] != item_reps.dimension:
        raise UsageError(f"target vector has dimension {z_t.shape[0]}, expected {item_reps.dimension}")
    if not len(P):
        return np.zeros(item_reps.dimension)
    active = (P @ z_t - w) < margin
    return P[active].sum(axis=0) if active.any() else np.zeros(item_reps.dimension)


def _project(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0 else v


def optimize_target_vector(
    init: np.ndarray,
    cfg: CwConfig,
    profiles: Mapping[str, np.ndarray],
    reclists: Mapping[str, Sequence[str]],
    item_reps: ItemMatrix,
    targets: Sequence[str],
    popular_centroid: np.ndarray,
) -> OptimizedTarget:
    """Projected gradient ascent on the unit sphere, alternating every
    `alternation_period` iterations between the ranking gradient and the
    anchor pull toward the popular centroid; returns the best iterate by
    ranking objective with the per-iteration objective trajectory."""
    P, w = _contributors(profiles, reclists, item_reps, targets)

    def objective(z: np.ndarray) -> float:
        if not len(P):
            return 0.0
        return float(np.minimum(P @ z - w, cfg.margin).sum())

    def gradient(z: np.ndarray) -> np.ndarray:
        if not len(P):
            return np.zeros_like(z)
        active = (P @ z - w) < cfg.margin
        return P[active].sum(axis=0) if active.any() else np.zeros_like(z)

    z = _project(np.array(init, dtype=np.float64))
    best_z, best_obj = z.copy(), objective(z)
    trajectory: list[float] = []
    for it in range(cfg.iterations):
        if (it // cfg.alternation_period) % 2 == 0:
            step = gradient(z)
        else:
            step = cfg.anchor_weight * popular_centroid
        z = _project(z + cfg.step_size * step)
        if not np.all(np.isfinite(z)):
            raise OptimizationError(f"non-finite iterate at iteration {it}")
        obj = objective(z)
        trajectory.append(obj)
        if obj > best_obj:
            best_obj, best_z = obj, z.copy()
    return OptimizedTarget(best_z, trajectory, eligible_user_count=len(P))


@dataclass
class WhiteboxChoice:
    text: str
    index: int
    similarity: float


def whitebox_select(
    candidates: Sequence[str],
    optimized: OptimizedTarget,
    embed_fn: Callable[[str], np.ndarray],
) -> WhiteboxChoice:
    """Pick the candidate text whose embedding is most similar to the
    optimized vector (ties keep the earliest candidate)."""
    if not candidates:
        raise UsageError("whitebox selection needs at least one candidate")
    best = WhiteboxChoice(candidates[0], 0, -np.inf)
    for i, text in enumerate(candidates):
        vec = embed_fn(text)
        denom = float(np.linalg.norm(vec)) * float(np.linalg.norm(optimized.vector))
        sim = float(vec @ optimized.vector) / denom if denom > 0 else 0.0
        if sim > best.similarity:
            best = WhiteboxChoice(text, i, sim)
    return best


def export_trajectory_csv(optimized: OptimizedTarget, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective"])
        for i, value in enumerate(optimized.trajectory):
            writer.writerow([i, f"{value:.10g}"])
