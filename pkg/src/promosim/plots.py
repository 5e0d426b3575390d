"""Figure rendering for experiment reports (PNG files next to the CSVs)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_variant_bars(
    variant_rows: Sequence[Mapping], path: str | Path, k: int = 50
) -> None:
    """Grouped pre/post Hit Ratio bars, one group per attack variant."""
    names = [row["name"] for row in variant_rows]
    pre = [row["pre_hit_ratio"] for row in variant_rows]
    post = [row["post_hit_ratio"] for row in variant_rows]
    x = range(len(names))
    fig, ax = plt.subplots(figsize=(max(6, 1.4 * len(names)), 4))
    ax.bar([i - 0.18 for i in x], pre, width=0.36, label="before attack", color="#7a9cc6")
    ax.bar([i + 0.18 for i in x], post, width=0.36, label="after attack", color="#c0504d")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel(f"Hit Ratio@{k}")
    ax.set_title("Target exposure before vs after attack (seed average)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_target_exposure(
    per_target: Mapping[str, float], variant_name: str, path: str | Path, k: int = 50
) -> None:
    """Per-target post-attack exposure for one variant."""
    targets = sorted(per_target)
    values = [per_target[t] for t in targets]
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(targets)), 4))
    ax.bar(range(len(targets)), values, color="#4f81bd")
    ax.set_xticks(range(len(targets)))
    ax.set_xticklabels(targets, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel(f"fraction of users exposed (top-{k})")
    ax.set_title(f"Per-target exposure after {variant_name}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_detection_scatter(
    rows: Sequence[Mapping], beta: float, threshold: float, path: str | Path
) -> None:
    """Detection scores with the decision boundary s_a + beta*s_r = threshold."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for truth, color in (("benign", "#4f81bd"), ("malicious", "#c0504d")):
        xs = [r["s_a"] for r in rows if r["truth"] == truth]
        ys = [r["s_r"] for r in rows if r["truth"] == truth]
        ax.scatter(xs, ys, s=14, alpha=0.7, label=truth, color=color)
    if beta > 0:
        import numpy as np

        xs = np.linspace(0, max(threshold * 1.5, max((r["s_a"] for r in rows), default=0.1)), 50)
        ax.plot(xs, np.maximum((threshold - xs) / beta, 0), "k--", lw=1, label="threshold")
    ax.set_xlabel("similarity score")
    ax.set_ylabel("recommendation-shift score")
    ax.set_title("Detection scores by ground truth")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trajectory(trajectory: Sequence[float], path: str | Path) -> None:
    """Objective value per optimization iteration."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(trajectory)), trajectory, lw=1.2, color="#4f81bd")
    ax.set_xlabel("iteration")
    ax.set_ylabel("ranking objective")
    ax.set_title("Target-vector optimization trajectory")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
