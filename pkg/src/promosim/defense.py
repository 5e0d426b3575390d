"""Rewrite-probe detector for LLM-generated promotional item text.

Each probed text is split into a prefix and a suffix; an LLM regenerates the
suffix K times at temperature 0. Two signals are combined: word n-gram
overlap between the true suffix and the regenerations (LLM-written text
regenerates consistently), and the shift in how often the item would be
recommended when its suffix is swapped for a regeneration. Items whose
combined score exceeds the threshold are labeled malicious.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .attack import load_template, render
from .embedder import tokenize
from .errors import ProbeError, UsageError
from .llm_client import Transport, chat_complete, user_chat
from .recommender import RecommenderSnapshot

logger = logging.getLogger(__name__)


@dataclass
class ProbeConfig:
    split_fraction: float = 0.5
    completions: int = 3  # K
    ngram_min: int = 1  # n0
    ngram_max: int = 4  # N
    beta: float = 50.0
    threshold: float = 0.1  # epsilon
    normalize_sa: bool = True
    model: str = "default"

    def __post_init__(self) -> None:
        if not (0.0 < self.split_fraction < 1.0):
            raise UsageError("split fraction must lie in (0, 1)")
        if self.completions < 1:
            raise UsageError("completion count K must be >= 1")
        if self.ngram_min < 1 or self.ngram_max < self.ngram_min:
            raise UsageError("invalid n-gram range")
        if self.beta < 0:
            raise UsageError("beta must be >= 0")


@dataclass
class ProbeResult:
    t_x: str
    t_y: str
    completions: list[str]


@dataclass
class DetectionScore:
    s_a: float
    s_r: float
    s: float
    label: str  # benign | malicious


@dataclass
class DetectionMetrics:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # a zero-division convention was applied


def split_words(text: str, fraction: float) -> tuple[str, str]:
    """Split at the word boundary nearest fraction*wordcount, both halves
    nonempty. Whitespace is normalized to single spaces."""
    words = text.split()
    if len(words) < 2:
        raise ProbeError("text with fewer than 2 words cannot be probed")
    cut = int(math.floor(fraction * len(words) + 0.5))
    cut = min(max(cut, 1), len(words) - 1)
    return " ".join(words[:cut]), " ".join(words[cut:])


def completion_probe(text: str, cfg: ProbeConfig, transport: Transport) -> ProbeResult:
    """Ask the LLM to regenerate the suffix K times at temperature 0."""
    t_x, t_y = split_words(text, cfg.split_fraction)
    prompt = render(
        load_template("completion_probe"),
        prefix=t_x,
        word_count=str(len(t_y.split())),
    )
    req = user_chat(cfg.model, prompt, temperature=0.0)
    completions = [chat_complete(req, transport) for _ in range(cfg.completions)]
    return ProbeResult(t_x, t_y, completions)


def _grams(tokens: Sequence[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def score_sa(
    t_y: str,
    completions: Sequence[str],
    n0: int = 1,
    n_max: int = 4,
    normalize: bool = True,
) -> float:
    """Mean over completions of the summed n-gram recall of the true suffix;
    n values where the suffix has no n-grams contribute 0. The normalized
    variant divides by the number of n-gram sizes, giving a [0, 1] score."""
    if not t_y:
        raise UsageError("true suffix must be nonempty")
    ref = tokenize(t_y)
    total = 0.0
    for completion in completions:
        cand = tokenize(completion)
        for n in range(n0, n_max + 1):
            ref_grams = _grams(ref, n)
            if not ref_grams:
                continue
            total += len(_grams(cand, n) & ref_grams) / len(ref_grams)
    value = total / len(completions) if completions else 0.0
    if normalize:
        value /= n_max - n0 + 1
    return value


def score_sr(
    item_id: str,
    original_full_text: str,
    completion_full_texts: Sequence[str],
    snapshot: RecommenderSnapshot,
    k: int | None = None,
) -> float:
    """Mean absolute shift in the item's recommendation count when its text is
    swapped for each completion variant, relative to the total number of
    recommendation slots |users| * k."""
    k = k if k is not None else snapshot.k
    slots = snapshot.n_users * k
    if slots == 0:
        return 0.0
    base = snapshot.recnum(item_id, original_full_text)
    shifts = [
        abs(base - snapshot.recnum(item_id, variant)) / slots
        for variant in completion_full_texts
    ]
    return sum(shifts) / len(shifts) if shifts else 0.0


def classify(s_a: float, s_r: float, beta: float = 50.0, epsilon: float = 0.1) -> DetectionScore:
    """Combined score s_a + beta*s_r; malicious iff it exceeds epsilon."""
    if not (math.isfinite(s_a) and math.isfinite(s_r)):
        raise UsageError("detection scores must be finite")
    s = s_a + beta * s_r
    return DetectionScore(s_a, s_r, s, "malicious" if s > epsilon else "benign")


def evaluate_detection(
    labels: Sequence[str], ground_truth: Sequence[str]
) -> DetectionMetrics:
    """Precision/recall/F1 with "malicious" as the positive class."""
    if len(labels) != len(ground_truth):
        raise UsageError(
            f"label/truth length mismatch: {len(labels)} vs {len(ground_truth)}"
        )
    tp = sum(1 for l, t in zip(labels, ground_truth) if l == "malicious" and t == "malicious")
    fp = sum(1 for l, t in zip(labels, ground_truth) if l == "malicious" and t != "malicious")
    fn = sum(1 for l, t in zip(labels, ground_truth) if l != "malicious" and t == "malicious")
    degenerate = (tp + fp) == 0 or (tp + fn) == 0
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    if degenerate:
        logger.warning("degenerate detection evaluation (no positives predicted or present)")
    return DetectionMetrics(precision, recall, f1, degenerate)


@dataclass
class DetectionRow:
    item_id: str
    s_a: float
    s_r: float
    s: float
    label: str
    truth: str


def probe_item(
    item_id: str,
    text: str,
    cfg: ProbeConfig,
    transport: Transport,
    snapshot: RecommenderSnapshot | None = None,
) -> DetectionScore:
    """Probe one text: completion probe, both scores, classification.
    Without a snapshot the recommendation-shift signal is 0."""
    probe = completion_probe(text, cfg, transport)
    s_a = score_sa(probe.t_y, probe.completions, cfg.ngram_min, cfg.ngram_max, cfg.normalize_sa)
    s_r = 0.0
    if snapshot is not None:
        variants = [f"{probe.t_x} {c}" for c in probe.completions]
        s_r = score_sr(item_id, text, variants, snapshot)
    return classify(s_a, s_r, cfg.beta, cfg.threshold)


def run_detection(
    texts: dict[str, str],
    truth_positive: set[str],
    cfg: ProbeConfig,
    transport: Transport,
    snapshot: RecommenderSnapshot | None = None,
) -> tuple[list[DetectionRow], DetectionMetrics]:
    """Probe every text (sorted by item id), score, classify, and evaluate
    against the ground-truth positives. Unprobeable texts are recorded as
    benign with zero scores (logged)."""
    rows: list[DetectionRow] = []
    for item_id in sorted(texts):
        truth = "malicious" if item_id in truth_positive else "benign"
        try:
            verdict = probe_item(item_id, texts[item_id], cfg, transport, snapshot)
        except ProbeError as exc:
            logger.warning("item %s not probeable (%s); defaulting to benign", item_id, exc)
            verdict = DetectionScore(0.0, 0.0, 0.0, "benign")
        rows.append(
            DetectionRow(item_id, verdict.s_a, verdict.s_r, verdict.s, verdict.label, truth)
        )
    metrics = evaluate_detection([r.label for r in rows], [r.truth for r in rows])
    return rows, metrics


def write_detection_csv(rows: Sequence[DetectionRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "s_a", "s_r", "s", "label", "truth"])
        for r in rows:
            writer.writerow(
                [r.item_id, f"{r.s_a:.10g}", f"{r.s_r:.10g}", f"{r.s:.10g}", r.label, r.truth]
            )


def write_detection_summary(
    metrics: DetectionMetrics, cfg: ProbeConfig, path: str | Path
) -> None:
    doc = {
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "degenerate": metrics.degenerate,
        "config": {
            "split_fraction": cfg.split_fraction,
            "completions": cfg.completions,
            "ngram_min": cfg.ngram_min,
            "ngram_max": cfg.ngram_max,
            "beta": cfg.beta,
            "threshold": cfg.threshold,
            "normalize_sa": cfg.normalize_sa,
            "model": cfg.model,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
