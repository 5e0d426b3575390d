"""Experiment orchestration: configuration, the full pipeline, and reports.

One run: ingest -> chronological split -> per-seed baseline (train adaptor,
profiles, top-K, Hit Ratio) -> pick zero-exposure targets -> for each attack
variant, apply text overrides and/or forged profiles to the train data only,
rebuild (and retrain unless disabled), re-evaluate -> optionally probe every
item with the rewrite detector -> average over seeds and emit report files.
"""

from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from statistics import fmean
from typing import Any

import numpy as np

from . import defense as defense_mod
from . import plots
from .attack import AttackOutput, copycat_baseline, run_text_attack
from .corpus import (
    Catalog,
    DataSplit,
    PopularityIndex,
    chronological_split,
    ingest_catalog,
    popularity_partition,
    select_targets,
)
from .defense import ProbeConfig, run_detection
from .embedder import EmbedConfig, embed_text
from .errors import ConfigError
from .injection import forge_profiles, forged_interactions
from .llm_client import Transport
from .recommender import (
    FORGED_PREFIX,
    AdaptorParams,
    ItemMatrix,
    RecommenderSnapshot,
    TrainConfig,
    apply_adaptor,
    build_item_reps,
    build_user_profiles,
    hit_ratio_at_k,
    per_target_exposure,
    recommend_topk,
    train_adaptor,
)
from .whitebox import CwConfig, optimize_target_vector, whitebox_select

logger = logging.getLogger(__name__)


@dataclass
class AttackSettings:
    n_personas: int = 5
    pool_size: int = 50
    keyword_count: int = 20
    llm_keyword_filter: bool = True
    reference_choice: str = "top1"
    temperature: float = 0.8


@dataclass
class VariantSpec:
    name: str
    mode: str | None = None  # naive | simulate | full | copycat | None
    whitebox: bool = False
    injection_kind: str | None = None  # random | bandwagon
    injection_rho: float = 0.0

    def __post_init__(self) -> None:
        if self.mode is None and self.injection_kind is None:
            raise ConfigError(f"variant {self.name!r} attacks nothing")
        if self.whitebox and self.mode in (None, "copycat"):
            raise ConfigError("whitebox selection needs LLM rewrite candidates")


@dataclass
class DefenseSettings:
    enabled: bool = False
    variant: str | None = None  # defaults to the first text-attack variant
    probe: ProbeConfig = field(default_factory=ProbeConfig)


@dataclass
class ExperimentConfig:
    items_path: str
    interactions_path: str
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    k: int = 50
    decay: float = 0.9
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    n_targets: int = 10
    target_seed: int = 1234
    attack: AttackSettings = field(default_factory=AttackSettings)
    variants: list[VariantSpec] = field(default_factory=list)
    whitebox_cfg: CwConfig = field(default_factory=CwConfig)
    defense: DefenseSettings = field(default_factory=DefenseSettings)
    transport: Transport | None = None
    model: str = "default"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    retrain_after_attack: bool = True

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.k <= 0:
            raise ConfigError("k must be positive")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        doc = dict(doc)
        corpus = doc.pop("corpus", {})
        kwargs: dict[str, Any] = {
            "items_path": corpus.get("items", doc.pop("items_path", None)),
            "interactions_path": corpus.get("interactions", doc.pop("interactions_path", None)),
        }
        if kwargs["items_path"] is None or kwargs["interactions_path"] is None:
            raise ConfigError("config must name corpus items/interactions paths")
        if "embedder" in doc:
            kwargs["embed"] = EmbedConfig(**doc.pop("embedder"))
        if "recommender" in doc:
            rec = doc.pop("recommender")
            kwargs["k"] = rec.pop("k", 50)
            kwargs["decay"] = rec.pop("decay", 0.9)
            kwargs["train"] = TrainConfig(decay=kwargs["decay"], **rec)
        if "split" in doc:
            kwargs["split_ratios"] = tuple(doc.pop("split"))
        if "targets" in doc:
            tgt = doc.pop("targets")
            kwargs["n_targets"] = tgt.get("count", 10)
            kwargs["target_seed"] = tgt.get("seed", 1234)
        if "attack" in doc:
            kwargs["attack"] = AttackSettings(**doc.pop("attack"))
        if "variants" in doc:
            kwargs["variants"] = [
                VariantSpec(
                    name=v["name"],
                    mode=v.get("mode"),
                    whitebox=v.get("whitebox", False),
                    injection_kind=(v.get("injection") or {}).get("kind"),
                    injection_rho=(v.get("injection") or {}).get("rho", 0.0),
                )
                for v in doc.pop("variants")
            ]
        if "whitebox" in doc:
            kwargs["whitebox_cfg"] = CwConfig(**doc.pop("whitebox"))
        if "defense" in doc:
            d = dict(doc.pop("defense"))
            kwargs["defense"] = DefenseSettings(
                enabled=d.pop("enabled", False),
                variant=d.pop("variant", None),
                probe=ProbeConfig(**d) if d else ProbeConfig(),
            )
        if "transport" in doc:
            kwargs["transport"] = Transport(**doc.pop("transport"))
        for key in ("model", "seeds", "retrain_after_attack"):
            if key in doc:
                kwargs[key] = doc.pop(key)
        known = set(cls.__dataclass_fields__)
        leftovers = set(doc) - known
        if leftovers:
            raise ConfigError(f"unknown config keys: {sorted(leftovers)}")
        kwargs.update({k: v for k, v in doc.items() if k in known})
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def echo(self) -> dict[str, Any]:
        """JSON-serializable echo of the effective configuration."""
        doc = {
            "corpus": {"items": str(self.items_path), "interactions": str(self.interactions_path)},
            "embedder": asdict(self.embed),
            "recommender": {"k": self.k, "decay": self.decay, **asdict(self.train)},
            "split": list(self.split_ratios),
            "targets": {"count": self.n_targets, "seed": self.target_seed},
            "attack": asdict(self.attack),
            "variants": [asdict(v) for v in self.variants],
            "whitebox": asdict(self.whitebox_cfg),
            "defense": {
                "enabled": self.defense.enabled,
                "variant": self.defense.variant,
                **asdict(self.defense.probe),
            },
            "model": self.model,
            "seeds": list(self.seeds),
            "retrain_after_attack": self.retrain_after_attack,
        }
        if self.transport is not None:
            doc["transport"] = {
                "mode": self.transport.mode,
                "base_url": self.transport.base_url,
                "api_key_env": self.transport.api_key_env,
                "fixture_dir": None
                if self.transport.fixture_dir is None
                else str(self.transport.fixture_dir),
                "max_inflight": self.transport.max_inflight,
                "max_retries": self.transport.max_retries,
            }
        return doc


def derive_seed(*parts: Any) -> int:
    """Stable sub-seed from heterogeneous parts (crc32 of their repr)."""
    return zlib.crc32("|".join(str(p) for p in parts).encode("utf-8"))


def adapt_item_reps(raw: ItemMatrix, adaptor: AdaptorParams | None) -> ItemMatrix:
    if adaptor is None:
        return raw
    mapped = raw.matrix @ adaptor.matrix.T
    norms = np.linalg.norm(mapped, axis=1, keepdims=True)
    mapped = mapped / np.where(norms > 0, norms, 1.0)
    return ItemMatrix(raw.item_ids, mapped)


def popular_centroid(reps: ItemMatrix, index: PopularityIndex) -> np.ndarray:
    rows = np.stack([reps.row(i) for i in index.popular_set])
    centroid = rows.mean(axis=0)
    norm = float(np.linalg.norm(centroid))
    return centroid / norm if norm > 0 else centroid


def _real_profiles(split: DataSplit, reps: ItemMatrix, decay: float) -> dict[str, np.ndarray]:
    profiles = build_user_profiles(split, reps, decay)
    return {u: p for u, p in profiles.items() if not u.startswith(FORGED_PREFIX)}


@dataclass
class _SeedBaseline:
    adaptor: AdaptorParams
    reps: ItemMatrix
    profiles: dict[str, np.ndarray]
    reclists: dict[str, list[str]]


class ExperimentRunner:
    """Holds the shared immutable state for one experiment run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.timings: dict[str, float] = {}
        t0 = time.perf_counter()
        self.catalog: Catalog = ingest_catalog(cfg.items_path, cfg.interactions_path)
        self.split: DataSplit = chronological_split(self.catalog, cfg.split_ratios)
        self.index: PopularityIndex = popularity_partition(self.catalog)
        self.seen = self.split.seen_in_train()
        self.raw_reps = build_item_reps(self.catalog, cfg.embed)
        self.timings["setup"] = time.perf_counter() - t0
        self._attack_cache: dict[str, dict[str, AttackOutput]] = {}
        self._test_fingerprint = tuple(self.split.test)

    # -- baseline ----------------------------------------------------------

    def baseline_for(self, seed: int) -> _SeedBaseline:
        adaptor = train_adaptor(self.split, self.raw_reps, replace(self.cfg.train, seed=seed))
        reps = adapt_item_reps(self.raw_reps, adaptor)
        profiles = _real_profiles(self.split, reps, self.cfg.decay)
        reclists = recommend_topk(profiles, reps, self.cfg.k, self.seen)
        return _SeedBaseline(adaptor, reps, profiles, reclists)

    # -- attacks -----------------------------------------------------------

    def text_outputs(self, mode: str, targets: list[str], seed: int) -> dict[str, AttackOutput]:
        """Attack outputs per target. LLM modes are deterministic given the
        corpus and fixtures, so they are computed once and shared across
        seeds; copycat draws a donor per (seed, target)."""
        if mode == "copycat":
            return {
                t: copycat_baseline(self.catalog.items[t], self.catalog, derive_seed(seed, t))
                for t in targets
            }
        if mode not in self._attack_cache:
            atk = self.cfg.attack
            self._attack_cache[mode] = {
                t: run_text_attack(
                    self.catalog,
                    self.index,
                    self.cfg.embed,
                    t,
                    mode,
                    transport=self.cfg.transport,
                    model=self.cfg.model,
                    n_personas=atk.n_personas,
                    pool_size=atk.pool_size,
                    keyword_count=atk.keyword_count,
                    llm_keyword_filter=atk.llm_keyword_filter,
                    reference_choice=atk.reference_choice,
                    seed=derive_seed("reference", t),
                    temperature=atk.temperature,
                )
                for t in targets
            }
        return self._attack_cache[mode]

    def whitebox_overrides(
        self,
        outputs: dict[str, AttackOutput],
        targets: list[str],
        base: _SeedBaseline,
    ) -> tuple[dict[str, str], list[float]]:
        centroid = popular_centroid(base.reps, self.index)
        interacted = {
            (x.user_id, x.item_id) for x in self.catalog.interactions
        }

        def embed_fn(text: str) -> np.ndarray:
            return apply_adaptor(embed_text(text, self.cfg.embed), base.adaptor)

        overrides: dict[str, str] = {}
        first_trajectory: list[float] = []
        for t in targets:
            eligible_profiles = {
                u: p for u, p in base.profiles.items() if (u, t) not in interacted
            }
            init = embed_fn(outputs[t].malicious_text)
            optimized = optimize_target_vector(
                init,
                self.cfg.whitebox_cfg,
                eligible_profiles,
                base.reclists,
                base.reps,
                targets,
                centroid,
            )
            choice = whitebox_select(outputs[t].candidates(), optimized, embed_fn)
            overrides[t] = choice.text
            if not first_trajectory:
                first_trajectory = optimized.trajectory
        return overrides, first_trajectory

    # -- variant evaluation --------------------------------------------------

    def run_variant(
        self, variant: VariantSpec, seed: int, targets: list[str], base: _SeedBaseline
    ) -> tuple[dict[str, Any], RecommenderSnapshot, list[float]]:
        pre_hr = hit_ratio_at_k(base.reclists, targets)
        overrides: dict[str, str] = {}
        trajectory: list[float] = []
        if variant.mode is not None:
            outputs = self.text_outputs(variant.mode, targets, seed)
            if variant.whitebox:
                overrides, trajectory = self.whitebox_overrides(outputs, targets, base)
            else:
                overrides = {t: outputs[t].malicious_text for t in targets}

        train_split = self.split
        if variant.injection_kind is not None:
            forged = forge_profiles(
                variant.injection_kind,
                variant.injection_rho,
                self.catalog,
                self.index,
                targets,
                seed=derive_seed(seed, "inject", variant.injection_kind),
                split=self.split,
            )
            train_split = self.split.with_extra_train(forged_interactions(forged))

        raw2 = build_item_reps(self.catalog, self.cfg.embed, None, overrides)
        if self.cfg.retrain_after_attack:
            adaptor2 = train_adaptor(train_split, raw2, replace(self.cfg.train, seed=seed))
        else:
            adaptor2 = base.adaptor
        reps2 = adapt_item_reps(raw2, adaptor2)
        profiles2 = _real_profiles(self.split, reps2, self.cfg.decay)
        lists2 = recommend_topk(profiles2, reps2, self.cfg.k, self.seen)
        post_hr = hit_ratio_at_k(lists2, targets)

        if self.cfg.retrain_after_attack:
            reps_nr = adapt_item_reps(raw2, base.adaptor)
            profiles_nr = _real_profiles(self.split, reps_nr, self.cfg.decay)
            lists_nr = recommend_topk(profiles_nr, reps_nr, self.cfg.k, self.seen)
            post_nr = hit_ratio_at_k(lists_nr, targets)
        else:
            post_nr = post_hr

        texts = {i: self.catalog.item_text(i) for i in self.catalog.items}
        texts.update(overrides)
        snapshot = RecommenderSnapshot(
            reps2, profiles2, self.seen, self.cfg.k, self.cfg.embed, adaptor2, texts
        )
        row = {
            "seed": seed,
            "pre_hit_ratio": pre_hr,
            "post_hit_ratio": post_hr,
            "post_hit_ratio_no_retrain": post_nr,
            "per_target_exposure": per_target_exposure(lists2, targets),
        }
        return row, snapshot, trajectory


@dataclass
class ExperimentReport:
    body: dict[str, Any]
    timings: dict[str, float]
    detection_rows: list[defense_mod.DetectionRow] = field(default_factory=list)


def _average(rows: list[dict[str, Any]], key: str) -> float:
    return fmean(row[key] for row in rows)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    if not cfg.variants:
        raise ConfigError("experiment config declares no attack variants")
    runner = ExperimentRunner(cfg)

    t0 = time.perf_counter()
    baselines = {seed: runner.baseline_for(seed) for seed in cfg.seeds}
    runner.timings["baseline"] = time.perf_counter() - t0

    targets = select_targets(
        runner.index,
        [baselines[s].reclists for s in cfg.seeds],
        cfg.n_targets,
        cfg.target_seed,
    )

    probe_variant = cfg.defense.variant
    if cfg.defense.enabled and probe_variant is None:
        with_text = [v.name for v in cfg.variants if v.mode is not None]
        if not with_text:
            raise ConfigError("defense enabled but no variant produces attacked text")
        probe_variant = with_text[0]

    variant_reports: list[dict[str, Any]] = []
    detection_rows: list[defense_mod.DetectionRow] = []
    detection_per_seed: list[dict[str, float]] = []
    trajectory: list[float] = []

    t0 = time.perf_counter()
    for variant in cfg.variants:
        rows = []
        for seed in cfg.seeds:
            row, snapshot, traj = runner.run_variant(variant, seed, targets, baselines[seed])
            rows.append(row)
            if traj and not trajectory:
                trajectory = traj
            if cfg.defense.enabled and variant.name == probe_variant:
                d_rows, metrics = run_detection(
                    snapshot.texts,
                    set(targets),
                    cfg.defense.probe,
                    cfg.transport,
                    snapshot,
                )
                detection_per_seed.append(
                    {
                        "seed": seed,
                        "precision": metrics.precision,
                        "recall": metrics.recall,
                        "f1": metrics.f1,
                    }
                )
                if not detection_rows:
                    detection_rows = d_rows
        report_row = {
            "name": variant.name,
            "mode": variant.mode,
            "whitebox": variant.whitebox,
            "injection_kind": variant.injection_kind,
            "injection_rho": variant.injection_rho,
            "per_seed": rows,
            "pre_hit_ratio": _average(rows, "pre_hit_ratio"),
            "post_hit_ratio": _average(rows, "post_hit_ratio"),
            "post_hit_ratio_no_retrain": _average(rows, "post_hit_ratio_no_retrain"),
            "per_target_exposure": {
                t: fmean(r["per_target_exposure"][t] for r in rows) for t in targets
            },
        }
        report_row["lift"] = report_row["post_hit_ratio"] - report_row["pre_hit_ratio"]
        variant_reports.append(report_row)
    runner.timings["variants"] = time.perf_counter() - t0

    test_intact = tuple(runner.split.test) == runner._test_fingerprint
    if not test_intact:
        logger.error("test split was mutated during the run")

    body: dict[str, Any] = {
        "config": cfg.echo(),
        "corpus_stats": {
            "users": runner.catalog.n_users,
            "items": runner.catalog.n_items,
            "interactions": runner.catalog.n_interactions,
        },
        "targets": targets,
        "variants": variant_reports,
        "whitebox_trajectory": trajectory,
        "hygiene": {"test_split_intact": test_intact},
        "detection": None,
    }
    if detection_per_seed:
        body["detection"] = {
            "variant": probe_variant,
            "per_seed": detection_per_seed,
            "precision": fmean(r["precision"] for r in detection_per_seed),
            "recall": fmean(r["recall"] for r in detection_per_seed),
            "f1": fmean(r["f1"] for r in detection_per_seed),
            "rows_seed": cfg.seeds[0],
            "rows": [asdict(r) for r in detection_rows],
        }
    return ExperimentReport(body, dict(runner.timings), detection_rows)


# --------------------------------------------------------------------------
# Report files


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_report(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    """Write report.json, summary.csv, detection.csv (when the defense ran),
    timings.json, and rendered figures. report.json excludes wall-clock
    timings so identical runs produce byte-identical files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    report_path = out / "report.json"
    _atomic_write_text(
        report_path, json.dumps(report.body, indent=1, sort_keys=True, ensure_ascii=False) + "\n"
    )
    written.append(report_path)

    seeds = report.body["config"]["seeds"]
    lines = [
        ",".join(
            ["variant", "pre_hit_ratio", "post_hit_ratio", "post_hit_ratio_no_retrain", "lift"]
            + [f"post_hit_ratio_seed_{s}" for s in seeds]
        )
    ]
    for row in report.body["variants"]:
        per_seed = {r["seed"]: r["post_hit_ratio"] for r in row["per_seed"]}
        cells = [
            row["name"],
            repr(row["pre_hit_ratio"]),
            repr(row["post_hit_ratio"]),
            repr(row["post_hit_ratio_no_retrain"]),
            repr(row["lift"]),
        ] + [repr(per_seed[s]) for s in seeds]
        lines.append(",".join(cells))
    summary_path = out / "summary.csv"
    _atomic_write_text(summary_path, "\n".join(lines) + "\n")
    written.append(summary_path)

    if report.detection_rows:
        detection_path = out / "detection.csv"
        defense_mod.write_detection_csv(report.detection_rows, detection_path)
        written.append(detection_path)

    timings_path = out / "timings.json"
    _atomic_write_text(timings_path, json.dumps(report.timings, indent=1, sort_keys=True) + "\n")
    written.append(timings_path)

    written.extend(render_figures(report.body, report.detection_rows, out))
    return written


def render_figures(
    body: dict[str, Any], detection_rows: list, out_dir: str | Path
) -> list[Path]:
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    k = body["config"]["recommender"]["k"]

    path = fig_dir / "hit_ratio_by_variant.png"
    plots.save_variant_bars(body["variants"], path, k=k)
    written.append(path)

    text_variants = [v for v in body["variants"] if v["mode"] is not None]
    if text_variants:
        path = fig_dir / "per_target_exposure.png"
        plots.save_target_exposure(
            text_variants[0]["per_target_exposure"], text_variants[0]["name"], path, k=k
        )
        written.append(path)

    if detection_rows:
        cfg = body["config"]["defense"]
        path = fig_dir / "detection_scores.png"
        plots.save_detection_scatter(
            [asdict(r) for r in detection_rows], cfg["beta"], cfg["threshold"], path
        )
        written.append(path)

    if body.get("whitebox_trajectory"):
        path = fig_dir / "whitebox_trajectory.png"
        plots.save_trajectory(body["whitebox_trajectory"], path)
        written.append(path)
    return written
