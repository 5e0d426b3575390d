"""Command-line interface.

Subcommands: ingest, baseline, attack, inject, whitebox, detect, run, report.
Most take --config (a JSON file mirroring ExperimentConfig) plus flag
overrides for the common fields. Exit codes: 0 success, 2 config error,
3 transport error, 4 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .attack import ATTACK_MODES
from .corpus import exposure_counts, ingest_catalog, select_targets
from .defense import run_detection, write_detection_csv, write_detection_summary
from .errors import ConfigError, PromosimError, TransportError
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    ExperimentRunner,
    derive_seed,
    popular_centroid,
    render_figures,
    run_experiment,
    write_report,
)
from .injection import INJECTION_KINDS, forge_profiles, write_profiles_jsonl
from .recommender import RecommenderSnapshot, apply_adaptor
from .embedder import embed_text
from .whitebox import export_trajectory_csv, optimize_target_vector, whitebox_select

logger = logging.getLogger(__name__)


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    doc: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    _merge_flags(doc, args)
    return ExperimentConfig.from_dict(doc)


def _merge_flags(doc: dict, args: argparse.Namespace) -> None:
    def setdot(section: str, key: str, value) -> None:
        if value is not None:
            doc.setdefault(section, {})[key] = value

    if getattr(args, "items", None):
        setdot("corpus", "items", args.items)
    if getattr(args, "interactions", None):
        setdot("corpus", "interactions", args.interactions)
    setdot("embedder", "dimension", getattr(args, "embed_dim", None))
    setdot("embedder", "hash_seed", getattr(args, "hash_seed", None))
    setdot("recommender", "k", getattr(args, "k", None))
    setdot("recommender", "decay", getattr(args, "decay", None))
    setdot("recommender", "epochs", getattr(args, "epochs", None))
    setdot("recommender", "learning_rate", getattr(args, "learning_rate", None))
    setdot("targets", "count", getattr(args, "n_targets", None))
    setdot("targets", "seed", getattr(args, "target_seed", None))
    setdot("attack", "n_personas", getattr(args, "n_personas", None))
    setdot("attack", "pool_size", getattr(args, "pool_size", None))
    setdot("attack", "keyword_count", getattr(args, "keyword_count", None))
    setdot("transport", "mode", getattr(args, "transport_mode", None))
    setdot("transport", "base_url", getattr(args, "base_url", None))
    setdot("transport", "fixture_dir", getattr(args, "fixture_dir", None))
    setdot("transport", "api_key_env", getattr(args, "api_key_env", None))
    if getattr(args, "model", None):
        doc["model"] = args.model
    if getattr(args, "seeds", None):
        doc["seeds"] = [int(s) for s in args.seeds.split(",")]
    retrain = getattr(args, "retrain", None)
    if retrain is not None:
        doc["retrain_after_attack"] = retrain
    defense = getattr(args, "defense", None)
    if defense is not None:
        doc.setdefault("defense", {})["enabled"] = defense


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--items", help="items JSONL path")
    parser.add_argument("--interactions", help="interactions JSONL path")
    parser.add_argument("--embed-dim", type=int)
    parser.add_argument("--hash-seed", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--decay", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--n-targets", type=int)
    parser.add_argument("--target-seed", type=int)
    parser.add_argument("--n-personas", type=int)
    parser.add_argument("--pool-size", type=int)
    parser.add_argument("--keyword-count", type=int)
    parser.add_argument("--transport-mode", choices=["live", "replay", "record"])
    parser.add_argument("--base-url")
    parser.add_argument("--fixture-dir")
    parser.add_argument("--api-key-env")
    parser.add_argument("--model")
    parser.add_argument("--seeds", help="comma-separated seed list")
    parser.add_argument("--retrain", dest="retrain", action="store_true", default=None)
    parser.add_argument("--no-retrain", dest="retrain", action="store_false")
    parser.add_argument("--defense", dest="defense", action="store_true", default=None)
    parser.add_argument("--no-defense", dest="defense", action="store_false")


def _targets_for(runner: ExperimentRunner, cfg: ExperimentConfig, explicit: list[str] | None):
    if explicit:
        unknown = [t for t in explicit if t not in runner.catalog.items]
        if unknown:
            raise ConfigError(f"unknown target items: {unknown}")
        return explicit, None
    base = runner.baseline_for(cfg.seeds[0])
    targets = select_targets(runner.index, base.reclists, cfg.n_targets, cfg.target_seed)
    return targets, base


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    catalog = ingest_catalog(cfg.items_path, cfg.interactions_path)
    print(
        json.dumps(
            {
                "users": catalog.n_users,
                "items": catalog.n_items,
                "interactions": catalog.n_interactions,
            }
        )
    )
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    runner = ExperimentRunner(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    per_seed = {}
    merged: dict[str, int] = {}
    for seed in cfg.seeds:
        base = runner.baseline_for(seed)
        counts = exposure_counts(base.reclists)
        for item, c in counts.items():
            merged[item] = merged.get(item, 0) + c
        per_seed[str(seed)] = {"profiled_users": len(base.profiles)}
    top = sorted(merged.items(), key=lambda kv: (-kv[1], kv[0]))[:20]
    doc = {
        "config": cfg.echo(),
        "corpus_stats": {
            "users": runner.catalog.n_users,
            "items": runner.catalog.n_items,
            "interactions": runner.catalog.n_interactions,
        },
        "per_seed": per_seed,
        "most_exposed_items": [
            {"item_id": item, "total_list_appearances": c} for item, c in top
        ],
    }
    (out / "baseline.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    print(f"baseline written to {out / 'baseline.json'}")
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if cfg.transport is None:
        raise ConfigError("attack requires a transport section")
    runner = ExperimentRunner(cfg)
    targets, _ = _targets_for(runner, cfg, args.target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for target in targets:
        output = runner.text_outputs(args.mode, [target], cfg.seeds[0])[target]
        path = out / f"attack_{target}.json"
        output.to_json(path)
        print(f"{target}: {args.mode} rewrite written to {path}")
    return 0


def cmd_inject(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    runner = ExperimentRunner(cfg)
    targets, _ = _targets_for(runner, cfg, args.target)
    profiles = forge_profiles(
        args.kind,
        args.rho,
        runner.catalog,
        runner.index,
        targets,
        seed=args.seed if args.seed is not None else derive_seed(cfg.seeds[0], "inject", args.kind),
        split=runner.split,
    )
    write_profiles_jsonl(profiles, args.out)
    print(f"{len(profiles)} forged profiles written to {args.out}")
    return 0


def cmd_whitebox(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if cfg.transport is None:
        raise ConfigError("whitebox needs a transport to build rewrite candidates")
    runner = ExperimentRunner(cfg)
    targets, base = _targets_for(runner, cfg, args.target)
    if base is None:
        base = runner.baseline_for(cfg.seeds[0])
    outputs = runner.text_outputs(args.mode, targets, cfg.seeds[0])
    centroid = popular_centroid(base.reps, runner.index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    interacted = {(x.user_id, x.item_id) for x in runner.catalog.interactions}

    def embed_fn(text: str):
        return apply_adaptor(embed_text(text, cfg.embed), base.adaptor)

    summary = {}
    for target in targets:
        eligible = {u: p for u, p in base.profiles.items() if (u, target) not in interacted}
        optimized = optimize_target_vector(
            embed_fn(outputs[target].malicious_text),
            cfg.whitebox_cfg,
            eligible,
            base.reclists,
            base.reps,
            targets,
            centroid,
        )
        choice = whitebox_select(outputs[target].candidates(), optimized, embed_fn)
        export_trajectory_csv(optimized, out / f"trajectory_{target}.csv")
        summary[target] = {
            "chosen_index": choice.index,
            "similarity": choice.similarity,
            "eligible_users": optimized.eligible_user_count,
            "text": choice.text,
        }
    (out / "whitebox.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(f"whitebox selections written to {out / 'whitebox.json'}")
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if cfg.transport is None:
        raise ConfigError("detect requires a transport section")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.snapshot:
        snapshot = RecommenderSnapshot.from_json(args.snapshot)
    else:
        runner = ExperimentRunner(cfg)
        base = runner.baseline_for(cfg.seeds[0])
        texts = {i: runner.catalog.item_text(i) for i in runner.catalog.items}
        snapshot = RecommenderSnapshot(
            base.reps, base.profiles, runner.seen, cfg.k, cfg.embed, base.adaptor, texts
        )
    truth: set[str] = set()
    if args.truth:
        truth = set(json.loads(Path(args.truth).read_text(encoding="utf-8")))
    rows, metrics = run_detection(
        snapshot.texts, truth, cfg.defense.probe, cfg.transport, snapshot
    )
    write_detection_csv(rows, out / "detection.csv")
    write_detection_summary(metrics, cfg.defense.probe, out / "detection_summary.json")
    print(
        f"probed {len(rows)} items: precision={metrics.precision:.4f} "
        f"recall={metrics.recall:.4f} f1={metrics.f1:.4f}"
    )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg)
    written = write_report(report, args.out)
    for row in report.body["variants"]:
        print(
            f"{row['name']}: pre={row['pre_hit_ratio']:.4f} "
            f"post={row['post_hit_ratio']:.4f} lift={row['lift']:+.4f}"
        )
    print(f"report files: {', '.join(str(p) for p in written[:4])} ...")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    body = json.loads(Path(args.report).read_text(encoding="utf-8"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    detection_rows = []
    if body.get("detection"):
        from .defense import DetectionRow

        detection_rows = [DetectionRow(**r) for r in body["detection"]["rows"]]
    report = ExperimentReport(body, {}, detection_rows)
    written = write_report(report, out)
    print(f"re-rendered {len(written)} files into {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promosim",
        description="Text-promotion attack and rewrite-detection lab for "
        "text-driven recommenders",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and validate a corpus, print counts")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("baseline", help="train and evaluate the clean recommender")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("attack", help="generate black-box rewrites for target items")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[m for m in ATTACK_MODES], default="full")
    p.add_argument("--target", action="append", help="explicit target item id (repeatable)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("inject", help="forge poisoning profiles as interactions JSONL")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=list(INJECTION_KINDS), required=True)
    p.add_argument("--rho", type=float, required=True, help="malicious user fraction")
    p.add_argument("--seed", type=int)
    p.add_argument("--target", action="append")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("whitebox", help="optimize target vectors and re-rank candidates")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["naive", "simulate", "full"], default="full")
    p.add_argument("--target", action="append")
    p.set_defaults(func=cmd_whitebox)

    p = sub.add_parser("detect", help="probe item texts with the rewrite detector")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--snapshot", help="recommender snapshot JSON (default: build baseline)")
    p.add_argument("--truth", help="JSON list of item ids that are truly malicious")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("run", help="full pipeline: baseline, attacks, re-eval, defense")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-render CSV and figures from report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    except PromosimError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
