#!/usr/bin/env python3
"""Build the committed test assets: the synthetic corpus, the detection
benchmark texts, and the recorded LLM fixtures the acceptance suite replays.

Everything is seeded, so rerunning reproduces identical files:

    python3 scripts/build_test_assets.py [--force]
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
DATA = REPO / "tests" / "data"
sys.path.insert(0, str(REPO / "src"))
sys.path.insert(0, str(REPO / "tests"))

from promosim.defense import ProbeConfig, completion_probe  # noqa: E402
from promosim.harness import ExperimentConfig, run_experiment  # noqa: E402
from promosim.llm_client import Transport  # noqa: E402
from promosim.llmstub import StubLLMServer, rewrite_plain  # noqa: E402

# ---------------------------------------------------------------- vocabularies

CLUSTER_PHRASES = [
    "silk finish", "gentle formula", "botanical extract", "velvet texture",
    "radiant glow", "deep nourish", "calming ritual", "fresh bloom",
    "pure essence", "soft shimmer", "daily renewal", "spa comfort",
    "silky lather", "luminous tone",
]
CLUSTER_WORDS = """lavender aloe serum balm cream hydrating soothing lightweight
luminous restoring chamomile rosehip jasmine nourishing satin polished infused
renewing mineral blossom dewy toning vitamin glowing smoothing velvety petal
botanical cleansing rich creamy spa calming gentle radiant silky essence
fragrant herbal supple""".split()

BRANDS = ["veluna", "ardent", "mirelle", "soluna", "cresta", "novae", "lumen", "orlaya"]

BENIGN_NOUNS = """drawer shelf hinge bracket ledger stapler folder spanner gasket
switch cable drill lantern funnel crate mallet easel tripod stencil beaker
clamp pulley washer grommet spindle bobbin ratchet chisel trowel sieve dowel
caliper anvil vise plane awl burin gouge rasp file scriber level square
plumb gauge bevel jig template fixture mandrel arbor collet chuck""".split()

BENIGN_VERBS = """holds stores folds cuts marks grips lifts aligns seals fastens
measures spreads turns presses guides strains props traces mixes clips""".split()

BENIGN_ADJ = """sturdy plain compact narrow oiled ribbed squared tapered blunt
matte beveled knurled hollow solid weighted slotted hinged stacked coiled
threaded""".split()

_SYLLABLES = [
    "mar", "tol", "ven", "kor", "pel", "dran", "sul", "fen", "gor", "lin",
    "bas", "tur", "nim", "rol", "zet", "hul", "pri", "ost", "wel", "cam",
]


def pseudo_word(rng: np.random.Generator) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(int(rng.integers(2, 4))))


# ---------------------------------------------------------------- corpus


def cluster_text(rng: np.random.Generator, length: int, dilution: float) -> str:
    """Core promotional vocabulary mixed with per-item filler; dilution sets
    the filler share, which spreads cluster items across ranking tiers."""
    parts: list[str] = []
    while sum(len(p.split()) for p in parts) < length:
        roll = rng.random()
        if roll < dilution:
            parts.append(pseudo_word(rng))
        elif roll < dilution + (1.0 - dilution) * 0.45:
            parts.append(str(rng.choice(CLUSTER_PHRASES)))
        else:
            parts.append(str(rng.choice(CLUSTER_WORDS)))
    return " ".join(parts)


def tail_text(rng: np.random.Generator) -> str:
    words = [pseudo_word(rng) for _ in range(int(rng.integers(10, 18)))]
    return " ".join(words)


def build_corpus(out_dir: Path, seed: int = 20240817) -> None:
    rng = np.random.default_rng(seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = []
    for j in range(65):
        items.append(
            {
                "item_id": f"c{j:03d}",
                "title": f"{rng.choice(CLUSTER_WORDS)} {rng.choice(CLUSTER_WORDS)} {j}",
                "brand": str(rng.choice(BRANDS)),
                "category": "wellness",
                "description": cluster_text(rng, 28, dilution=float(rng.uniform(0.15, 0.6))),
            }
        )
    for j in range(435):
        items.append(
            {
                "item_id": f"t{j:03d}",
                "title": f"{pseudo_word(rng)} {pseudo_word(rng)}",
                "brand": None,
                "category": None,
                "description": tail_text(rng),
            }
        )
    with (out_dir / "items.jsonl").open("w") as fh:
        for item in items:
            fh.write(json.dumps(item) + "\n")

    zipf = np.arange(1, 66, dtype=np.float64) ** -0.6
    zipf /= zipf.sum()
    interactions = []
    for u in range(200):
        n = int(rng.integers(8, 15))
        for i in range(n):
            if rng.random() < 0.88:
                item = f"c{int(rng.choice(65, p=zipf)):03d}"
            else:
                item = f"t{int(rng.integers(0, 435)):03d}"
            interactions.append(
                {"user_id": f"u{u:03d}", "item_id": item, "timestamp": 1000 * u + i}
            )
    with (out_dir / "interactions.jsonl").open("w") as fh:
        for x in interactions:
            fh.write(json.dumps(x) + "\n")
    print(f"corpus: {len(items)} items, {len(interactions)} interactions -> {out_dir}")


# ---------------------------------------------------------------- benchmark


def benign_text(rng: np.random.Generator) -> str:
    # content words drawn without replacement to keep the two halves distinct
    nouns = list(rng.choice(BENIGN_NOUNS, size=10, replace=False))
    adjs = list(rng.choice(BENIGN_ADJ, size=6, replace=False))
    verbs = list(rng.choice(BENIGN_VERBS, size=4, replace=False))
    sentences = [
        f"The {adjs[0]} {nouns[0]} {verbs[0]} a {adjs[1]} {nouns[1]} beside the {nouns[2]}.",
        f"Its {nouns[3]} {verbs[1]} the {adjs[2]} {nouns[4]} when the {nouns[5]} is {adjs[3]}.",
        f"A {adjs[4]} {nouns[6]} {verbs[2]} the {nouns[7]} and the {nouns[8]}.",
        f"Keep the {nouns[9]} {adjs[5]} so it {verbs[3]} well.",
    ]
    return " ".join(sentences[: int(rng.integers(3, 5))])


def build_benchmark(out_dir: Path, seed: int = 7121944) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for j in range(100):
        rows.append({"id": f"bench_benign_{j:03d}", "text": benign_text(rng), "truth": "benign"})
    for j in range(100):
        source = benign_text(rng)
        rows.append(
            {
                "id": f"bench_malicious_{j:03d}",
                "text": rewrite_plain(source),
                "truth": "malicious",
            }
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "benchmark.jsonl").open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(f"benchmark: {len(rows)} texts -> {out_dir / 'benchmark.jsonl'}")
    return rows


# ---------------------------------------------------------------- fixtures


def acceptance_config(
    fixture_dir: Path, mode: str, base_url: str | None = None
) -> ExperimentConfig:
    """The experiment the acceptance suite replays; `mode` switches the
    transport between record (against the stub) and replay."""
    return ExperimentConfig.from_dict(
        {
            "corpus": {
                "items": str(DATA / "synthetic" / "items.jsonl"),
                "interactions": str(DATA / "synthetic" / "interactions.jsonl"),
            },
            "recommender": {"k": 50, "decay": 0.9, "epochs": 12, "learning_rate": 0.05, "weight_decay": 1.0},
            "targets": {"count": 10, "seed": 71},
            "attack": {"n_personas": 5, "pool_size": 50, "keyword_count": 20},
            "variants": [
                {"name": "textsimu_simulate", "mode": "simulate"},
                {"name": "textsimu_full", "mode": "full"},
                {"name": "textsimu_white", "mode": "full", "whitebox": True},
                {"name": "copycat", "mode": "copycat"},
                {
                    "name": "textsimu_full+ra",
                    "mode": "full",
                    "injection": {"kind": "random", "rho": 0.005},
                },
            ],
            "transport": {"mode": mode, "fixture_dir": str(fixture_dir), "base_url": base_url},
            "model": "stub-chat",
            "seeds": [0, 1, 2, 3, 4],
        }
    )


def record_fixtures(fixture_dir: Path, benchmark_rows: list[dict]) -> None:
    fixture_dir.mkdir(parents=True, exist_ok=True)
    with StubLLMServer() as stub:
        cfg = acceptance_config(fixture_dir, "record", stub.base_url)
        report = run_experiment(cfg)
        for row in report.body["variants"]:
            print(
                f"  {row['name']}: pre={row['pre_hit_ratio']:.4f} "
                f"post={row['post_hit_ratio']:.4f}"
            )
        probe_cfg = ProbeConfig(model="stub-chat")
        transport = Transport(
            mode="record", base_url=stub.base_url, fixture_dir=fixture_dir
        )
        for row in benchmark_rows:
            completion_probe(row["text"], probe_cfg, transport)
    count = len(list(fixture_dir.glob("*.json")))
    print(f"fixtures: {count} files -> {fixture_dir}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--force", action="store_true", help="rebuild everything")
    args = parser.parse_args()
    if args.force:
        for sub in ("synthetic", "benchmark", "fixtures"):
            shutil.rmtree(DATA / sub, ignore_errors=True)
    build_corpus(DATA / "synthetic")
    rows = build_benchmark(DATA / "benchmark")
    record_fixtures(DATA / "fixtures", rows)


if __name__ == "__main__":
    main()
