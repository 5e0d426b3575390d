"""Shared fixtures: tiny corpus builders, fixture-dir helpers, stub transports."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from promosim.corpus import Catalog, Interaction, Item
from promosim.llm_client import Transport, canonical_hash

DATA_DIR = Path(__file__).parent / "data"


def make_catalog(items: dict[str, str], interactions: list[tuple[str, str, int]]) -> Catalog:
    """Catalog from {item_id: text} and (user, item, timestamp) tuples; the
    text goes into the title field."""
    return Catalog(
        items={i: Item(i, title=text, description="") for i, text in items.items()},
        interactions=[Interaction(u, i, ts) for u, i, ts in interactions],
    )


def write_corpus_files(
    tmp_path: Path, items: list[dict], interactions: list[dict]
) -> tuple[Path, Path]:
    items_path = tmp_path / "items.jsonl"
    inter_path = tmp_path / "interactions.jsonl"
    items_path.write_text("\n".join(json.dumps(x) for x in items) + "\n")
    inter_path.write_text(
        "\n".join(json.dumps(x) for x in interactions) + ("\n" if interactions else "")
    )
    return items_path, inter_path


def write_chat_fixture(
    fixture_dir: Path, model: str, content: str, reply: str, temperature: float = 0.0
) -> str:
    """Create a replay fixture for a single-user-message chat request; returns
    the request hash."""
    payload = {
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "temperature": temperature,
        "max_tokens": None,
    }
    digest = canonical_hash(payload)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    (fixture_dir / f"{digest}.json").write_text(
        json.dumps({"request": payload, "response": {"content": reply}})
    )
    return digest


def write_embed_fixture(fixture_dir: Path, model: str, text: str, vector: list[float]) -> str:
    payload = {"model": model, "input": text}
    digest = canonical_hash(payload)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    (fixture_dir / f"{digest}.json").write_text(
        json.dumps({"request": payload, "response": {"embedding": vector}})
    )
    return digest


@pytest.fixture
def replay_transport(tmp_path):
    fixture_dir = tmp_path / "fixtures"
    fixture_dir.mkdir(exist_ok=True)
    return Transport(mode="replay", fixture_dir=fixture_dir)
