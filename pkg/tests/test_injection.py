import pytest

from conftest import make_catalog
from promosim.corpus import chronological_split, popularity_partition
from promosim.errors import ConfigError
from promosim.injection import forge_profiles, forged_interactions, write_profiles_jsonl
from promosim.recommender import FORGED_PREFIX


def _catalog(n_users=50, per_user=4, n_items=40):
    items = {f"i{j:03d}": f"text {j}" for j in range(n_items)}
    inter = []
    for u in range(n_users):
        for t in range(per_user):
            inter.append((f"u{u:03d}", f"i{(u * 7 + t * 3) % n_items:03d}", t))
    return make_catalog(items, inter)


def test_zero_attack_size_yields_nothing():
    catalog = _catalog()
    index = popularity_partition(catalog)
    assert forge_profiles("random", 0.0, catalog, index, ["i001"], seed=0) == []


def test_guardrail_rejects_oversized_attack():
    catalog = _catalog()
    index = popularity_partition(catalog)
    with pytest.raises(ConfigError):
        forge_profiles("random", 0.06, catalog, index, ["i001"], seed=0)
    with pytest.raises(ConfigError):
        forge_profiles("mystery", 0.01, catalog, index, ["i001"], seed=0)
    with pytest.raises(ConfigError):
        forge_profiles("random", 0.01, catalog, index, [], seed=0)


def test_profile_count_is_ceiling_of_fraction():
    # 13,952 users at 0.1% -> 14 forged profiles
    catalog = make_catalog(
        {"dummy": "text", "filler": "other text"},
        [(f"u{n}", "dummy", n) for n in range(13952)],
    )
    index = popularity_partition(catalog)
    profiles = forge_profiles("random", 0.001, catalog, index, ["dummy"], seed=1)
    assert len(profiles) == 14


def test_each_profile_carries_every_target_once_with_min_size():
    catalog = _catalog()
    index = popularity_partition(catalog)
    targets = ["i001", "i002", "i003"]
    profiles = forge_profiles("random", 0.04, catalog, index, targets, seed=2)
    assert len(profiles) == 2  # ceil(0.04 * 50)
    avg = round(len(catalog.interactions) / catalog.n_users)  # = 4
    for profile in profiles:
        item_ids = [x.item_id for x in profile.interactions]
        for t in targets:
            assert item_ids.count(t) == 1
        assert len(item_ids) == max(avg, len(targets) + 1)
        assert profile.user_id.startswith(FORGED_PREFIX)


def test_bandwagon_fillers_are_popular_random_fillers_are_not_targets():
    catalog = _catalog()
    index = popularity_partition(catalog)
    targets = ["i001"]
    for kind in ("random", "bandwagon"):
        profiles = forge_profiles(kind, 0.05, catalog, index, targets, seed=3)
        for profile in profiles:
            fillers = [x.item_id for x in profile.interactions if x.item_id not in targets]
            assert all(f in catalog.items for f in fillers)
            if kind == "bandwagon":
                assert all(f in set(index.popular_set) for f in fillers)


def test_deterministic_given_kind_rho_seed():
    catalog = _catalog()
    index = popularity_partition(catalog)
    a = forge_profiles("bandwagon", 0.05, catalog, index, ["i001"], seed=9)
    b = forge_profiles("bandwagon", 0.05, catalog, index, ["i001"], seed=9)
    assert a == b
    c = forge_profiles("bandwagon", 0.05, catalog, index, ["i001"], seed=10)
    assert a != c


def test_random_and_bandwagon_share_everything_but_filler_pool():
    catalog = _catalog()
    index = popularity_partition(catalog)
    ra = forge_profiles("random", 0.05, catalog, index, ["i001"], seed=4)
    ba = forge_profiles("bandwagon", 0.05, catalog, index, ["i001"], seed=4)
    assert [p.user_id for p in ra] == [p.user_id for p in ba]
    assert [len(p.interactions) for p in ra] == [len(p.interactions) for p in ba]


def test_targets_last_by_default_and_timestamps_at_train_end():
    catalog = _catalog()
    index = popularity_partition(catalog)
    split = chronological_split(catalog)
    max_train_ts = max(x.timestamp for x in split.train)
    targets = ["i001", "i005"]
    profiles = forge_profiles("random", 0.05, catalog, index, targets, seed=5, split=split)
    for profile in profiles:
        seq = profile.interactions
        assert [x.item_id for x in seq[-2:]] == sorted(targets)  # targets last
        assert all(x.timestamp > max_train_ts for x in seq)
        stamps = [x.timestamp for x in seq]
        assert stamps == sorted(stamps)


def test_grow_with_rho_prefix_property():
    catalog = _catalog(n_users=200)
    index = popularity_partition(catalog)
    small = forge_profiles("random", 0.01, catalog, index, ["i001"], seed=6)
    large = forge_profiles("random", 0.02, catalog, index, ["i001"], seed=6)
    assert len(small) == 2 and len(large) == 4
    assert large[: len(small)] == small  # same seed extends, never reshuffles


def test_extra_train_does_not_touch_eval_splits():
    catalog = _catalog()
    index = popularity_partition(catalog)
    split = chronological_split(catalog)
    before_valid, before_test = list(split.valid), list(split.test)
    profiles = forge_profiles("random", 0.05, catalog, index, ["i001"], seed=7, split=split)
    augmented = split.with_extra_train(forged_interactions(profiles))
    assert augmented.valid == before_valid
    assert augmented.test == before_test
    assert len(augmented.train) == len(split.train) + sum(
        len(p.interactions) for p in profiles
    )


def test_profiles_serialize_to_interactions_jsonl(tmp_path):
    catalog = _catalog()
    index = popularity_partition(catalog)
    profiles = forge_profiles("random", 0.05, catalog, index, ["i001"], seed=8)
    path = tmp_path / "forged.jsonl"
    write_profiles_jsonl(profiles, path)
    import json

    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert all(set(r) == {"user_id", "item_id", "timestamp"} for r in rows)
    assert len(rows) == sum(len(p.interactions) for p in profiles)
