import numpy as np
import pytest

from conftest import write_chat_fixture
from promosim.attack import load_template, render
from promosim.defense import (
    DetectionScore,
    ProbeConfig,
    classify,
    completion_probe,
    evaluate_detection,
    run_detection,
    score_sa,
    score_sr,
    split_words,
    write_detection_csv,
)
from promosim.embedder import EmbedConfig, embed_text
from promosim.errors import ProbeError, UsageError
from promosim.llm_client import Transport
from promosim.recommender import ItemMatrix, RecommenderSnapshot, recommend_topk


def test_split_words_midpoint():
    text = "one two three four five six seven eight nine ten"
    t_x, t_y = split_words(text, 0.5)
    assert t_x == "one two three four five"
    assert t_y == "six seven eight nine ten"
    assert f"{t_x} {t_y}" == text


def test_split_words_nonempty_halves_and_reconstruction():
    for n in range(2, 12):
        text = " ".join(f"w{i}" for i in range(n))
        for frac in (0.1, 0.5, 0.9):
            t_x, t_y = split_words(text, frac)
            assert t_x and t_y
            assert f"{t_x} {t_y}" == text


def test_split_words_single_word_unprobеable():
    with pytest.raises(ProbeError):
        split_words("lonely", 0.5)


def test_probe_defaults():
    cfg = ProbeConfig()
    assert cfg.completions == 3
    assert (cfg.ngram_min, cfg.ngram_max) == (1, 4)
    assert cfg.beta == 50.0
    assert cfg.threshold == 0.1
    assert cfg.split_fraction == 0.5


def test_completion_probe_replays_canned_strings(tmp_path):
    text = "alpha bravo charlie delta echo foxtrot"
    t_x, t_y = split_words(text, 0.5)
    prompt = render(
        load_template("completion_probe"), prefix=t_x, word_count=str(len(t_y.split()))
    )
    write_chat_fixture(tmp_path, "m", prompt, "golf hotel india")
    transport = Transport(mode="replay", fixture_dir=tmp_path)
    probe = completion_probe(text, ProbeConfig(model="m"), transport)
    assert probe.t_x == t_x and probe.t_y == t_y
    assert probe.completions == ["golf hotel india"] * 3  # K identical at temperature 0


def test_score_sa_boundary_identities_exact():
    t = "lavender oat cleansing ritual balm"
    assert score_sa(t, [t, t, t]) == 1.0
    assert score_sa(t, ["zinc rotor flange bolt gasket"] * 3) == 0.0


def test_score_sa_hand_value():
    # unigrams 2/3, bigrams 1/2 -> normalized (2/3 + 1/2) / 2 = 7/12
    value = score_sa("a b c", ["a b d"], n0=1, n_max=2, normalize=True)
    assert value == pytest.approx(7.0 / 12.0, abs=1e-12)
    raw = score_sa("a b c", ["a b d"], n0=1, n_max=2, normalize=False)
    assert raw == pytest.approx(7.0 / 6.0, abs=1e-12)


def test_score_sa_short_suffix_ngrams_contribute_zero():
    # a 2-word suffix has no 3-grams or 4-grams; those terms add 0
    value = score_sa("a b", ["a b"], n0=1, n_max=4, normalize=True)
    assert value == pytest.approx(2.0 / 4.0, abs=1e-12)


def test_score_sa_completion_order_invariance():
    completions = ["a b d", "x y z", "a c e"]
    base = score_sa("a b c", completions)
    for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
        assert score_sa("a b c", [completions[i] for i in perm]) == pytest.approx(base)


def test_score_sa_bounds_random():
    rng = np.random.default_rng(31)
    vocab = [f"w{i}" for i in range(30)]
    for _ in range(30):
        t_y = " ".join(rng.choice(vocab, size=rng.integers(1, 15)))
        comps = [
            " ".join(rng.choice(vocab, size=rng.integers(1, 15)))
            for _ in range(int(rng.integers(1, 4)))
        ]
        value = score_sa(t_y, comps)
        assert 0.0 <= value <= 1.0


def _sr_snapshot():
    """100 users, k=50, 53 items. The probed item is recommended to exactly
    5 users under text "alpha", 0 under "beta", 20 under "gamma"."""
    cfg = EmbedConfig(dimension=32)
    v_a = embed_text("alpha", cfg)
    v_b = embed_text("beta", cfg)
    v_c = embed_text("gamma", cfg)
    # orthonormalize a filler direction against all three
    rng = np.random.default_rng(41)
    v_o = rng.normal(size=32)
    for v in (v_a, v_b, v_c):
        v_o -= (v_o @ v) * v
    v_o /= np.linalg.norm(v_o)
    assert max(abs(float(v_a @ v_b)), abs(float(v_a @ v_c)), abs(float(v_b @ v_c))) < 0.45
    chaff = (v_a + v_b + v_c + 4 * v_o) / np.linalg.norm(v_a + v_b + v_c + 4 * v_o)
    # chaff scores ~0.55+ for profile v_o users; well above cross-text cosines
    ids = [f"chaff{j:02d}" for j in range(50)] + ["probe", "spare_a", "spare_b"]
    mat = np.stack([chaff] * 50 + [v_a, v_b, v_c])
    reps = ItemMatrix(ids, mat)
    profiles = {}
    for n in range(5):
        profiles[f"hot{n}"] = v_a
    for n in range(20):
        profiles[f"warm{n}"] = v_c
    for n in range(75):
        profiles[f"cold{n}"] = v_o
    texts = {i: "alpha" if i == "probe" else "filler text" for i in ids}
    return RecommenderSnapshot(reps, profiles, {}, 50, cfg, None, texts)


def test_score_sr_spec_arithmetic():
    snap = _sr_snapshot()
    assert snap.recnum("probe", "alpha") == 5
    assert snap.recnum("probe", "beta") == 0
    assert snap.recnum("probe", "gamma") == 20
    # |5 - 0| / (100 * 50) = 0.001
    assert score_sr("probe", "alpha", ["beta"], snap) == pytest.approx(0.001, abs=1e-15)
    # K=2 shifts 0.001 and 0.003 -> mean 0.002
    assert score_sr("probe", "alpha", ["beta", "gamma"], snap) == pytest.approx(
        0.002, abs=1e-15
    )
    # completions identical to the true suffix shift nothing
    assert score_sr("probe", "alpha", ["alpha", "alpha"], snap) == 0.0


def test_score_sr_matches_topk_rerun_oracle():
    snap = _sr_snapshot()
    for text in ("alpha", "beta", "gamma"):
        swapped = snap.item_reps.matrix.copy()
        swapped[snap.item_reps.index["probe"]] = snap.embed_item_text(text)
        lists = recommend_topk(
            snap.profiles, ItemMatrix(snap.item_reps.item_ids, swapped), k=snap.k
        )
        oracle = sum(1 for items in lists.values() if "probe" in items)
        assert snap.recnum("probe", text) == oracle


def test_score_sr_unknown_item():
    snap = _sr_snapshot()
    with pytest.raises(UsageError):
        score_sr("ghost", "alpha", ["beta"], snap)


def test_classify_rule_and_default_threshold():
    verdict = classify(0.0, 0.0)
    assert verdict.label == "benign"
    verdict = classify(0.08, 0.001, beta=50.0, epsilon=0.1)
    assert verdict.s == pytest.approx(0.13, abs=1e-12)
    assert verdict.label == "malicious"
    assert classify(0.099, 0.0).label == "benign"  # epsilon defaults to 0.1


def test_classify_monotone():
    rng = np.random.default_rng(51)
    for _ in range(50):
        s_a, s_r = float(rng.uniform(0, 0.3)), float(rng.uniform(0, 0.004))
        base = classify(s_a, s_r)
        bigger = classify(s_a + float(rng.uniform(0, 0.2)), s_r + float(rng.uniform(0, 0.002)))
        if base.label == "malicious":
            assert bigger.label == "malicious"


def test_evaluate_detection_values():
    perfect = evaluate_detection(["malicious", "benign"], ["malicious", "benign"])
    assert (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)
    labels = ["malicious"] * 10 + ["benign"] * 10
    truth = ["malicious"] * 9 + ["benign"] + ["malicious"] + ["benign"] * 9
    metrics = evaluate_detection(labels, truth)
    assert metrics.precision == pytest.approx(0.9)
    assert metrics.recall == pytest.approx(0.9)
    assert metrics.f1 == pytest.approx(0.9)
    with pytest.raises(UsageError):
        evaluate_detection(["benign"], ["benign", "benign"])


def test_evaluate_detection_zero_division_flagged():
    metrics = evaluate_detection(["benign", "benign"], ["benign", "benign"])
    assert metrics == type(metrics)(0.0, 0.0, 0.0, True)


def test_run_detection_and_csv(tmp_path):
    texts = {
        "good": "oak drawer handle with brass screws included in the box",
        "bad": "velvet glow serum lifts and brightens tired skin quickly overnight",
    }
    cfg = ProbeConfig(model="m", completions=2)
    for item_id, text in texts.items():
        t_x, t_y = split_words(text, 0.5)
        prompt = render(
            load_template("completion_probe"), prefix=t_x, word_count=str(len(t_y.split()))
        )
        reply = t_y if item_id == "bad" else "entirely unrelated words here"
        write_chat_fixture(tmp_path, "m", prompt, reply)
    transport = Transport(mode="replay", fixture_dir=tmp_path)
    rows, metrics = run_detection(texts, {"bad"}, cfg, transport, snapshot=None)
    by_id = {r.item_id: r for r in rows}
    assert by_id["bad"].label == "malicious" and by_id["bad"].s_a == 1.0
    assert by_id["good"].label == "benign"
    assert metrics.f1 == 1.0
    path = tmp_path / "detection.csv"
    write_detection_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "item_id,s_a,s_r,s,label,truth"
    assert len(lines) == 3
