import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefiqs import evaluation as E
from prefiqs import pruning, scoring
from prefiqs.errors import (DimensionMismatch, EmptyGenuine, EmptyGrid, EmptyScores, GridTooShort,
                            InsufficientImpostors, MissingEmbedding, MissingQuality)
from prefiqs.model import forward_batch


def brute_threshold(scores, fmr):
    """Scan every candidate threshold directly."""
    n = len(scores)
    k = math.floor(fmr * n + 1e-9)
    for c in sorted(set(scores)) + [math.inf]:
        if sum(s >= c for s in scores) <= k:
            return c


def unit(angle):
    return np.array([math.cos(angle), math.sin(angle)])


def hand_fixture():
    """Four images with hand-set comparison scores (injected in place of cosine scoring)."""
    ids = ["A", "B", "C", "D"]
    scores = {("A", "B"): 0.5, ("C", "D"): 0.95, ("A", "C"): 0.9, ("A", "D"): 0.2,
              ("B", "D"): 0.1, ("B", "C"): 0.05}
    genuine = {("A", "B"), ("C", "D")}
    pairs = [(a, b, (a, b) in genuine) for (a, b) in scores]
    q = {"A": 0.1, "B": 0.2, "C": 0.3, "D": 0.4}
    return ids, scores, pairs, q


@pytest.fixture
def hand(monkeypatch):
    ids, scores, pairs, q = hand_fixture()

    def fake_pair_scores(embeddings, prs):
        return np.array([scores[(a, b)] for a, b, _ in prs]), np.array([g for _, _, g in prs])

    monkeypatch.setattr(E, "pair_scores", fake_pair_scores)
    emb = {i: np.zeros(2) for i in ids}
    return emb, pairs, q


def test_cosine_examples():
    e = unit(0.3)
    assert E.cosine_similarity(e, e) == pytest.approx(1.0)
    assert E.cosine_similarity(e, -e) == pytest.approx(-1.0)
    assert E.cosine_similarity([1, 0], [0, 1]) == 0.0
    assert E.cosine_similarity([0.6, 0.8], [1, 0]) == 0.6
    with pytest.raises(DimensionMismatch):
        E.cosine_similarity([1, 0], [1, 0, 0])


def test_threshold_examples():
    imp = [0.9, 0.5, 0.4, 0.3, 0.1]
    assert E.threshold_at_fmr(imp, 0.2).threshold == 0.9
    t = E.threshold_at_fmr(imp, 0.4)
    assert (t.threshold, t.k, t.achieved_fmr) == (0.5, 2, 0.4)
    with pytest.warns(InsufficientImpostors):
        t = E.threshold_at_fmr(imp, 0.1)
    assert math.isinf(t.threshold) and t.insufficient
    with pytest.raises(EmptyScores):
        E.threshold_at_fmr([], 0.1)


def test_threshold_with_ties():
    # k = 2 but three scores tie at the top: no candidate accepts exactly 2, so step to +inf
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert math.isinf(E.threshold_at_fmr([0.7, 0.7, 0.7, 0.1, 0.0], 0.4).threshold)
    assert E.threshold_at_fmr([0.9, 0.5, 0.5, 0.1], 0.5).threshold == 0.9


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from([i / 20 for i in range(-20, 21)]), min_size=1, max_size=60),
       st.sampled_from([0.01, 0.05, 0.1, 0.25, 0.5, 0.9]))
def test_threshold_matches_brute_force(scores, fmr):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientImpostors)
        assert E.threshold_at_fmr(scores, fmr).threshold == brute_threshold(scores, fmr)


def test_fnmr_examples():
    assert E.fnmr_at_threshold([0.95, 0.8, 0.6], 0.9) == pytest.approx(2 / 3)
    assert E.fnmr_at_threshold([0.95, 0.8, 0.6], -math.inf) == 0.0
    assert E.fnmr_at_threshold([0.95, 0.8, 0.6], math.inf) == 1.0
    with pytest.raises(EmptyGenuine):
        E.fnmr_at_threshold([], 0.5)


def test_hand_edc(hand):
    emb, pairs, q = hand
    curve = E.edc_curve(emb, pairs, q, fmr=0.25, grid=[0, 0.25])
    assert curve.threshold == 0.9
    assert curve.points == [(0.0, 0.5), (0.25, 0.0)]
    assert abs(E.pauc(curve.points + [(0.3, 0.0)], 0.3) * 1e3 - 62.5) <= 1e-9
    assert abs(E.pauc(curve, 0.3, extend=True) * 1e3 - 62.5) <= 1e-9
    with pytest.raises(GridTooShort):
        E.pauc(curve, 0.3)


def test_edc_carries_forward_when_no_pair_survives(hand):
    emb, pairs, q = hand
    curve = E.edc_curve(emb, pairs, q, fmr=0.25, grid=[0, 0.25, 0.5, 0.75])
    assert curve.carried == [False, False, False, True]
    assert curve.points[-1][1] == curve.points[-2][1]


def test_edc_errors(hand):
    emb, pairs, q = hand
    with pytest.raises(EmptyGrid):
        E.edc_curve(emb, pairs, q, grid=[])
    with pytest.raises(MissingQuality):
        E.edc_curve(emb, pairs, {"A": 1.0}, grid=[0])
    with pytest.raises(ValueError):
        E.edc_curve(emb, pairs, q, grid=[0.1, 0.2])


def test_missing_embedding():
    with pytest.raises(MissingEmbedding):
        E.pair_scores({"a": unit(0)}, [("a", "b", True)])


def test_pauc_examples():
    assert E.pauc([(0, 0.5), (0.25, 0), (0.3, 0)], 0.3) * 1e3 == pytest.approx(62.5, abs=1e-9)
    assert E.pauc([(0, 0), (0.5, 0)], 0.3) == 0.0
    assert E.pauc([(0, 0.2), (0.1, 0.2), (0.4, 0.2)], 0.3) == pytest.approx(0.3 * 0.2, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=30), st.integers(1, 28))
def test_pauc_additivity(ys, cut):
    xs = [i / 100 for i in range(len(ys))]
    pts = list(zip(xs, ys))
    cut = min(cut, len(ys) - 1)
    a = xs[cut]
    whole = E.pauc(pts, xs[-1])
    left = E.pauc(pts, a)
    right = E.pauc([(x - a, y) for x, y in pts[cut:]], xs[-1] - a)
    assert abs(whole - (left + right)) <= 1e-12


def test_verification_accuracy_examples():
    assert E.verification_accuracy([0.9], [0.1])[0] == 1.0
    assert E.verification_accuracy([0.1], [0.9])[0] == 0.5
    assert E.verification_accuracy([0.9, 0.2], [0.5])[0] == pytest.approx(2 / 3)
    with pytest.raises(EmptyScores):
        E.verification_accuracy([], [0.5])


def test_verification_accuracy_brute_force(rng):
    for _ in range(50):
        g = rng.choice(np.linspace(0, 1, 11), size=int(rng.integers(1, 15)))
        i = rng.choice(np.linspace(0, 1, 11), size=int(rng.integers(1, 15)))
        best = max((np.sum(g >= t) + np.sum(i < t)) / (g.size + i.size)
                   for t in np.concatenate([[-np.inf, np.inf], np.linspace(-0.05, 1.05, 221)]))
        assert E.verification_accuracy(g, i)[0] == pytest.approx(best)


# ---------------------------------------------------------------- properties on real embeddings


def _random_setup(rng, n=40, d=6):
    ids = [f"i{j:03d}" for j in range(n)]
    labels = rng.integers(0, 8, n)
    cent = rng.standard_normal((8, d))
    X = cent[labels] + 0.8 * rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    emb = dict(zip(ids, X))
    pairs = [(ids[a], ids[b], bool(labels[a] == labels[b])) for a in range(n) for b in range(a + 1, n)]
    q = {s: float(v) for s, v in zip(ids, rng.random(n))}
    return emb, pairs, q


def test_grid_zero_equals_plain_fnmr(rng):
    emb, pairs, q = _random_setup(rng)
    s, g = E.pair_scores(emb, pairs)
    tau = E.threshold_at_fmr(s[~g], 0.05).threshold
    curve = E.edc_curve(emb, pairs, q, 0.05, [0])
    assert curve.points == [(0.0, E.fnmr_at_threshold(s[g], tau))]
    flat = E.edc_curve(emb, pairs, {k: 0.5 for k in q}, 0.05, [0])
    assert flat.points == curve.points


def test_quality_scale_invariance(rng):
    emb, pairs, q = _random_setup(rng)
    a = E.edc_curve(emb, pairs, q, 0.05)
    b = E.edc_curve(emb, pairs, {k: 7.5 * v for k, v in q.items()}, 0.05)
    assert a.points == b.points


def test_perfect_separation_gives_zero_fnmr():
    ids = [f"{c}{i}" for c in "ab" for i in range(4)]
    emb = {s: unit((0.0 if s[0] == "a" else 2.0) + 0.01 * int(s[1:]) ** 2) for s in ids}
    pairs = [(x, y, x[0] == y[0]) for i, x in enumerate(ids) for y in ids[i + 1:]]
    curve = E.edc_curve(emb, pairs, {s: float(i) for i, s in enumerate(ids)}, 0.25)
    assert all(f == 0.0 for _, f in curve.points)


def test_anti_quality_never_pointwise_lower(fixture_bundle):
    data, result, pairs, _ = fixture_bundle
    m = result.model
    pm, _ = pruning.prune_model(m, 0.4)
    D = scoring.drift_batch(m, pm, data.X)
    emb = dict(zip(data.ids, forward_batch(m, data.X)))
    grid = [i / 100 for i in range(31)]
    good = E.edc_curve(emb, pairs, dict(zip(data.ids, 1 - D / 2)), E.DEFAULT_FMR, grid)
    anti = E.edc_curve(emb, pairs, dict(zip(data.ids, D)), E.DEFAULT_FMR, grid)
    assert not all(a <= g for (_, a), (_, g) in zip(anti.points[1:], good.points[1:]))
    assert anti.points[-1][1] > good.points[-1][1]


def test_csv_roundtrips(tmp_path, rng):
    emb, pairs, q = _random_setup(rng, n=6)
    E.write_pairs_csv(pairs, tmp_path / "p.csv")
    assert E.read_pairs_csv(tmp_path / "p.csv") == [E.Pair(*p) for p in pairs]
    E.write_embeddings_csv(emb, tmp_path / "e.csv")
    back = E.read_embeddings_csv(tmp_path / "e.csv")
    assert all(back[k].tobytes() == emb[k].tobytes() for k in emb)


def test_edc_sidecar(tmp_path, hand):
    emb, pairs, q = hand
    curve = E.edc_curve(emb, pairs, q, fmr=0.25, grid=[0, 0.25, 0.3])
    side = E.write_edc(curve, tmp_path / "c.csv", tmp_path / "c.json")
    assert (tmp_path / "c.csv").read_text().splitlines() == ["discard_fraction,fnmr", "0,0.5", "0.25,0", "0.29999999999999999,0"]
    assert side["pauc_x1e3"] == pytest.approx(62.5, abs=1e-9) and side["auc_x1e3"] is None
    with pytest.warns(InsufficientImpostors):
        curve = E.edc_curve(emb, pairs, q, fmr=0.1, grid=[0])
    side = E.write_edc(curve, tmp_path / "d.csv", tmp_path / "d.json")
    assert side["threshold"] == "+inf" and side["warning"] == "InsufficientImpostors"
