import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spnclust.metrics import (
    PairCounts,
    adjusted_rand,
    append_metrics_csv,
    cluster_ratio,
    evaluate,
    f_measure,
    pair_counts,
)

from oracles import brute_pair_counts, hubert_arabie_ari


def test_perfect_prediction_no_errors():
    c = pair_counts([0, 0, 1, 1, 2], ["a", "a", "b", "b", "c"])
    assert c.fp_bar == 0 and c.fn == 0
    assert f_measure(c) == (1.0, 1.0, 1.0)


def test_all_unclustered():
    c = pair_counts([-1] * 5, list("aabbb"))
    assert c.tp_bar == 0 and c.fp_bar == 0 and c.fn == 4


def test_four_item_example():
    c = pair_counts([1, 1, 1, 2], list("aabb"))
    assert (c.tp_bar, c.fp_bar, c.fn, c.tn) == (1, 2, 1, 2)
    p, r, f = f_measure(c)
    assert p == pytest.approx(1 / 3) and r == pytest.approx(1 / 2) and f == pytest.approx(0.4)


def test_zero_tp_convention():
    assert f_measure(PairCounts(0, 3, 1, 2)) == (0.0, 0.0, 0.0)


def test_ari_identity():
    truth = list("aaabbc")
    assert evaluate([0, 0, 0, 1, 1, 2], truth).ari == pytest.approx(1.0)


def test_ari_six_item_instance():
    pred = [1, 1, 2, 2, 3, 3]
    truth = list("aaabbb")
    _, expected = hubert_arabie_ari(pred, truth)
    ri, ari = adjusted_rand(pair_counts(pred, truth), pred, truth)
    assert ari == pytest.approx(expected, abs=1e-12)


def test_ari_matches_sklearn_without_outliers():
    from sklearn.metrics import adjusted_rand_score

    g = np.random.default_rng(0)
    pred = g.integers(0, 4, 40)
    truth = g.integers(0, 3, 40)
    assert evaluate(pred, truth.tolist()).ari == pytest.approx(adjusted_rand_score(truth, pred), abs=1e-12)


def test_single_cluster_chance_level():
    n = 2000
    truth = [i % 2 for i in range(n)]
    assert abs(evaluate([0] * n, truth).ari) < 1e-9


def test_cluster_ratio_examples():
    truth = [i % 5 for i in range(50)]
    assert cluster_ratio(truth, truth) == 1.0
    assert cluster_ratio(list(range(50)), truth) == 10.0
    assert cluster_ratio([0] * 50, truth) == 0.2


partitions = st.integers(1, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-1, 3), min_size=n, max_size=n),
        st.lists(st.sampled_from("abc"), min_size=n, max_size=n),
    )
)


@settings(max_examples=200, deadline=None)
@given(partitions)
def test_pair_counts_match_brute_force(case):
    pred, truth = case
    c = pair_counts(pred, truth)
    assert (c.tp_bar, c.fp_bar, c.tn, c.fn) == brute_pair_counts(pred, truth)


@settings(max_examples=200, deadline=None)
@given(partitions)
def test_ari_matches_oracle(case):
    pred, truth = case
    c = pair_counts(pred, truth)
    ri, ari = adjusted_rand(c, pred, truth)
    eri, eari = hubert_arabie_ari(pred, truth)
    assert ri == pytest.approx(eri, abs=1e-12)
    assert ari == pytest.approx(eari, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(partitions, st.permutations(range(4)))
def test_relabeling_invariance(case, perm):
    pred, truth = case
    relabeled = [perm[p] if p >= 0 else -1 for p in pred]
    assert evaluate(pred, truth) == evaluate(relabeled, truth)


@settings(max_examples=100, deadline=None)
@given(partitions)
def test_scores_bounded(case):
    pred, truth = case
    r = evaluate(pred, truth)
    for v in (r.precision, r.recall, r.f_measure, r.ri):
        assert 0.0 <= v <= 1.0
    assert r.ari <= 1.0 + 1e-12


def test_length_mismatch():
    with pytest.raises(ValueError):
        pair_counts([0, 1], ["a"])


def test_metrics_csv_appends(tmp_path):
    path = tmp_path / "m.csv"
    rep = evaluate([0, 0, 1], list("aab"))
    append_metrics_csv(path, "r1", rep)
    append_metrics_csv(path, "r2", rep)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("run,precision")
    assert len(lines) == 3 and lines[2].startswith("r2,1.000000")
