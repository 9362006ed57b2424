import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsdapt.metrics import (
    MetricKind,
    TAGS,
    coral_distance,
    correlation,
    gaussian_kernel,
    homm,
    kmmd,
    median_heuristic,
    mmd_linear,
    score,
    score_rows,
)


def test_correlation_examples():
    x = np.array([1.0, 3.0, 2.0])
    assert correlation(x, [x], "PC") == pytest.approx(1.0)
    assert correlation(x, [-x], "PC") == pytest.approx(-1.0)
    assert correlation([1.0, 0.0], [[2.0, 0.0], [0.0, 5.0]], "CC") == 1.0


def test_pearson_zero_variance_is_flagged():
    value, flagged = correlation([1.0, 1.0, 1.0], [[1.0, 2.0, 3.0]], "PC", return_flag=True)
    assert value == 0.0 and flagged
    _, flagged = correlation([1.0, 2.0, 4.0], [[1.0, 2.0, 3.0]], "PC", return_flag=True)
    assert not flagged


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.floats(-50.0, 50.0))
def test_pearson_affine_invariance(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    x, Y = rng.standard_normal(8), rng.standard_normal((5, 8))
    assert correlation(alpha * x + beta, Y, "PC") == pytest.approx(correlation(x, Y, "PC"), abs=1e-9)


def test_mmd_linear_examples():
    rng = np.random.default_rng(0)
    X, Y = rng.standard_normal((7, 4)), rng.standard_normal((9, 4))
    assert mmd_linear(X, X) == 0.0
    assert mmd_linear(X[:1], Y[:1]) == pytest.approx(((X[0] - Y[0]) ** 2).sum(), abs=1e-12)
    mx = [sum(X[i, k] for i in range(7)) / 7 for k in range(4)]
    my = [sum(Y[i, k] for i in range(9)) / 9 for k in range(4)]
    assert mmd_linear(X, Y) == pytest.approx(sum((a - b) ** 2 for a, b in zip(mx, my)), abs=1e-12)


def _kmmd_loops(X, Y, s):
    k = lambda u, v: math.exp(-sum((a - b) ** 2 for a, b in zip(u, v)) / (2 * s * s))
    xx = sum(k(u, v) for u in X for v in X) / len(X) ** 2
    yy = sum(k(u, v) for u in Y for v in Y) / len(Y) ** 2
    xy = sum(k(u, v) for u in X for v in Y) / (len(X) * len(Y))
    return xx + yy - 2 * xy


def test_kmmd_examples():
    rng = np.random.default_rng(1)
    X, Y = rng.standard_normal((20, 3)), rng.standard_normal((20, 3)) + 0.5
    assert abs(kmmd(X, X, 1.3)) <= 1e-12
    x, y = X[:1], Y[:1]
    assert kmmd(x, y, 0.7) == pytest.approx(2 - 2 * math.exp(-((x - y) ** 2).sum() / (2 * 0.49)), abs=1e-14)
    s = median_heuristic(np.vstack([X, Y]))
    assert kmmd(X, Y, s) == pytest.approx(_kmmd_loops(X.tolist(), Y.tolist(), s), abs=1e-12)
    with pytest.raises(ValueError):
        kmmd(X, Y, 0.0)


def test_kmmd_bandwidth_limits():
    rng = np.random.default_rng(2)
    X, Y = rng.standard_normal((6, 2)), rng.standard_normal((8, 2))
    vals = [kmmd(X, Y, s) for s in (1e-3, 1.0, 1e3)]
    # no coincident points: the kernel matrices tend to identity
    assert vals[0] == pytest.approx(1 / 6 + 1 / 8, abs=1e-12)
    assert vals[2] <= 1e-5
    assert vals[0] > vals[1] > vals[2]


def test_homm_order_one_is_mmd_bitwise():
    rng = np.random.default_rng(3)
    for _ in range(10):
        X, Y = rng.standard_normal((11, 5)), rng.standard_normal((7, 5))
        assert homm(X, Y, order=1) == mmd_linear(X, Y)


def test_homm_order_two_on_centered_sets():
    rng = np.random.default_rng(4)
    X, Y = rng.standard_normal((12, 4)), rng.standard_normal((9, 4)) * 2
    X -= X.mean(axis=0)
    Y -= Y.mean(axis=0)
    M2x = np.zeros((4, 4))
    M2y = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            M2x[i, j] = sum(r[i] * r[j] for r in X) / len(X)
            M2y[i, j] = sum(r[i] * r[j] for r in Y) / len(Y)
    assert homm(X, Y, order=2) == pytest.approx(((M2x - M2y) ** 2).sum(), abs=1e-12)


def test_homm_subsampling_is_seeded_and_unbiased_in_scale():
    rng = np.random.default_rng(5)
    X, Y = rng.standard_normal((30, 6)), rng.standard_normal((30, 6)) + 0.3
    exact = homm(X, Y, order=3)
    a = homm(X, Y, order=3, cap=150, seed=1)
    assert a == homm(X, Y, order=3, cap=150, seed=1)
    est = np.mean([homm(X, Y, order=3, cap=150, seed=s) for s in range(200)])
    assert est == pytest.approx(exact, rel=0.1)
    assert homm(X, X, order=3, cap=150) == 0.0


def test_coral_distance_scalar_oracles():
    X = np.array([[-1.0], [1.0]]) / np.sqrt(2.0)  # variance 1
    Y = 2.0 * X  # variance 4
    assert coral_distance(X, Y, "Jeff", ridge=0.0) == pytest.approx(1.125, abs=1e-12)
    assert coral_distance(X, Y, "Stein", ridge=0.0) == pytest.approx(math.log(2.5) - 0.5 * math.log(4.0), abs=1e-12)
    assert coral_distance(X, Y, "standard", ridge=0.0) == pytest.approx(9.0 / 4.0, abs=1e-12)


def test_coral_distance_zero_on_identical():
    X = np.random.default_rng(6).standard_normal((20, 4))
    for v in ("standard", "Jeff", "Stein"):
        assert abs(coral_distance(X, X, v)) <= 1e-12
    with pytest.raises(ValueError):
        coral_distance(X, X, "Bregman")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_symmetry_and_nonnegativity(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((rng.integers(5, 15), 3))
    Y = rng.standard_normal((rng.integers(5, 15), 3)) * rng.uniform(0.5, 2) + rng.uniform(-1, 1)
    assert mmd_linear(X, Y) == mmd_linear(Y, X)
    assert kmmd(X, Y, 0.9) == kmmd(Y, X, 0.9)
    for v in ("standard", "Jeff", "Stein"):
        assert coral_distance(X, Y, v) == coral_distance(Y, X, v)
    for tag in TAGS:
        if tag in ("CC", "PC"):
            continue
        assert score(MetricKind(tag, bandwidth=1.0), X, Y) >= -1e-12


def test_metric_kind_validation():
    assert MetricKind("CC").orientation == "similarity"
    assert MetricKind("CORAL_Stein").orientation == "distance"
    assert MetricKind("HoMM").label == "HoMM3"
    for bad in (dict(tag="L2"), dict(order=0), dict(cap=0), dict(bandwidth=-1.0)):
        with pytest.raises(ValueError):
            MetricKind(**bad)


@pytest.mark.parametrize("tag", TAGS)
def test_batched_scores_match_set_scores(tag):
    rng = np.random.default_rng(7)
    R, Y = rng.standard_normal((6, 5)), rng.standard_normal((9, 5))
    kind = MetricKind(tag, bandwidth=1.7, cap=60 if tag == "HoMM" else 1_000_000)
    batch = score_rows(kind, R, Y)
    single = np.array([score(kind, r[None, :], Y) for r in R])
    np.testing.assert_allclose(batch, single, rtol=1e-9, atol=1e-12)


def test_batched_kmmd_needs_bandwidth():
    with pytest.raises(ValueError):
        score_rows(MetricKind("kMMD"), np.zeros((1, 2)), np.ones((3, 2)))


def test_median_heuristic():
    assert median_heuristic(np.zeros((1, 2))) == 1.0
    assert median_heuristic(np.zeros((3, 2))) == 1.0
    assert median_heuristic([[0.0], [1.0], [3.0]]) == 2.0
    np.testing.assert_allclose(gaussian_kernel(np.zeros((1, 1)), np.ones((1, 1)), 1.0), [[math.exp(-0.5)]])
