import itertools
import math

import numpy as np
import pytest

from invjko.otmetrics import (MetricReport, adaptive_sigma, bw_uvp, compare, emd, equalize, l2_uvp,
                              mmd2, total_variance, w2_empirical)


def brute_force(X, Y, power):
    n = len(X)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        c = sum(np.linalg.norm(X[i] - Y[p]) ** power for i, p in enumerate(perm)) / n
        best = min(best, c)
    return best


def naive_mmd2(X, Y, sigma):
    k = lambda a, b: math.exp(-float(np.sum((a - b) ** 2)) / (2 * sigma**2))  # noqa: E731
    N, M = len(X), len(Y)
    xx = sum(k(X[i], X[j]) for i in range(N) for j in range(N) if i != j) / (N * (N - 1))
    yy = sum(k(Y[i], Y[j]) for i in range(M) for j in range(M) if i != j) / (M * (M - 1))
    xy = sum(k(X[i], Y[j]) for i in range(N) for j in range(M)) / (N * M)
    return xx + yy - 2 * xy


def test_emd_examples(rng):
    X = rng.standard_normal((5, 2))
    assert emd(X, X) == 0.0
    assert emd([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_emd_and_w2_match_brute_force(n, rng):
    for _ in range(5):
        X, Y = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        assert abs(emd(X, Y) - brute_force(X, Y, 1)) <= 1e-12
        assert abs(w2_empirical(X, Y) - math.sqrt(brute_force(X, Y, 2))) <= 1e-12


def test_w2_examples():
    assert w2_empirical([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0
    assert w2_empirical([[0.0, 0.0]], [[1.0, 2.0]]) == pytest.approx(math.sqrt(5))


def test_unequal_counts_rejected(rng):
    with pytest.raises(ValueError, match="resample"):
        emd(rng.standard_normal((3, 2)), rng.standard_normal((4, 2)))


def test_equalize_resamples_larger(rng):
    X, Y, info = equalize(rng.standard_normal((10, 2)), rng.standard_normal((6, 2)), seed=1)
    assert len(X) == len(Y) == 6 and info["resampled"]


def test_triangle_and_jensen(rng):
    for _ in range(100):
        X, Y, Z = (rng.standard_normal((6, 2)) for _ in range(3))
        assert emd(X, Z) <= emd(X, Y) + emd(Y, Z) + 1e-9
        assert w2_empirical(X, Z) <= w2_empirical(X, Y) + w2_empirical(Y, Z) + 1e-9
        assert emd(X, Y) <= w2_empirical(X, Y) + 1e-12


def test_permutation_invariance(rng):
    X, Y = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
    p = rng.permutation(8)
    assert emd(X[p], Y) == pytest.approx(emd(X, Y), abs=1e-12)
    assert w2_empirical(X, Y[p]) == pytest.approx(w2_empirical(X, Y), abs=1e-12)


def test_bw_uvp_identical(rng):
    X = rng.standard_normal((500, 3))
    assert bw_uvp(X, X) < 1e-6


def test_bw_uvp_shifted_gaussians(rng):
    X = rng.standard_normal((100_000, 2))
    Y = rng.standard_normal((100_000, 2)) + [3.0, 0.0]
    assert abs(bw_uvp(X, Y) - 900.0) <= 0.05 * 900.0


def test_bw_symmetric_for_equal_variances(rng):
    X = rng.standard_normal((2000, 2))
    Y = rng.standard_normal((2000, 2)) @ np.array([[1.0, 0.4], [0.0, 0.8]]) + 1.0
    a = bw_uvp(X, Y) * 0.5 * total_variance(X)
    b = bw_uvp(Y, X) * 0.5 * total_variance(Y)
    assert a == pytest.approx(b, abs=1e-9)


def test_bw_needs_enough_samples():
    with pytest.raises(ValueError):
        bw_uvp(np.zeros((2, 2)), np.zeros((5, 2)))


def test_l2_uvp(rng):
    Y = rng.standard_normal((50, 1))
    g = lambda y: 3 * y  # noqa: E731
    assert l2_uvp(g, g, Y, 1.0, 0.01) == 0.0
    c, tau, var = 0.7, 0.1, 2.5
    assert l2_uvp(lambda y: g(y) + c, g, Y, var, tau) == pytest.approx(100 * tau**2 * c**2 / var, rel=1e-12)
    with pytest.raises(ValueError):
        l2_uvp(g, g, Y, 0.0, 0.1)


def test_mmd_example():
    # unbiased estimator by hand: k(0,2)=k(1,3)=e^-0.02, three cross pairs at distance 1, one at 3
    val = mmd2([[0.0], [2.0]], [[1.0], [3.0]], 10.0)
    assert val == pytest.approx(-0.010120113092062955, abs=1e-15)


def test_mmd_identical_two_point_sets():
    a, b = np.array([0.3, 1.0]), np.array([-1.2, 2.0])
    kab = math.exp(-np.sum((a - b) ** 2) / 200)
    assert mmd2([a, b], [a, b], 10.0) == pytest.approx(kab - 1.0, abs=1e-15)


def test_mmd_matches_naive(rng):
    for n, m in [(2, 3), (5, 5), (10, 7)]:
        X, Y = rng.standard_normal((n, 2)), rng.standard_normal((m, 2)) + 0.5
        assert abs(mmd2(X, Y, 1.3) - naive_mmd2(X, Y, 1.3)) <= 1e-12


def test_mmd_wide_kernel_vanishes(rng):
    X, Y = rng.standard_normal((6, 2)), rng.standard_normal((5, 2)) + 3
    assert abs(mmd2(X, Y, 1e8)) < 1e-12


def test_mmd_adaptive_bandwidth(rng):
    X, Y = rng.standard_normal((6, 2)), rng.standard_normal((5, 2))
    Z = np.vstack([X, Y])
    d2 = [np.sum((Z[i] - Z[j]) ** 2) for i in range(11) for j in range(i + 1, 11)]
    assert adaptive_sigma(X, Y) ** 2 == pytest.approx(np.mean(d2))
    assert mmd2(X, Y, "adaptive") == pytest.approx(naive_mmd2(X, Y, math.sqrt(np.mean(d2))), abs=1e-12)


def test_mmd_needs_two_samples():
    with pytest.raises(ValueError):
        mmd2([[0.0]], [[1.0], [2.0]])


def test_report_table(rng):
    m, info = compare(rng.standard_normal((30, 2)), rng.standard_normal((40, 2)), 0)
    r = MetricReport([m], {"resampling": info})
    lines = r.table().splitlines()
    assert lines[0].split("\t") == ["k", "emd", "w2", "bw_uvp", "l2_uvp", "mmd2"]
    assert lines[1].split("\t")[4] == "-"
    assert r.to_dict()["steps"][0]["n_pred"] == 30
