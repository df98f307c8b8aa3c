import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.distance import cdist, pdist
from scipy.stats import ks_2samp

from shiftgen.metrics import (
    MmdConfig,
    corr_diff,
    correlation,
    ecdf,
    ks_per_coordinate,
    median_heuristic,
    mmd,
    permutation_test,
    write_ecdf_csv,
)
from shiftgen.ndmath import RngState


def test_median_heuristic_examples():
    assert median_heuristic([[0.0]], [[2.0]]) == 2.0
    assert median_heuristic([[0.0], [1.0]], [[2.0]]) == 1.0
    with pytest.raises(ValueError):
        median_heuristic([[1.0, 1.0]], [[1.0, 1.0]])
    with pytest.raises(ValueError):
        median_heuristic(np.zeros((1, 2)), np.zeros((0, 2)))


def test_median_heuristic_matches_pdist(rng):
    x, y = rng.normal((40, 3)), rng.normal((25, 3)) + 1
    assert math.isclose(median_heuristic(x, y), float(np.median(pdist(np.vstack([x, y])))), rel_tol=1e-12)


def test_median_heuristic_subsample_is_deterministic(rng):
    x, y = rng.normal((1500, 2)), rng.normal((1500, 2))
    assert median_heuristic(x, y) == median_heuristic(x, y)


def test_mmd_examples():
    x = np.array([[0.0], [2.0]])
    assert mmd(x, x, MmdConfig(bandwidth=1.0, estimator="biased")) == 0.0
    v = mmd(x, x, MmdConfig(bandwidth=1.0, estimator="unbiased"))
    assert math.isclose(v, math.exp(-2) - 1, rel_tol=1e-12)
    assert abs(v + 0.8647) < 1e-4


def test_mmd_row_requirements():
    with pytest.raises(ValueError):
        mmd([[0.0]], [[1.0], [2.0]], MmdConfig(bandwidth=1.0))
    assert mmd([[0.0]], [[1.0]], MmdConfig(bandwidth=1.0, estimator="biased")) > 0
    with pytest.raises(ValueError):
        MmdConfig(bandwidth=0.0)
    with pytest.raises(ValueError):
        MmdConfig(estimator="linear")


def test_mmd_null_scale():
    vals = []
    for seed in range(20):
        r = RngState(seed)
        vals.append(mmd(r.normal((2000, 1)), r.normal((2000, 1))))
    assert max(abs(v) for v in vals) < 0.01


@given(st.integers(0, 10_000), st.floats(0.2, 3.0))
def test_unbiased_equals_biased_minus_diagonal_correction(seed, bw):
    r = RngState(seed)
    x, y = r.normal((7, 2)), r.normal((5, 2)) + 0.3
    n, m = 7, 5
    k = lambda a, b: np.exp(-cdist(a, b, "sqeuclidean") / (2 * bw * bw))
    A, B = k(x, x).sum(), k(y, y).sum()
    biased = mmd(x, y, MmdConfig(bw, "biased"))
    unbiased = mmd(x, y, MmdConfig(bw, "unbiased"))
    corr = A / n ** 2 - (A - n) / (n * (n - 1)) + B / m ** 2 - (B - m) / (m * (m - 1))
    assert math.isclose(unbiased, biased - corr, rel_tol=1e-10, abs_tol=1e-12)
    assert biased >= 0


@given(st.integers(0, 10_000), st.sampled_from(["biased", "unbiased"]))
def test_mmd_symmetric(seed, est):
    r = RngState(seed)
    x, y = r.normal((9, 3)), 1.5 * r.normal((6, 3))
    assert math.isclose(mmd(x, y, MmdConfig(None, est)), mmd(y, x, MmdConfig(None, est)), rel_tol=1e-12, abs_tol=1e-15)


def test_ks_examples():
    x = RngState(1).normal((30, 3))
    assert np.array_equal(ks_per_coordinate(x, x), np.zeros(3))
    assert ks_per_coordinate([[0.0]], [[1.0]])[0] == 1.0
    assert ks_per_coordinate([[0.0], [1.0]], [[0.5], [1.5]])[0] == 0.5
    with pytest.raises(ValueError):
        ks_per_coordinate(np.zeros((0, 1)), [[1.0]])


@given(st.integers(0, 10_000))
def test_ks_matches_scipy(seed):
    r = RngState(seed)
    x, y = r.normal((23, 2)), r.normal((31, 2)) + 0.4
    got = ks_per_coordinate(x, y)
    for j in range(2):
        assert math.isclose(got[j], ks_2samp(x[:, j], y[:, j]).statistic, rel_tol=1e-12)


@given(st.integers(0, 10_000))
def test_ks_range_and_monotone_invariance(seed):
    r = RngState(seed)
    x, y = r.normal((15, 2)), r.normal((12, 2)) * 2
    ks = ks_per_coordinate(x, y)
    assert np.all((ks >= 0) & (ks <= 1))
    f = lambda v: np.column_stack([np.exp(v[:, 0]), v[:, 1] ** 3 + v[:, 1]])
    assert np.array_equal(ks_per_coordinate(f(x), f(y)), ks)


def test_corr_examples():
    r = RngState(2)
    x = r.normal((5000, 3))
    _, _, norm0 = corr_diff(x, x)
    assert norm0 == 0.0
    _, _, norm1 = corr_diff(x, r.normal((5000, 3)))
    assert norm1 < 0.1
    a = r.normal(5000)
    _, _, norm2 = corr_diff(np.column_stack([a, 2 * a + 1]), r.normal((5000, 2)))
    assert abs(norm2 - math.sqrt(2)) < 0.1


def test_corr_matches_numpy_and_bounds(rng):
    x = rng.normal((50, 4)) @ rng.normal((4, 4))
    c = correlation(x)
    assert np.allclose(c, np.corrcoef(x.T))
    assert np.array_equal(np.diag(c), np.ones(4)) and np.all(np.abs(c) <= 1)


def test_corr_zero_variance_names_column():
    x = np.column_stack([np.arange(5.0), np.full(5, 0.1), np.arange(5.0) ** 2])
    with pytest.raises(ValueError, match="column 1"):
        corr_diff(x, x)
    with pytest.raises(ValueError):
        correlation([[1.0, 2.0]])


def test_ecdf_and_csv(tmp_path):
    v, p = ecdf([3.0, 1.0, 2.0, 2.0])
    assert np.array_equal(v, [1, 2, 2, 3]) and np.array_equal(p, [0.25, 0.5, 0.75, 1.0])
    path = tmp_path / "e.csv"
    write_ecdf_csv(path, np.array([[1.0, 5.0], [0.0, 4.0]]), ["a", "b"])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["coordinate", "value", "cdf"]
    assert rows[1:] == [["a", "0.0", "0.5"], ["a", "1.0", "1.0"], ["b", "4.0", "0.5"], ["b", "5.0", "1.0"]]


def test_permutation_test_null_and_shift():
    r = RngState(12)
    _, p_null = permutation_test(r.normal((400, 2)), r.normal((400, 2)), r.child(1), n_perm=200)
    _, p_alt = permutation_test(r.normal((400, 2)), r.normal((400, 2)) + 0.4, r.child(2), n_perm=200)
    assert p_null > 0.05 and p_alt < 0.01
