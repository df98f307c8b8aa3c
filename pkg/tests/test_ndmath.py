import numpy as np
import pytest
from hypothesis import given, strategies as st

from shiftgen.ndmath import (
    FullGaussian,
    NotPositiveDefiniteError,
    RngState,
    as_matrix,
    cholesky,
    inv_sqrtm_pd,
    mean_cov,
    read_csv,
    sample_gaussian,
    sqrtm_psd,
    write_csv,
)


def random_spd(rng, d, cond=1e3):
    q, _ = np.linalg.qr(rng.normal((d, d)))
    ev = np.exp(np.linspace(0, np.log(cond), d))
    return (q * ev) @ q.T


def test_sample_mean_close_for_seed_1():
    x = sample_gaussian(RngState(1), FullGaussian.standard(2), 10_000)
    assert x.shape == (10_000, 2)
    assert np.all(np.abs(x.mean(axis=0)) < 0.05)


def test_degenerate_covariance_rejected():
    with pytest.raises(ValueError):
        FullGaussian(np.zeros(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        FullGaussian(np.zeros(2), 1e-300 * np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_same_seed_same_bits():
    g = FullGaussian([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]])
    a = sample_gaussian(RngState(7), g, 500)
    b = sample_gaussian(RngState(7), g, 500)
    assert a.tobytes() == b.tobytes()
    c = sample_gaussian(RngState(8), g, 500)
    assert not np.array_equal(a, c)


def test_child_streams_differ_and_repeat():
    a = RngState(3).child(1).uniform(5)
    b = RngState(3).child(2).uniform(5)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, RngState(3).child(1).uniform(5))


def test_box_muller_moments():
    z = RngState(11).normal(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1) < 0.01
    assert abs(np.mean(z ** 4) - 3) < 0.05


def test_cholesky_diagonal():
    assert np.array_equal(cholesky([[4.0, 0.0], [0.0, 9.0]]), [[2.0, 0.0], [0.0, 3.0]])


def test_cholesky_reconstructs():
    L = cholesky([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(L, np.tril(L))
    assert np.max(np.abs(L @ L.T - [[2.0, 1.0], [1.0, 2.0]])) < 1e-12


def test_cholesky_indefinite_names_pivot():
    with pytest.raises(NotPositiveDefiniteError) as e:
        cholesky([[1.0, 2.0], [2.0, 1.0]])
    assert e.value.pivot == 1
    assert "1" in str(e.value)


@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_cholesky_property(d, seed):
    a = random_spd(RngState(seed), d, cond=1e6)
    L = cholesky(a)
    assert np.linalg.norm(L @ L.T - a) <= 1e-10 * max(1.0, np.linalg.norm(a))


def test_mean_cov_examples():
    m, _ = mean_cov([[0.0, 0.0], [2.0, 2.0]])
    assert np.array_equal(m, [1.0, 1.0])
    _, c = mean_cov([[0.0, 0.0], [2.0, 0.0]])
    assert np.array_equal(c, [[2.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        mean_cov([[1.0, 2.0]])


def test_mean_error_shrinks_with_n():
    errs = []
    for n in (100, 1000, 10_000):
        e = [np.linalg.norm(sample_gaussian(RngState(s), FullGaussian.standard(3), n).mean(axis=0)) for s in range(20)]
        errs.append(np.mean(e))
    assert errs[0] > errs[1] > errs[2]


def test_gaussian_logpdf_and_score():
    g = FullGaussian([1.0, 0.0], [[2.0, 0.5], [0.5, 1.0]])
    x = np.array([[0.3, -0.2], [1.0, 0.0]])
    S = g.covariance
    r = x - g.mean
    ref = -0.5 * np.einsum("ni,ij,nj->n", r, np.linalg.inv(S), r) - 0.5 * np.log(np.linalg.det(2 * np.pi * S))
    assert np.allclose(g.logpdf(x), ref, atol=1e-12)
    h = 1e-6
    fd = np.stack([(g.logpdf(x + h * e) - g.logpdf(x - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    assert np.allclose(g.score(x), fd, atol=1e-6)


def test_matrix_sqrt():
    a = random_spd(RngState(5), 4)
    r = sqrtm_psd(a)
    assert np.allclose(r @ r, a, atol=1e-9)
    ri = inv_sqrtm_pd(a)
    assert np.allclose(ri @ a @ ri, np.eye(4), atol=1e-9)


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.nan]])


def test_csv_round_trip(tmp_path):
    x = RngState(2).normal((7, 3))
    write_csv(tmp_path / "m.csv", x, ["a", "b", "c"])
    y, header = read_csv(tmp_path / "m.csv")
    assert header == ["a", "b", "c"]
    assert np.array_equal(x, y)


def test_csv_non_numeric_names_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n3,oops\n", encoding="utf-8")
    with pytest.raises(ValueError, match="'b'"):
        read_csv(p)
