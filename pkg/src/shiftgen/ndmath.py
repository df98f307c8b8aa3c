"""Dense linear algebra, seeded random draws and sample statistics.

Matrices are plain ``float64`` numpy arrays of shape ``(rows, cols)``; a
particle cloud is such a matrix with one sample per row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NotPositiveDefiniteError(ValueError):
    """Raised when a Cholesky pivot is not strictly positive."""

    def __init__(self, pivot: int, value: float):
        super().__init__(f"matrix is not positive definite: pivot {pivot} has value {value:.6g}")
        self.pivot = pivot
        self.value = value


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-d float64 array (1-d input becomes a column)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


class RngState:
    """Seeded random stream.

    Uniforms come from numpy's PCG64 bit generator, whose output is fixed by
    the seed on every platform. Gaussian draws are produced from those
    uniforms with the Box-Muller transform, so the normal stream does not
    depend on numpy's internal samplers.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n].reshape(shape)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self, key: int) -> "RngState":
        """Independent stream derived from (seed, key)."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        return RngState(int(ss.generate_state(1, dtype=np.uint64)[0]))

    @property
    def numpy(self) -> np.random.Generator:
        # for draws without a hand-rolled sampler (gamma, poisson)
        return self._gen


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Raises NotPositiveDefiniteError naming the first non-positive pivot.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"cholesky needs a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("cholesky needs a symmetric matrix")
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > 0.0:
            raise NotPositiveDefiniteError(j, float(pivot))
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


@dataclass(frozen=True)
class FullGaussian:
    """N(mean, covariance) with a cached Cholesky factor."""

    mean: np.ndarray
    covariance: np.ndarray
    cholesky_factor: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "cholesky_factor", cholesky(cov))

    @classmethod
    def standard(cls, d: int) -> "FullGaussian":
        return cls(np.zeros(d), np.eye(d))

    @classmethod
    def isotropic(cls, mean, var: float) -> "FullGaussian":
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        return cls(mean, var * np.eye(mean.size))

    @classmethod
    def fit(cls, samples) -> "FullGaussian":
        m, c = mean_cov(samples)
        return cls(m, c)

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        L = self.cholesky_factor
        r = np.linalg.solve(L, (x - self.mean).T)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return -0.5 * (np.sum(r * r, axis=0) + logdet + self.dim * np.log(2.0 * np.pi))

    def score(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return -np.linalg.solve(self.covariance, (x - self.mean).T).T


def sample_gaussian(rng: RngState, g: FullGaussian, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    z = rng.normal((n, g.dim))
    return g.mean + z @ g.cholesky_factor.T


def mean_cov(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased (n - 1) covariance."""
    x = as_matrix(samples, "samples")
    if x.shape[0] < 2:
        raise ValueError("mean_cov needs at least 2 rows")
    m = x.mean(axis=0)
    r = x - m
    return m, r.T @ r / (x.shape[0] - 1)


def sqrtm_psd(a) -> np.ndarray:
    """Symmetric square root of a symmetric positive semi-definite matrix."""
    a = as_matrix(a)
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    if w.min() < -1e-10 * max(1.0, abs(w.max())):
        raise NotPositiveDefiniteError(int(np.argmin(w)), float(w.min()))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def inv_sqrtm_pd(a) -> np.ndarray:
    a = as_matrix(a)
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    if w.min() <= 0.0:
        raise NotPositiveDefiniteError(int(np.argmin(w)), float(w.min()))
    return (v / np.sqrt(w)) @ v.T


def write_csv(path, x, header: list[str] | None = None) -> None:
    """Write a matrix with a header row; floats use shortest round-trip repr."""
    x = as_matrix(x)
    if header is None:
        header = [f"x{j}" for j in range(x.shape[1])]
    if len(header) != x.shape[1]:
        raise ValueError("header length does not match column count")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in x:
            w.writerow([repr(float(v)) for v in row])


def read_csv(path) -> tuple[np.ndarray, list[str]]:
    """Read a headed numeric CSV; non-numeric cells raise naming the column."""
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for name, cell in zip(header, row):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: column '{name}' is not numeric ({cell!r})") from None
        data.append(vals)
    x = np.array(data, dtype=np.float64).reshape(len(data), len(header))
    return x, header
