"""Sample-based distribution comparisons: MMD, marginal KS, correlation structure."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .ndmath import RngState, as_matrix
from .transport import sq_dists

MAX_HEURISTIC_ROWS = 2000


def _subsample(x: np.ndarray, m: int) -> np.ndarray:
    if x.shape[0] <= m:
        return x
    return x[np.linspace(0, x.shape[0] - 1, m).astype(int)]


def median_heuristic(x, y) -> float:
    """Median pairwise distance over the pooled sample (evenly spaced subsample of at most 2000 rows)."""
    z = np.vstack([as_matrix(x, "x"), as_matrix(y, "y")])
    if z.shape[0] < 2:
        raise ValueError("need at least 2 pooled rows")
    z = _subsample(z, MAX_HEURISTIC_ROWS)
    iu = np.triu_indices(z.shape[0], k=1)
    med = float(np.median(np.sqrt(np.maximum(sq_dists(z, z)[iu], 0.0))))
    if med == 0.0:
        raise ValueError("median pairwise distance is zero (points identical); bandwidth undefined")
    return med


@dataclass
class MmdConfig:
    bandwidth: float | None = None  # None: median heuristic
    estimator: str = "unbiased"

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.estimator not in ("biased", "unbiased"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


def rbf(a, b, bandwidth: float) -> np.ndarray:
    return np.exp(-sq_dists(a, b) / (2.0 * bandwidth * bandwidth))


def mmd(x, y, cfg: MmdConfig | None = None) -> float:
    """Squared MMD with an RBF kernel. The unbiased estimate can be negative."""
    cfg = cfg or MmdConfig()
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    n, m = x.shape[0], y.shape[0]
    need = 2 if cfg.estimator == "unbiased" else 1
    if n < need or m < need:
        raise ValueError(f"{cfg.estimator} MMD needs at least {need} rows per sample (got {n} and {m})")
    bw = cfg.bandwidth if cfg.bandwidth is not None else median_heuristic(x, y)
    kxx, kyy, kxy = rbf(x, x, bw), rbf(y, y, bw), rbf(x, y, bw)
    if cfg.estimator == "biased":
        return float(kxx.mean() + kyy.mean() - 2.0 * kxy.mean())
    sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def ks_per_coordinate(x, y) -> np.ndarray:
    """Sup distance between the marginal ECDFs, one value per column."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("each sample needs at least one row")
    if x.shape[1] != y.shape[1]:
        raise ValueError("samples have different dimensions")
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        a, b = np.sort(x[:, j]), np.sort(y[:, j])
        grid = np.concatenate([a, b])
        fa = np.searchsorted(a, grid, side="right") / a.size
        fb = np.searchsorted(b, grid, side="right") / b.size
        out[j] = np.max(np.abs(fa - fb))
    return out


def correlation(x, name: str = "x") -> np.ndarray:
    x = as_matrix(x, name)
    if x.shape[0] < 2:
        raise ValueError(f"{name} needs at least 2 rows")
    sd = x.std(axis=0)
    zero = np.nonzero(np.ptp(x, axis=0) == 0)[0]
    if zero.size:
        raise ValueError(f"{name} column {int(zero[0])} has zero variance")
    z = (x - x.mean(axis=0)) / sd
    c = z.T @ z / x.shape[0]
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0)


def corr_diff(x, y) -> tuple[np.ndarray, np.ndarray, float]:
    cx = correlation(x, "x")
    cy = correlation(y, "y")
    return cx, cy, float(np.linalg.norm(cx - cy))


def ecdf(v) -> tuple[np.ndarray, np.ndarray]:
    v = np.sort(np.asarray(v, dtype=np.float64).ravel())
    return v, np.arange(1, v.size + 1) / v.size


def write_ecdf_csv(path, x, names=None) -> None:
    """Long-format ECDF table: coordinate, value, cumulative probability."""
    x = as_matrix(x)
    names = names or [f"x{j}" for j in range(x.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coordinate", "value", "cdf"])
        for j, name in enumerate(names):
            v, p = ecdf(x[:, j])
            for a, b in zip(v, p):
                w.writerow([name, repr(float(a)), repr(float(b))])


def permutation_test(x, y, rng: RngState, n_perm: int = 500, max_rows: int = 1000) -> tuple[float, float]:
    """Two-sample permutation test with the biased MMD statistic.

    Returns (observed statistic, p-value). Both samples are reduced to evenly
    spaced subsamples of at most ``max_rows`` rows; the bandwidth is the
    pooled median heuristic, fixed across permutations.
    """
    x = _subsample(as_matrix(x, "x"), max_rows)
    y = _subsample(as_matrix(y, "y"), max_rows)
    pooled = np.vstack([x, y])
    k = rbf(pooled, pooled, median_heuristic(x, y))
    n, total = x.shape[0], pooled.shape[0]
    # biased MMD^2 = v^T K v with v = 1/n on the first group and -1/m on the second
    v = np.where(np.arange(total) < n, 1.0 / n, -1.0 / (total - n))
    obs = float(v @ k @ v)
    hits = 0
    for _ in range(n_perm):
        w = v[rng.permutation(total)]
        if w @ k @ w >= obs:
            hits += 1
    return obs, (hits + 1) / (n_perm + 1)
