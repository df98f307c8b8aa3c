"""Wasserstein-2 distances between empirical and Gaussian distributions.

All empirical measures carry uniform weights. Costs are squared Euclidean;
every distance returned here is on the W2 scale (square root of the mean
squared displacement).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import odeint, time_grid
from .ndmath import FullGaussian, as_matrix, inv_sqrtm_pd, sqrtm_psd

MAX_ASSIGNMENT_SIZE = 512


@dataclass(frozen=True)
class Assignment:
    permutation: np.ndarray  # source row i -> target row permutation[i]
    cost: float


@dataclass
class Coupling:
    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    converged: bool
    iterations: int
    cost_trace: list[float] = field(default_factory=list)
    violation_trace: list[float] = field(default_factory=list)
    dual_trace: list[float] = field(default_factory=list)


def sq_dists(x, y) -> np.ndarray:
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] * y.shape[0] * x.shape[1] <= 4_000_000:
        return ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    d = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def w2_1d(x, y) -> float:
    x = np.sort(np.asarray(x, dtype=np.float64).ravel())
    y = np.sort(np.asarray(y, dtype=np.float64).ravel())
    if x.size != y.size or x.size == 0:
        raise ValueError(f"w2_1d needs equal, non-zero lengths (got {x.size} and {y.size})")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def linear_sum_assignment_min(cost) -> np.ndarray:
    """Minimum-cost perfect matching of a square cost matrix.

    Shortest augmenting path with row/column potentials (O(n^3)); rows are
    inserted in index order and ties resolve to the lowest column index.
    Returns ``perm`` with row ``i`` matched to column ``perm[i]``.
    """
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError(f"cost matrix must be square, got {c.shape}")
    # 1-based bookkeeping; column 0 is the virtual source
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used
            free[0] = False
            cur = c[i0 - 1] - u[i0] - v[1:]
            upd = free[1:] & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[match[1:] - 1] = np.arange(n)
    return perm


def w2_assignment(x, y) -> tuple[float, Assignment]:
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"w2_assignment needs equal row counts (got {n} and {y.shape[0]})")
    if n > MAX_ASSIGNMENT_SIZE:
        raise ValueError(f"w2_assignment is limited to {MAX_ASSIGNMENT_SIZE} points, got {n}")
    c = sq_dists(x, y)
    perm = linear_sum_assignment_min(c)
    cost = float(np.sqrt(c[np.arange(n), perm].sum() / n))
    return cost, Assignment(perm, cost)


def _logsumexp(a, axis):
    m = a.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def sinkhorn(x, y, reg: float, max_iters: int = 1000, tol: float = 1e-9) -> tuple[float, Coupling]:
    """Entropic transport between uniform clouds, in log-domain.

    Each iteration rescales rows then columns; after the column update the
    column marginals are exact and the L1 row violation is the stopping
    criterion. The returned cost is ``sqrt(<C, plan>)``.
    """
    if not reg > 0.0:
        raise ValueError("reg must be positive")
    c = sq_dists(x, y)
    n, m = c.shape
    loga = np.full(n, -np.log(n))
    logb = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    costs, viols, duals = [], [], []
    converged = False
    it = 0
    plan = None
    for it in range(1, max_iters + 1):
        f = reg * (loga - _logsumexp((g[None, :] - c) / reg, axis=1))
        g = reg * (logb - _logsumexp((f[:, None] - c) / reg, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - c) / reg)
        viol = float(np.abs(plan.sum(1) - 1.0 / n).sum())
        costs.append(float((c * plan).sum()))
        viols.append(viol)
        duals.append(float(f.sum() / n + g.sum() / m - reg * plan.sum()))
        if viol < tol:
            converged = True
            break
    return float(np.sqrt(max(costs[-1], 0.0))), Coupling(
        plan=plan,
        row_marginal=plan.sum(1),
        col_marginal=plan.sum(0),
        converged=converged,
        iterations=it,
        cost_trace=costs,
        violation_trace=viols,
        dual_trace=duals,
    )


def w2_gaussian(a: FullGaussian, b: FullGaussian) -> float:
    """Bures-Wasserstein distance between two Gaussians."""
    sb = sqrtm_psd(b.covariance)
    cross = sqrtm_psd(sb @ a.covariance @ sb)
    val = np.sum((a.mean - b.mean) ** 2) + np.trace(a.covariance + b.covariance - 2.0 * cross)
    return float(np.sqrt(max(val, 0.0)))


@dataclass(frozen=True)
class AffineMap:
    """x -> A x + c."""

    A: np.ndarray
    c: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.A.T + self.c

    def inverse(self) -> "AffineMap":
        Ainv = np.linalg.inv(self.A)
        return AffineMap(Ainv, -Ainv @ self.c)

    def push_gaussian(self, g: FullGaussian) -> FullGaussian:
        return FullGaussian(self.A @ g.mean + self.c, self.A @ g.covariance @ self.A.T)


def ot_map_gaussian(a: FullGaussian, b: FullGaussian) -> AffineMap:
    """Brenier map between Gaussians: x -> A (x - m_a) + m_b."""
    sa = sqrtm_psd(a.covariance)
    sa_inv = inv_sqrtm_pd(a.covariance)
    A = sa_inv @ sqrtm_psd(sa @ b.covariance @ sa) @ sa_inv
    A = 0.5 * (A + A.T)
    return AffineMap(A, b.mean - A @ a.mean)


def dynamic_transport_cost(fld, reference_samples, steps: int = 50, method: str = "rk4") -> float:
    """Estimate of the action int_0^1 E||v(x_t, t)||^2 dt.

    Particles start at ``reference_samples`` at t=0 and follow the field; the
    kinetic energy is averaged over particles at each grid time and
    integrated with the trapezoid rule.
    """
    x = as_matrix(reference_samples, "reference_samples")
    grid = time_grid(steps)
    energy = np.empty(len(grid))
    for k, t in enumerate(grid):
        energy[k] = np.mean(np.sum(fld.velocity(x, t) ** 2, axis=1))
        if k + 1 < len(grid):
            x = odeint(fld.velocity, x, grid[k:k + 2], method)
    return float(np.trapezoid(energy, grid))
