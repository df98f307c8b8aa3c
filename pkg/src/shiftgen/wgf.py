"""JKO proximal steps for KL(. || N(0, I)) within axis-aligned Gaussians.

Between aligned diagonal Gaussians the squared W2 distance splits per
coordinate into (m - m')^2 + (s - s')^2, so each proximal step reduces to d
independent scalar problems with closed-form minimizers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .ndmath import FullGaussian
from .transport import AffineMap


@dataclass(frozen=True)
class DiagGaussianState:
    mean: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        s = np.atleast_1d(np.asarray(self.stds, dtype=np.float64))
        if m.shape != s.shape:
            raise ValueError("mean and stds must have the same length")
        if np.any(s <= 0):
            raise ValueError("stds must be positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "stds", s)

    @classmethod
    def standard(cls, d: int) -> "DiagGaussianState":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_full(self) -> FullGaussian:
        return FullGaussian(self.mean, np.diag(self.stds ** 2))


@dataclass(frozen=True)
class KLTerms:
    total: float
    entropy: float  # int rho log rho
    potential: float  # c + int V d rho, V = |x|^2 / 2, c = d log(2 pi) / 2


def kl_terms(s: DiagGaussianState) -> KLTerms:
    d = s.dim
    entropy = float(-np.sum(np.log(s.stds)) - 0.5 * d * (1.0 + math.log(2.0 * math.pi)))
    potential = float(0.5 * np.sum(s.stds ** 2 + s.mean ** 2) + 0.5 * d * math.log(2.0 * math.pi))
    # u - log1p(u) with u = sd^2 - 1 keeps tiny mean terms from cancelling against 1
    u = np.expm1(2.0 * np.log(s.stds))
    total = float(0.5 * (np.sum(s.mean ** 2) + np.sum(u - np.log1p(u))))
    return KLTerms(total, entropy, potential)


def kl_to_standard(s: DiagGaussianState) -> float:
    return kl_terms(s).total


def jko_step(s: DiagGaussianState, gamma: float) -> DiagGaussianState:
    """argmin_r KL(r || N(0, I)) + W2^2(s, r) / (2 gamma) over diagonal Gaussians."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    m = s.mean / (1.0 + gamma)
    sd = (s.stds + np.sqrt(s.stds ** 2 + 4.0 * gamma * (1.0 + gamma))) / (2.0 * (1.0 + gamma))
    return DiagGaussianState(m, sd)


@dataclass
class JkoRun:
    iterates: list[DiagGaussianState]
    n_steps: int
    converged: bool
    kl: list[float] = field(default_factory=list)


def run_jko(s0: DiagGaussianState, gamma: float, eps: float, max_iters: int = 10_000) -> JkoRun:
    """Step until KL <= eps^2; ``n_steps`` is the number of proximal steps taken."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    its = [s0]
    kls = [kl_to_standard(s0)]
    while kls[-1] > eps * eps:
        if len(its) - 1 >= max_iters:
            return JkoRun(its, len(its) - 1, False, kls)
        its.append(jko_step(its[-1], gamma))
        kls.append(kl_to_standard(its[-1]))
    return JkoRun(its, len(its) - 1, True, kls)


def kl_gaussian(p: FullGaussian, q: FullGaussian) -> float:
    """KL(p || q) for full-covariance Gaussians."""
    d = p.dim
    Lq = q.cholesky_factor
    a = np.linalg.solve(Lq, p.cholesky_factor)
    r = np.linalg.solve(Lq, q.mean - p.mean)
    logdet_q = 2.0 * np.sum(np.log(np.diag(Lq)))
    logdet_p = 2.0 * np.sum(np.log(np.diag(p.cholesky_factor)))
    return float(0.5 * (np.sum(a * a) + r @ r - d + logdet_q - logdet_p))


def kl_transfer_check(p_n, target, fmap: AffineMap) -> tuple[float, float]:
    """KL(p_n || target) and KL of both pulled back through ``fmap``.

    Invertible transformations preserve KL, so the two values agree up to
    rounding.
    """
    A = np.asarray(fmap.A, dtype=np.float64)
    if np.linalg.cond(A) > 1e12:
        raise ValueError("map is singular or numerically non-invertible")
    p = p_n.to_full() if isinstance(p_n, DiagGaussianState) else p_n
    q = target.to_full() if isinstance(target, DiagGaussianState) else target
    inv = fmap.inverse()
    return kl_gaussian(p, q), kl_gaussian(inv.push_gaussian(p), inv.push_gaussian(q))


def standardizing_map(target: FullGaussian) -> AffineMap:
    """Affine map sending ``target`` to N(0, I); reduces any Gaussian target to the standard one."""
    Linv = np.linalg.inv(target.cholesky_factor)
    return AffineMap(Linv, -Linv @ target.mean)


def tv_to_standard_1d(s: DiagGaussianState, lo: float = -12.0, hi: float = 12.0, n: int = 20001) -> float:
    """Total variation to N(0, 1) of a 1-d state, by trapezoid quadrature."""
    if s.dim != 1:
        raise ValueError("grid total variation is 1-d only")
    x = np.linspace(lo, hi, n)
    p = np.exp(-0.5 * ((x - s.mean[0]) / s.stds[0]) ** 2) / (s.stds[0] * math.sqrt(2 * math.pi))
    q = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    return float(0.5 * np.trapezoid(np.abs(p - q), x))


def write_trace_csv(path, iterates) -> None:
    d = iterates[0].dim
    header = ["n", "kl", "entropy", "potential"] + [f"mean{j}" for j in range(d)] + [f"std{j}" for j in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n, s in enumerate(iterates):
            t = kl_terms(s)
            w.writerow([n, repr(t.total), repr(t.entropy), repr(t.potential)]
                       + [repr(float(v)) for v in s.mean] + [repr(float(v)) for v in s.stds])
