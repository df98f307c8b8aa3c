"""Wasserstein-penalized worst-case distributions on particles.

For a decision loss l(theta, x) and nominal particles u_i the inner problem
is max over transported particles x_i of

    mean_i [ l(theta, x_i) - |x_i - u_i|^2 / (2 lam) ],

solved jointly with the outer minimization over theta by gradient
descent-ascent. Particles are free variables (the Lagrangian picture of a
transport map T(u_i)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flowmatch import TrajectoryBundle
from .ndmath import as_matrix


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax_weights(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    e = np.exp(theta - theta.max())
    return e / e.sum()


class DecisionLoss:
    """Interface: ``value``, ``grad_x`` and ``grad_theta`` on particle batches.

    ``value(theta, x)`` returns one loss per row of ``x``; ``grad_x`` has the
    shape of ``x``; ``grad_theta`` is ``(n, p)``.
    """

    p: int = 0

    def value(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def grad_x(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def grad_theta(self, theta, x) -> np.ndarray:
        raise NotImplementedError


@dataclass
class LinearLoss(DecisionLoss):
    """l(theta, x) = a . x; theta is unused (p = 0)."""

    a: np.ndarray
    p: int = 0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).ravel()

    def value(self, theta, x):
        return np.atleast_2d(x) @ self.a

    def grad_x(self, theta, x):
        return np.broadcast_to(self.a, np.atleast_2d(x).shape).copy()

    def grad_theta(self, theta, x):
        return np.zeros((np.atleast_2d(x).shape[0], 0))


@dataclass
class PortfolioShortfall(DecisionLoss):
    """Smoothed downside loss softplus(beta (q - w.x)) / beta with w = softmax(theta)."""

    d: int
    q: float = 0.0
    beta: float = 10.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def p(self) -> int:
        return self.d

    def _margin(self, theta, x):
        w = softmax_weights(theta)
        return w, self.beta * (self.q - np.atleast_2d(x) @ w)

    def value(self, theta, x):
        _, z = self._margin(theta, x)
        return np.logaddexp(0.0, z) / self.beta

    def grad_x(self, theta, x):
        w, z = self._margin(theta, x)
        return -_sigmoid(z)[:, None] * w[None, :]

    def grad_theta(self, theta, x):
        w, z = self._margin(theta, x)
        x = np.atleast_2d(x)
        # d(w.x)/dtheta = w * x - w (w.x)
        dwx = w[None, :] * x - np.outer(x @ w, w)
        return -_sigmoid(z)[:, None] * dwx


def check_gradients(loss: DecisionLoss, theta, x, h: float = 1e-6) -> tuple[float, float]:
    """Relative errors (Frobenius norm) of grad_x and grad_theta against central differences."""
    theta = np.asarray(theta, dtype=np.float64)
    x = as_matrix(x)

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(1e-12, np.linalg.norm(a) + np.linalg.norm(b)))

    gx = np.zeros_like(x)
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        gx[:, j] = (loss.value(theta, x + e) - loss.value(theta, x - e)) / (2 * h)
    gt = np.zeros((x.shape[0], theta.size))
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        gt[:, j] = (loss.value(theta + e, x) - loss.value(theta - e, x)) / (2 * h)
    ex = rel(loss.grad_x(theta, x), gx)
    et = rel(loss.grad_theta(theta, x), gt) if theta.size else 0.0
    return ex, et


def _check_lambda(lam):
    if not lam > 0:
        raise ValueError("lambda must be positive")


def penalized_objective(loss: DecisionLoss, theta, base, transported, lam: float) -> float:
    _check_lambda(lam)
    u = as_matrix(base, "base")
    x = as_matrix(transported, "transported")
    if u.shape != x.shape:
        raise ValueError("base and transported must have the same shape")
    pen = np.sum((x - u) ** 2, axis=1) / (2.0 * lam)
    return float(np.mean(loss.value(theta, x) - pen))


def nominal_risk(loss: DecisionLoss, theta, x) -> float:
    return float(np.mean(loss.value(theta, as_matrix(x))))


def grad_map(loss: DecisionLoss, theta, base, transported, lam: float) -> np.ndarray:
    """Per-particle L2(P) gradient grad_x l(theta, x_i) - (x_i - u_i) / lam."""
    _check_lambda(lam)
    u = as_matrix(base, "base")
    x = as_matrix(transported, "transported")
    if u.shape != x.shape:
        raise ValueError("base and transported must have the same shape")
    return loss.grad_x(theta, x) - (x - u) / lam


def grad_theta(loss: DecisionLoss, theta, transported) -> np.ndarray:
    g = loss.grad_theta(theta, as_matrix(transported, "transported"))
    return g.mean(axis=0) if g.shape[0] else np.zeros(g.shape[1])


def stationarity_norm(loss: DecisionLoss, theta, base, transported, lam: float) -> tuple[float, float]:
    """(|grad_theta|, empirical L2(P) norm of the map gradient)."""
    gt = grad_theta(loss, theta, transported)
    gm = grad_map(loss, theta, base, transported, lam)
    return float(np.linalg.norm(gt)), float(np.sqrt(np.mean(np.sum(gm * gm, axis=1))))


@dataclass
class GdaConfig:
    lam: float = 0.5
    tau: float = 0.1
    eta: float = 0.1
    iters: int = 100
    inner_iters: int = 5
    snapshot_every: int = 0  # 0: keep only the endpoints

    def __post_init__(self):
        _check_lambda(self.lam)
        if self.tau < 0 or self.eta < 0:
            raise ValueError("step sizes must be non-negative")
        if self.iters < 0 or self.inner_iters < 1:
            raise ValueError("iters must be >= 0 and inner_iters >= 1")


@dataclass
class TransportResult:
    base: np.ndarray
    transported: np.ndarray
    theta: np.ndarray
    theta_trace: list[np.ndarray] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    stationarity_trace: list[tuple[float, float]] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)

    @property
    def stationarity(self) -> tuple[float, float]:
        return self.stationarity_trace[-1]

    @property
    def worst_case(self) -> float:
        return self.objective_trace[-1]

    def bundle(self) -> TrajectoryBundle:
        """Particle paths on [0, 1], one time point per stored snapshot."""
        frames = [self.base, *self.snapshots, self.transported] if self.snapshots else [self.base, self.transported]
        return TrajectoryBundle(np.linspace(0.0, 1.0, len(frames)), np.stack(frames, axis=1))


class GdaDivergedError(FloatingPointError):
    def __init__(self, step: int, result: TransportResult):
        super().__init__(f"gradient descent-ascent produced non-finite iterates at outer step {step}")
        self.step = step
        self.result = result


def gda_run(loss: DecisionLoss, theta0, base, cfg: GdaConfig) -> TransportResult:
    """Alternate one theta descent step with ``inner_iters`` particle ascent sweeps.

    Particles start at the base cloud. Traces hold one entry for the initial
    point and one per outer iteration.
    """
    u = as_matrix(base, "base")
    x = u.copy()
    theta = np.asarray(theta0, dtype=np.float64).copy()
    res = TransportResult(u, x, theta)

    def record():
        res.theta_trace.append(theta.copy())
        res.objective_trace.append(penalized_objective(loss, theta, u, x, cfg.lam))
        res.stationarity_trace.append(stationarity_norm(loss, theta, u, x, cfg.lam))

    record()
    for k in range(1, cfg.iters + 1):
        if theta.size:
            theta = theta - cfg.tau * grad_theta(loss, theta, x)
        for _ in range(cfg.inner_iters):
            x = x + cfg.eta * grad_map(loss, theta, u, x, cfg.lam)
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(theta))):
                res.transported, res.theta = x, theta
                raise GdaDivergedError(k, res)
        res.transported, res.theta = x, theta
        record()
        if cfg.snapshot_every and k % cfg.snapshot_every == 0 and k < cfg.iters:
            res.snapshots.append(x.copy())
    res.transported, res.theta = x, theta
    return res


def fit_nominal(loss: DecisionLoss, theta0, x, tau: float = 0.5, iters: int = 500) -> np.ndarray:
    """Gradient descent on the empirical risk mean_i l(theta, x_i)."""
    x = as_matrix(x)
    theta = np.asarray(theta0, dtype=np.float64).copy()
    for _ in range(iters):
        theta = theta - tau * grad_theta(loss, theta, x)
    return theta


@dataclass
class Backtest:
    wealth: np.ndarray
    bankrupt: bool


def backtest(weights, returns) -> Backtest:
    """Wealth after each period, starting from 1 and compounding (1 + w.r_t)."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    r = as_matrix(returns, "returns")
    if r.shape[1] != w.size:
        raise ValueError(f"{w.size} weights for {r.shape[1]} return columns")
    path = np.cumprod(1.0 + r @ w)
    bad = np.nonzero(path <= 0.0)[0]
    if bad.size:
        return Backtest(path[: bad[0] + 1], True)
    return Backtest(path, False)
