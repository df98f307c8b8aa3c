"""Variance-preserving diffusion on particle clouds.

The discrete chain X_n = sqrt(1 - b_n) X_{n-1} + sqrt(b_n) Z has marginals
X_n = sqrt(abar_n) X_0 + sqrt(1 - abar_n) eps, which is exactly the law of
the Ornstein-Uhlenbeck process dX = -X ds + sqrt(2) dW at time
s_n = -log(abar_n) / 2. Samplers and score models work on that OU clock.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import NonFiniteStateError, odeint
from .flowmatch import TrainingDivergedError
from .ndmath import FullGaussian, RngState, as_matrix
from .net import AdamState, Mlp, adam_step, assemble_input, backward, dumps_net, forward, loads_net, TIME_FEATURES

SCORE_HEADER = "SHIFTGEN-SCORE-1"
DEFAULT_BETA = 0.02
DEFAULT_STEPS = 400  # abar_N = 0.98**400 ~ 3.1e-4 < 1e-3


@dataclass(frozen=True)
class VpSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64).ravel()
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ValueError("every beta must lie strictly between 0 and 1")
        object.__setattr__(self, "betas", b)

    @classmethod
    def constant(cls, beta: float = DEFAULT_BETA, n: int = DEFAULT_STEPS) -> "VpSchedule":
        return cls(np.full(n, beta))

    @property
    def n(self) -> int:
        return self.betas.size

    @property
    def alpha_bars(self) -> np.ndarray:
        """abar_0 = 1, ..., abar_N."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.betas)])

    @property
    def ou_times(self) -> np.ndarray:
        """OU clock s_n = -log(abar_n) / 2, with s_0 = 0."""
        return np.concatenate([[0.0], -0.5 * np.cumsum(np.log1p(-self.betas))])

    @property
    def t_max(self) -> float:
        return float(self.ou_times[-1])

    def terminal_ok(self, tol: float = 1e-3) -> bool:
        """Whether abar_N is small enough to start sampling from N(0, I)."""
        return bool(self.alpha_bars[-1] < tol)


def forward_chain(x0, schedule: VpSchedule, rng: RngState) -> list[np.ndarray]:
    x = as_matrix(x0, "x0")
    out = [x]
    for b in schedule.betas:
        x = np.sqrt(1.0 - b) * x + np.sqrt(b) * rng.normal(x.shape)
        out.append(x)
    return out


def ou_marginal(g: FullGaussian, t: float) -> FullGaussian:
    """Law at time t of the OU process started from N(m0, S0)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    a = np.exp(-t)
    return FullGaussian(a * g.mean, a * a * g.covariance + (1.0 - a * a) * np.eye(g.dim))


def mixture_logpdf(mixture, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    logs = np.stack([np.log(w) + g.logpdf(x) for w, g in mixture])
    m = logs.max(axis=0)
    return m + np.log(np.exp(logs - m).sum(axis=0))


def analytic_score(mixture, x) -> np.ndarray:
    """Gradient of the log density of a Gaussian mixture, batch-wise.

    Responsibilities are formed in log space so far-out points do not
    underflow; an error is raised only if every component density is 0.
    """
    weights = np.array([w for w, _ in mixture], dtype=np.float64)
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
        raise ValueError("mixture weights must be non-negative and sum to 1")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    logs = np.stack([np.log(w) + g.logpdf(xb) for w, g in mixture])  # (K, n)
    m = logs.max(axis=0)
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("mixture density is exactly zero at some points")
    resp = np.exp(logs - m)
    resp /= resp.sum(axis=0)
    out = sum(r[:, None] * g.score(xb) for r, (_, g) in zip(resp, mixture))
    return out[0] if single else out


class AnalyticScore:
    """Exact score of a Gaussian-mixture target diffused by the OU process."""

    def __init__(self, mixture, t_max: float = 8.0):
        if isinstance(mixture, FullGaussian):
            mixture = [(1.0, mixture)]
        self.mixture = list(mixture)
        self.t_max = float(t_max)
        self.t_min = 0.0

    @property
    def dim(self) -> int:
        return self.mixture[0][1].dim

    def marginal(self, s: float):
        return [(w, ou_marginal(g, s)) for w, g in self.mixture]

    def score(self, x, s: float) -> np.ndarray:
        return analytic_score(self.marginal(float(s)), x)


@dataclass
class ScoreModel:
    """Noise-prediction net; score(x, s) = -eps_hat(x, s) / sqrt(1 - exp(-2 s))."""

    net: Mlp
    schedule: VpSchedule

    @property
    def dim(self) -> int:
        return self.net.out_dim

    @property
    def t_max(self) -> float:
        return self.schedule.t_max

    @property
    def t_min(self) -> float:
        return float(self.schedule.ou_times[1])

    def eps(self, x, s) -> np.ndarray:
        return forward(self.net, assemble_input(x, np.asarray(s) / self.t_max))

    def score(self, x, s) -> np.ndarray:
        s = max(float(s), self.t_min)
        return -self.eps(x, s) / np.sqrt(-np.expm1(-2.0 * s))


def train_dsm(
    data,
    schedule: VpSchedule,
    epochs: int,
    batch: int,
    lr: float,
    rng: RngState,
    hidden=(64, 64),
    lr_final: float | None = None,
) -> tuple[ScoreModel, list[float]]:
    """Denoising score matching in noise-prediction form.

    For a uniform level n and eps ~ N(0, I), the net sees
    x_n = sqrt(abar_n) x0 + sqrt(1 - abar_n) eps and regresses eps; the
    implied score target is -eps / sqrt(1 - abar_n). This is the score
    objective weighted by (1 - abar_n).
    """
    x = as_matrix(data, "data")
    n, d = x.shape
    if n == 0:
        raise ValueError("data is empty")
    batch = min(batch, n)
    model = ScoreModel(Mlp.init([d + TIME_FEATURES, *hidden, d], rng.child(0)), schedule)
    ab = schedule.alpha_bars
    s_all = schedule.ou_times
    state = AdamState(lr=lr)
    trace: list[float] = []
    total = epochs * (n // batch)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            if lr_final is not None:
                state.lr = lr * (lr_final / lr) ** (len(trace) / max(total - 1, 1))
            x0 = x[order[start:start + batch]]
            lvl = 1 + rng.integers(schedule.n, batch)
            eps = rng.normal(x0.shape)
            xn = np.sqrt(ab[lvl])[:, None] * x0 + np.sqrt(1.0 - ab[lvl])[:, None] * eps
            inp = assemble_input(xn, s_all[lvl] / model.t_max)
            res = forward(model.net, inp) - eps
            loss = float(np.mean(np.sum(res * res, axis=1)))
            trace.append(loss)
            if not np.isfinite(loss):
                raise TrainingDivergedError(len(trace), trace)
            grads, _ = backward(model.net, inp, 2.0 * res / batch)
            model.net, state = adam_step(model.net, grads, state)
    return model, trace


def reverse_sde_sample(score, schedule: VpSchedule, n: int, rng: RngState, d: int | None = None) -> np.ndarray:
    """Euler-Maruyama on the reverse-time OU SDE over the schedule grid.

    Going from s_k to s_{k-1} with h = s_k - s_{k-1}:
    x <- x + h (x + 2 score(x, s_k)) + sqrt(2 h) xi.
    """
    d = d or score.dim
    x = rng.normal((n, d))
    s = schedule.ou_times
    for k in range(schedule.n, 0, -1):
        h = s[k] - s[k - 1]
        x = x + h * (x + 2.0 * score.score(x, s[k])) + np.sqrt(2.0 * h) * rng.normal((n, d))
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(schedule.n - k + 1)
    return x


def pf_velocity(score, x, s) -> np.ndarray:
    """Probability-flow velocity -x - score(x, s) on the OU clock."""
    return -x - score.score(x, s)


def pf_ode_sample(
    score,
    n: int,
    steps: int,
    rng: RngState,
    t_max: float | None = None,
    t_min: float | None = None,
    d: int | None = None,
    x_init=None,
) -> np.ndarray:
    """Integrate the probability-flow ODE backward from N(0, I) draws with RK4."""
    d = d or score.dim
    t_max = score.t_max if t_max is None else t_max
    t_min = score.t_min if t_min is None else t_min
    x = rng.normal((n, d)) if x_init is None else as_matrix(x_init, "x_init")
    grid = np.linspace(t_max, t_min, steps + 1)
    return odeint(lambda y, s: pf_velocity(score, y, s), x, grid, "rk4")


def dumps_score(model: ScoreModel) -> str:
    betas = " ".join(repr(float(b)) for b in model.schedule.betas)
    return f"{SCORE_HEADER}\n{betas}\n" + dumps_net(model.net)


def loads_score(text: str) -> ScoreModel:
    lines = text.split("\n")
    if lines[0].strip() != SCORE_HEADER:
        raise ValueError(f"not a score checkpoint (expected header {SCORE_HEADER!r})")
    sched = VpSchedule(np.array([float(b) for b in lines[1].split()]))
    return ScoreModel(loads_net("\n".join(lines[2:])), sched)


def save_score(model: ScoreModel, path) -> None:
    Path(path).write_text(dumps_score(model), encoding="utf-8")


def load_score(path) -> ScoreModel:
    return loads_score(Path(path).read_text(encoding="utf-8"))
