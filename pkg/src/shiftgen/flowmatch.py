"""Flow matching with a linear interpolant, ODE transport and likelihoods.

Time convention: t=0 carries the data distribution and t=1 the reference.
Integrating forward (0 -> 1) therefore normalizes data toward the reference,
and the reverse direction (1 -> 0) generates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import NonFiniteStateError, STEPPERS, odeint, time_grid
from .ndmath import FullGaussian, RngState, as_matrix, sample_gaussian
from .net import (
    TIME_FEATURES,
    AdamState,
    Mlp,
    adam_step,
    assemble_input,
    backward,
    dumps_net,
    forward,
    jacobian,
    loads_net,
)

FLOW_HEADER = "SHIFTGEN-FLOW-1"
DEFAULT_HIDDEN = (64, 64)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, trace: list[float]):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step
        self.trace = trace


class LinearInterpolant:
    """I_t(x0, x1) = (1 - t) x0 + t x1."""

    kind = "linear"

    @staticmethod
    def _t(t, x0):
        t = np.asarray(t, dtype=np.float64)
        return t[:, None] if t.ndim == 1 else t

    def path(self, x0, x1, t):
        t = self._t(t, x0)
        return (1.0 - t) * x0 + t * x1

    def velocity(self, x0, x1, t):
        return np.broadcast_to(x1 - x0, np.broadcast_shapes(np.shape(x0), np.shape(x1))).copy()


INTERPOLANTS = {"linear": LinearInterpolant}


@dataclass
class OdeConfig:
    integrator: str = "rk4"
    steps: int = 64
    direction: str = "forward"  # forward: 0 -> 1, reverse: 1 -> 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.integrator not in STEPPERS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.direction not in ("forward", "reverse"):
            raise ValueError("direction must be 'forward' or 'reverse'")

    def grid(self) -> np.ndarray:
        return time_grid(self.steps, reverse=self.direction == "reverse")


@dataclass
class FlowModel:
    """Velocity net v(x, t; c) on R^d with an optional k-dimensional context."""

    net: Mlp
    d: int
    k: int = 0
    interpolant: LinearInterpolant = field(default_factory=LinearInterpolant)
    ode: OdeConfig = field(default_factory=OdeConfig)

    def __post_init__(self):
        want = self.d + TIME_FEATURES + self.k
        if self.net.in_dim != want or self.net.out_dim != self.d:
            raise ValueError(f"net maps {self.net.in_dim}->{self.net.out_dim}, expected {want}->{self.d}")

    @classmethod
    def init(cls, d: int, rng: RngState, k: int = 0, hidden=DEFAULT_HIDDEN) -> "FlowModel":
        return cls(Mlp.init([d + TIME_FEATURES + k, *hidden, d], rng), d, k)

    def _inp(self, x, t, c):
        if self.k and c is None:
            raise ValueError(f"model expects a {self.k}-dimensional context")
        return assemble_input(x, t, c if self.k else None)

    def velocity(self, x, t, c=None):
        return forward(self.net, self._inp(x, t, c))

    def divergence(self, x, t, c=None):
        jac = jacobian(self.net, self._inp(x, t, c), self.d)
        return np.trace(jac, axis1=1, axis2=2)


def fm_loss(model, x0_batch, x1_batch, t_batch, contexts=None, interpolant=None) -> float:
    """Mean squared residual between the field and the path velocity."""
    x0 = as_matrix(x0_batch, "x0_batch")
    x1 = as_matrix(x1_batch, "x1_batch")
    t = np.broadcast_to(np.asarray(t_batch, dtype=np.float64).ravel(), (x0.shape[0],))
    if x0.shape != x1.shape:
        raise ValueError(f"misaligned batches: {x0.shape} vs {x1.shape}")
    if contexts is not None and np.atleast_2d(contexts).shape[0] not in (1, x0.shape[0]):
        raise ValueError("contexts are not aligned with the batch")
    interp = interpolant or getattr(model, "interpolant", None) or LinearInterpolant()
    xt = interp.path(x0, x1, t)
    res = model.velocity(xt, t, contexts) - interp.velocity(x0, x1, t)
    return float(np.mean(np.sum(res * res, axis=1)))


def _fit_velocity(model: FlowModel, state: AdamState, x, t, target, c):
    """One Adam step on mean ||v(x, t; c) - target||^2."""
    inp = model._inp(x, t, c)
    res = forward(model.net, inp) - target
    loss = float(np.mean(np.sum(res * res, axis=1)))
    grads, _ = backward(model.net, inp, 2.0 * res / x.shape[0])
    net, state = adam_step(model.net, grads, state)
    model.net = net
    return loss, state


def train_fm(
    data,
    reference,
    epochs: int,
    batch: int,
    lr: float,
    rng: RngState,
    contexts=None,
    hidden=DEFAULT_HIDDEN,
    model: FlowModel | None = None,
    lr_final: float | None = None,
) -> tuple[FlowModel, list[float]]:
    """Train v(x, t) on pairs (data row, reference draw) with independent coupling.

    ``reference`` is either a FullGaussian (fresh draws per batch) or a
    matrix of reference samples (rows drawn uniformly with replacement).
    ``contexts`` optionally gives one context row per data row. One epoch is
    one pass over the shuffled data; a trailing partial batch is dropped.
    With ``lr_final`` the step size decays geometrically from ``lr`` to it.
    """
    x = as_matrix(data, "data")
    n, d = x.shape
    if n < batch:
        raise ValueError(f"data has {n} rows, fewer than batch size {batch}")
    c_all = None if contexts is None else as_matrix(contexts, "contexts")
    k = 0 if c_all is None else c_all.shape[1]
    if c_all is not None and c_all.shape[0] != n:
        raise ValueError("contexts must have one row per data row")
    if model is None:
        model = FlowModel.init(d, rng.child(0), k=k, hidden=hidden)
    if isinstance(reference, FullGaussian):
        if reference.dim != d:
            raise ValueError("reference dimension does not match data")
        draw = lambda m: sample_gaussian(rng, reference, m)
    else:
        ref = as_matrix(reference, "reference")
        if ref.shape[1] != d:
            raise ValueError("reference dimension does not match data")
        draw = lambda m: ref[rng.integers(ref.shape[0], m)]
    state = AdamState(lr=lr)
    trace: list[float] = []
    total = epochs * (n // batch)
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n - batch + 1, batch):
            if lr_final is not None:
                state.lr = lr * (lr_final / lr) ** (len(trace) / max(total - 1, 1))
            idx = order[s:s + batch]
            x0 = x[idx]
            x1 = draw(batch)
            t = rng.uniform(batch)
            xt = model.interpolant.path(x0, x1, t)
            target = model.interpolant.velocity(x0, x1, t)
            loss, state = _fit_velocity(model, state, xt, t, target, None if c_all is None else c_all[idx])
            trace.append(loss)
            if not np.isfinite(loss):
                raise TrainingDivergedError(len(trace), trace)
    return model, trace


def integrate(model, x, cfg: OdeConfig, context=None) -> np.ndarray:
    """Terminal state of dx/dt = v(x, t) over [0, 1] in the chosen direction."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    f = lambda y, t: model.velocity(y, t, context)
    out = odeint(f, xb, cfg.grid(), cfg.integrator)
    return out[0] if single else out


def push(model, cloud, cfg: OdeConfig, contexts=None) -> np.ndarray:
    """Row-wise transport of a particle cloud (the empirical pushforward)."""
    return integrate(model, as_matrix(cloud, "cloud"), cfg, contexts)


def _divergence(model, x, t, c, h: float = 1e-5):
    if hasattr(model, "divergence"):
        return model.divergence(x, t, c)
    div = np.zeros(x.shape[0])
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        div += (model.velocity(x + e, t, c)[:, j] - model.velocity(x - e, t, c)[:, j]) / (2.0 * h)
    return div


def log_likelihood(model, x, cfg: OdeConfig | None = None, reference: FullGaussian | None = None, context=None):
    """Model log-density at ``x`` (a d-vector or a batch of rows).

    Along the flow, d/dt log p_t(x(t)) = -div v, so transporting x from t=0
    to the reference at t=1 gives

        log p_0(x) = log q(x(1)) + int_0^1 div v(x(t), t) dt.

    The state and the accumulated divergence are integrated jointly with the
    configured explicit scheme; ``cfg.direction`` is ignored (always 0 -> 1).
    """
    cfg = cfg or OdeConfig()
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if reference is None:
        reference = FullGaussian.standard(xb.shape[1])
    n, d = xb.shape
    step = STEPPERS[cfg.integrator]

    def f(z, t):
        y = z[:, :d]
        return np.concatenate([model.velocity(y, t, context), _divergence(model, y, t, context)[:, None]], axis=1)

    z = np.concatenate([xb, np.zeros((n, 1))], axis=1)
    grid = time_grid(cfg.steps)
    for k in range(cfg.steps):
        z = step(f, z, grid[k], grid[k + 1] - grid[k])
        if not np.all(np.isfinite(z)):
            raise NonFiniteStateError(k + 1, "log-density accumulation")
    out = reference.logpdf(z[:, :d]) + z[:, d]
    return float(out[0]) if single else out


@dataclass
class TrajectoryBundle:
    """Particle positions on a shared time grid: positions[i, k] at times[k]."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[1] != self.times.size:
            raise ValueError("positions must have shape (n, len(times), d)")
        if self.times.size < 2:
            raise ValueError("a trajectory bundle needs at least two time points")
        if np.any(np.diff(self.times) <= 0) or self.times[0] < 0 or self.times[-1] > 1:
            raise ValueError("times must be increasing within [0, 1]")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")

    @classmethod
    def from_endpoints(cls, start, end) -> "TrajectoryBundle":
        return cls(np.array([0.0, 1.0]), np.stack([as_matrix(start), as_matrix(end)], axis=1))

    @property
    def start(self) -> np.ndarray:
        return self.positions[:, 0]

    @property
    def end(self) -> np.ndarray:
        return self.positions[:, -1]

    def grid_velocities(self) -> np.ndarray:
        """Central differences at interior times, one-sided at the ends."""
        return np.gradient(self.positions, self.times, axis=1, edge_order=1)

    def segment_sample(self, t):
        """Piecewise-linear position and segment velocity at per-particle times."""
        seg = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        rows = np.arange(self.positions.shape[0])
        a = self.positions[rows, seg]
        b = self.positions[rows, seg + 1]
        dt = self.times[seg + 1] - self.times[seg]
        w = ((t - self.times[seg]) / dt)[:, None]
        return (1.0 - w) * a + w * b, (b - a) / dt[:, None]


def lift_particles(
    bundle: TrajectoryBundle,
    epochs: int,
    lr: float,
    rng: RngState,
    batch: int = 256,
    hidden=DEFAULT_HIDDEN,
    lr_final: float | None = None,
) -> FlowModel:
    """Fit a velocity field to particle trajectories.

    Each epoch regresses the net on two sets of (position, time, velocity)
    triples: the grid points with their finite-difference velocities, and
    one uniformly timed point per particle on the piecewise-linear
    interpolation with its segment velocity. With ``lr_final`` the step
    size decays geometrically from ``lr`` over the epochs.
    """
    n, K, d = bundle.positions.shape
    model = FlowModel.init(d, rng.child(0), hidden=hidden)
    gx = bundle.positions.reshape(n * K, d)
    gt = np.tile(bundle.times, n)
    gv = bundle.grid_velocities().reshape(n * K, d)
    state = AdamState(lr=lr)
    for ep in range(epochs):
        if lr_final is not None:
            state.lr = lr * (lr_final / lr) ** (ep / max(epochs - 1, 1))
        t = bundle.times[0] + (bundle.times[-1] - bundle.times[0]) * rng.uniform(n)
        sx, sv = bundle.segment_sample(t)
        xs = np.concatenate([gx, sx])
        ts = np.concatenate([gt, t])
        vs = np.concatenate([gv, sv])
        order = rng.permutation(xs.shape[0])
        for s in range(0, xs.shape[0], batch):
            idx = order[s:s + batch]
            loss, state = _fit_velocity(model, state, xs[idx], ts[idx], vs[idx], None)
            if not np.isfinite(loss):
                raise TrainingDivergedError(state.step, [loss])
    return model


def dumps_flow(model: FlowModel) -> str:
    head = [
        FLOW_HEADER,
        f"d={model.d}",
        f"k={model.k}",
        f"interpolant={model.interpolant.kind}",
        f"integrator={model.ode.integrator}",
        f"steps={model.ode.steps}",
    ]
    return "\n".join(head) + "\n" + dumps_net(model.net)


def loads_flow(text: str) -> FlowModel:
    lines = text.split("\n")
    if lines[0].strip() != FLOW_HEADER:
        raise ValueError(f"not a flow checkpoint (expected header {FLOW_HEADER!r})")
    meta = dict(line.split("=", 1) for line in lines[1:6])
    interp = INTERPOLANTS[meta["interpolant"]]()
    ode = OdeConfig(integrator=meta["integrator"], steps=int(meta["steps"]))
    return FlowModel(loads_net("\n".join(lines[6:])), int(meta["d"]), int(meta["k"]), interp, ode)


def save_flow(model: FlowModel, path) -> None:
    Path(path).write_text(dumps_flow(model), encoding="utf-8")


def load_flow(path) -> FlowModel:
    return loads_flow(Path(path).read_text(encoding="utf-8"))
