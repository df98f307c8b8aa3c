"""Small tanh multilayer perceptron with hand-written reverse mode.

Inputs are batched: a forward pass maps an ``(n, in)`` array to ``(n, out)``.
Parameter gradients returned by :func:`backward` are summed over the batch,
i.e. they are the gradient of ``sum_i upstream_i . f(input_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ndmath import RngState

NET_HEADER = "SHIFTGEN-NET-1"
TIME_FEATURES = 3  # t, sin(2 pi t), cos(2 pi t)


def time_features(t, n: int) -> np.ndarray:
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (n,))
    return np.stack([t, np.sin(2.0 * np.pi * t), np.cos(2.0 * np.pi * t)], axis=1)


def assemble_input(x, t=None, c=None) -> np.ndarray:
    """Concatenate state, optional time features and optional context.

    ``x`` is ``(n, d)`` (or a single ``d``-vector), ``t`` a scalar or
    ``n``-vector, ``c`` a ``k``-vector shared by all rows or an ``(n, k)`` block.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    parts = [x]
    if t is not None:
        parts.append(time_features(t, n))
    if c is not None:
        c = np.asarray(c, dtype=np.float64)
        if c.ndim == 1:
            c = np.broadcast_to(c, (n, c.size))
        if c.shape[0] != n:
            raise ValueError(f"context has {c.shape[0]} rows, state has {n}")
        parts.append(c)
    return np.concatenate(parts, axis=1)


@dataclass(frozen=True)
class NetInput:
    x: np.ndarray
    t: float | np.ndarray | None = None
    c: np.ndarray | None = None

    def assemble(self) -> np.ndarray:
        return assemble_input(self.x, self.t, self.c)


@dataclass(frozen=True)
class Mlp:
    """Affine layers, tanh between them, identity on the output."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} incompatible")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @classmethod
    def init(cls, layer_sizes, rng: RngState) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        sizes = [int(s) for s in layer_sizes]
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(lim * (2.0 * rng.uniform((fan_in, fan_out)) - 1.0))
            bs.append(np.zeros(fan_out))
        return cls(tuple(ws), tuple(bs))

    @classmethod
    def from_params(cls, params) -> "Mlp":
        params = list(params)
        return cls(tuple(params[0::2]), tuple(params[1::2]))

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def __call__(self, inp) -> np.ndarray:
        return forward(self, inp)


def _check_input(net: Mlp, inp) -> np.ndarray:
    if isinstance(inp, NetInput):
        inp = inp.assemble()
    a = np.atleast_2d(np.asarray(inp, dtype=np.float64))
    if a.shape[1] != net.in_dim:
        raise ValueError(f"input dimension {a.shape[1]} does not match network input {net.in_dim}")
    return a


def _forward_cache(net: Mlp, a: np.ndarray):
    acts = [a]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def forward(net: Mlp, inp) -> np.ndarray:
    a = _check_input(net, inp)
    return _forward_cache(net, a)[-1]


def backward(net: Mlp, inp, upstream) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of ``sum(upstream * forward(inp))``.

    Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    ``net.params`` and ``input_grad`` of the same shape as the input batch.
    """
    a = _check_input(net, inp)
    acts = _forward_cache(net, a)
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if g.shape != acts[-1].shape:
        raise ValueError(f"upstream shape {g.shape} does not match output {acts[-1].shape}")
    grads: list[np.ndarray] = []
    for i in range(len(net.weights) - 1, -1, -1):
        if i != len(net.weights) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads.append(g.sum(axis=0))
        grads.append(acts[i].T @ g)
        g = g @ net.weights[i].T
    grads.reverse()
    return grads, g


def jacobian(net: Mlp, inp, n_state: int | None = None) -> np.ndarray:
    """Per-row Jacobian of the output w.r.t. the first ``n_state`` inputs.

    Built from one backward pass per output coordinate; returns an array of
    shape ``(n, out, n_state)``.
    """
    a = _check_input(net, inp)
    n_state = net.in_dim if n_state is None else n_state
    if net.out_dim > 64 or n_state > 64:
        raise ValueError("jacobian is limited to 64 inputs and outputs")
    acts = _forward_cache(net, a)
    n = a.shape[0]
    jac = np.empty((n, net.out_dim, n_state))
    for k in range(net.out_dim):
        g = np.zeros((n, net.out_dim))
        g[:, k] = 1.0
        for i in range(len(net.weights) - 1, -1, -1):
            if i != len(net.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            g = g @ net.weights[i].T
        jac[:, k, :] = g[:, :n_state]
    return jac


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_update(params, grads, state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam on a list of arrays; returns new arrays and state."""
    if not state.m:
        state = replace(state, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameter shapes")
    step = state.step + 1
    m = [state.beta1 * mi + (1.0 - state.beta1) * g for mi, g in zip(state.m, grads)]
    v = [state.beta2 * vi + (1.0 - state.beta2) * g * g for vi, g in zip(state.v, grads)]
    c1 = 1.0 - state.beta1 ** step
    c2 = 1.0 - state.beta2 ** step
    new = [p - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps) for p, mi, vi in zip(params, m, v)]
    return new, replace(state, step=step, m=m, v=v)


def adam_step(net: Mlp, grads, state: AdamState) -> tuple[Mlp, AdamState]:
    params, state = adam_update(net.params, grads, state)
    return Mlp.from_params(params), state


def dumps_net(net: Mlp) -> str:
    lines = [NET_HEADER, " ".join(str(s) for s in net.layer_sizes)]
    for p in net.params:
        lines.append(" ".join(repr(float(v)) for v in p.ravel()))
    return "\n".join(lines) + "\n"


def loads_net(text: str) -> Mlp:
    lines = text.strip("\n").split("\n")
    if not lines or lines[0].strip() != NET_HEADER:
        raise ValueError(f"not a network checkpoint (expected header {NET_HEADER!r})")
    sizes = [int(s) for s in lines[1].split()]
    params = []
    body = lines[2:]
    if len(body) != 2 * (len(sizes) - 1):
        raise ValueError("checkpoint parameter block has the wrong number of lines")
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = np.array([float(v) for v in body[2 * i].split()]).reshape(fan_in, fan_out)
        b = np.array([float(v) for v in body[2 * i + 1].split()]).reshape(fan_out)
        params += [w, b]
    return Mlp.from_params(params)


def save_net(net: Mlp, path) -> None:
    Path(path).write_text(dumps_net(net), encoding="utf-8")


def load_net(path) -> Mlp:
    return loads_net(Path(path).read_text(encoding="utf-8"))
