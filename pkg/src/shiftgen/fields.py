"""Velocity fields and explicit ODE steppers shared by the flow modules.

A field is any object with ``velocity(x, t, c=None) -> (n, d)`` for a batch
``x`` of shape ``(n, d)``. Fields that also provide ``divergence(x, t, c)``
can be used for likelihood evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int, what: str = "state"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class ConstantField:
    c: np.ndarray

    def velocity(self, x, t, c=None):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.asarray(self.c, dtype=np.float64), x.shape).copy()

    def divergence(self, x, t, c=None):
        return np.zeros(np.atleast_2d(x).shape[0])


@dataclass(frozen=True)
class AffineField:
    """v(x, t) = A x + b, independent of time."""

    A: np.ndarray
    b: np.ndarray | None = None

    def velocity(self, x, t, c=None):
        x = np.atleast_2d(x)
        v = x @ np.asarray(self.A, dtype=np.float64).T
        return v if self.b is None else v + self.b

    def divergence(self, x, t, c=None):
        return np.full(np.atleast_2d(x).shape[0], float(np.trace(self.A)))


@dataclass(frozen=True)
class FunctionField:
    fn: Callable

    def velocity(self, x, t, c=None):
        return np.asarray(self.fn(np.atleast_2d(x), t), dtype=np.float64)


def zero_field(d: int) -> ConstantField:
    return ConstantField(np.zeros(d))


def time_grid(steps: int, reverse: bool = False) -> np.ndarray:
    if steps < 1:
        raise ValueError("steps must be at least 1")
    g = np.linspace(0.0, 1.0, steps + 1)
    return g[::-1] if reverse else g


def euler_step(f, x, t, h):
    return x + h * f(x, t)


def rk4_step(f, x, t, h):
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


STEPPERS = {"euler": euler_step, "rk4": rk4_step}


def odeint(f, x0, grid, method: str = "rk4", keep_path: bool = False):
    """Integrate ``dx/dt = f(x, t)`` over the points of ``grid`` (either direction)."""
    try:
        step = STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown integrator {method!r}; choose from {sorted(STEPPERS)}") from None
    x = np.array(x0, dtype=np.float64)
    path = [x.copy()] if keep_path else None
    for k in range(len(grid) - 1):
        x = step(f, x, grid[k], grid[k + 1] - grid[k])
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(k + 1)
        if keep_path:
            path.append(x.copy())
    return (x, np.stack(path)) if keep_path else x
