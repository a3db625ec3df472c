"""Candidate barrier functions, linear class-K gains and the plain CBF condition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import DynamicsModel, InputBox
from .errors import EvaluationError, InvalidInputError, InvalidParameterError, OutOfSetError


def fd_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float) -> np.ndarray:
    """Central finite-difference gradient with step ``rel_step * max(1, |x|_inf)``."""
    x = np.asarray(x, dtype=float)
    h = rel_step * max(1.0, float(np.abs(x).max()) if x.size else 1.0)
    grad = np.empty(x.size)
    xp = x.copy()
    for i in range(x.size):
        xp[i] = x[i] + h
        fp = fn(xp)
        xp[i] = x[i] - h
        fm = fn(xp)
        xp[i] = x[i]
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


class CandidateBarrier:
    """A continuously differentiable h(x); safe set is {h >= 0}.

    Subclasses override :meth:`value` and usually :meth:`gradient`; the
    default gradient is a central finite difference.
    """

    name = "barrier"
    fd_step = 1e-6

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return fd_gradient(self.value, x, self.fd_step)

    def __call__(self, x) -> float:
        return self.value(x)


class LinearBarrier(CandidateBarrier):
    """h(x) = a . x + c. Covers walls, altitude floors and velocity bounds."""

    def __init__(self, a: Sequence[float], c: float, name: str = "linear"):
        self.a = np.asarray(a, dtype=float)
        self.a.flags.writeable = False
        self.c = float(c)
        self.name = name

    def value(self, x):
        return float(self.a @ x) + self.c

    def gradient(self, x):
        return self.a


class DiskObstacle(CandidateBarrier):
    """h(x) = |x[idx] - center|^2 - radius^2 (stay outside a disk)."""

    def __init__(self, center, radius: float, indices=(0, 1), n: int = 3):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.indices = list(indices)
        self.n = n
        self.name = "disk"

    def value(self, x):
        d = np.asarray(x)[self.indices] - self.center
        return float(d @ d) - self.radius**2

    def gradient(self, x):
        g = np.zeros(self.n)
        g[self.indices] = 2.0 * (np.asarray(x)[self.indices] - self.center)
        return g


class FunctionBarrier(CandidateBarrier):
    """Wrap a user callable; gradient falls back to finite differences."""

    def __init__(self, fn: Callable, grad: Optional[Callable] = None, name: str = "custom"):
        self._fn, self._grad = fn, grad
        self.name = name

    def value(self, x):
        return float(self._fn(x))

    def gradient(self, x):
        if self._grad is None:
            return super().gradient(x)
        return np.asarray(self._grad(x), dtype=float)


def wall_barrier(x_max: float, index: int = 0, n: int = 2) -> LinearBarrier:
    """h = x_max - x[index]."""
    a = np.zeros(n)
    a[index] = -1.0
    return LinearBarrier(a, x_max, name="wall")


def floor_barrier(z_min: float, index: int = 1, n: int = 6) -> LinearBarrier:
    """h = x[index] - z_min."""
    a = np.zeros(n)
    a[index] = 1.0
    return LinearBarrier(a, -z_min, name="altitude_floor")


def upper_bound_barrier(bound: float, index: int, n: int) -> LinearBarrier:
    """h = bound - x[index], e.g. a speed limit."""
    a = np.zeros(n)
    a[index] = -1.0
    return LinearBarrier(a, bound, name="upper_bound")


def lower_bound_barrier(bound: float, index: int, n: int) -> LinearBarrier:
    """h = x[index] - bound, e.g. a descent-rate limit ``vz >= -vz_max``."""
    a = np.zeros(n)
    a[index] = 1.0
    return LinearBarrier(a, -bound, name="lower_bound")


@dataclass(frozen=True)
class ClassKParams:
    """Gains k_1..k_r of the linear class-K functions alpha_i(s) = k_i * s."""

    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(k) for k in np.asarray(self.coeffs, dtype=float).reshape(-1))
        if not coeffs:
            raise InvalidParameterError("need at least one class-K gain")
        for i, k in enumerate(coeffs):
            if not (np.isfinite(k) and k > 0):
                raise InvalidParameterError(f"class-K gain k_{i + 1}={k} must be strictly positive")
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, i):
        return self.coeffs[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.coeffs)


def class_k_eval(k: float, s: float) -> float:
    if not k > 0:
        raise InvalidParameterError(f"class-K gain must be positive, got {k}")
    return k * s


def box_sup(L_f: float, L_g, box: InputBox) -> float:
    """max over the box of L_f + L_g . u."""
    L_g = np.asarray(L_g, dtype=float)
    return float(L_f + np.maximum(L_g * box.lower, L_g * box.upper).sum())


def box_inf(L_f: float, L_g, box: InputBox) -> float:
    """min over the box of L_f + L_g . u."""
    L_g = np.asarray(L_g, dtype=float)
    return float(L_f + np.minimum(L_g * box.lower, L_g * box.upper).sum())


def lie_derivatives(model: DynamicsModel, b: CandidateBarrier, x) -> tuple[float, np.ndarray]:
    """Return (L_f b, L_g b) at ``x``."""
    x = np.asarray(x, dtype=float)
    grad = np.asarray(b.gradient(x), dtype=float)
    if not np.all(np.isfinite(grad)):
        raise EvaluationError(f"non-finite gradient of {b.name} at {x}")
    return float(grad @ model.drift(x)), grad @ model.actuation(x)


def cbf_condition_holds(model: DynamicsModel, h: CandidateBarrier, k: float, x) -> bool:
    """sup_u [L_f h + L_g h u] >= -k h(x), for x in {h >= 0}."""
    hx = h.value(x)
    if hx < 0:
        raise OutOfSetError(f"h(x)={hx:.6g} < 0: state outside the safe set")
    L_f, L_g = lie_derivatives(model, h, x)
    return box_sup(L_f, L_g, model.input_box) >= -class_k_eval(k, hx)


def kcbf_contains(model: DynamicsModel, h: CandidateBarrier, k: float, x, u) -> bool:
    """Whether ``u`` satisfies the first-order CBF constraint at ``x``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if not model.input_box.contains(u):
        raise InvalidInputError(f"input {u} outside the admissible box")
    L_f, L_g = lie_derivatives(model, h, x)
    return L_f + float(L_g @ u) >= -class_k_eval(k, h.value(x))
