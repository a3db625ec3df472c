"""Input-constrained CBF recursion.

Given h and gains k_1..k_r the barrier stack is

    b_0(x)   = h(x)
    b_i(x)   = inf_{u in U} [grad b_{i-1}(x) . (f(x) + g(x) u)] + k_i b_{i-1}(x)

for i = 1..r-1, and the input constraint is

    b_r(x,u) = grad b_{r-1}(x) . (f(x) + g(x) u) + k_r b_{r-1}(x),

which is affine in u. Gradients of b_i for i >= 1 are central finite
differences because the infimum makes b_i only piecewise smooth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .barrier import CandidateBarrier, ClassKParams, box_inf, box_sup, fd_gradient
from .dynamics import DynamicsModel, InputBox
from .errors import EvaluationError, InvalidInputError, InvalidParameterError

FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class IccbfEval:
    """Everything the filter and validator need at one state."""

    stack: np.ndarray  # b_0 .. b_{r-1}
    offset: float  # b_r(x, 0)
    slope: np.ndarray  # d b_r / d u
    feasibility: float  # sup over the box of b_r(x, .)

    @property
    def inner_margin(self) -> float:
        return float(self.stack.min())

    def constraint(self, u) -> float:
        return self.offset + float(self.slope @ u)


class IccbfSpec:
    """Candidate ICCBF: barrier h of relative-degree bound r with gains k_1..k_r."""

    def __init__(
        self,
        model: DynamicsModel,
        base: CandidateBarrier,
        params: Union[ClassKParams, Sequence[float]],
        degree: int | None = None,
    ):
        if not isinstance(params, ClassKParams):
            params = ClassKParams(tuple(params))
        degree = len(params) if degree is None else int(degree)
        if degree < 1:
            raise InvalidParameterError(f"degree must be >= 1, got {degree}")
        if len(params) != degree:
            raise InvalidParameterError(f"degree {degree} needs {degree} gains, got {len(params)}")
        self.model = model
        self.base = base
        self.params = params
        self.degree = degree
        self._k = params.as_array()
        self._last = None

    def with_params(self, params) -> "IccbfSpec":
        return IccbfSpec(self.model, self.base, params, self.degree)

    @property
    def box(self) -> InputBox:
        return self.model.input_box

    def __repr__(self):
        return f"IccbfSpec({self.base.name}, r={self.degree}, k={self.params.coeffs})"

    # level-wise evaluation, used for the finite-difference gradients
    def level(self, i: int, x: np.ndarray) -> float:
        if i == 0:
            return self.base.value(x)
        grad = self.level_gradient(i - 1, x)
        val = box_inf(grad @ self.model.drift(x), grad @ self.model.actuation(x), self.box)
        return val + self._k[i - 1] * self.level(i - 1, x)

    def level_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        if i == 0:
            return np.asarray(self.base.gradient(x), dtype=float)
        return fd_gradient(lambda y: self.level(i, y), x, FD_REL_STEP)

    def evaluate(self, x) -> IccbfEval:
        """Barrier stack plus the (offset, slope) form of b_r at ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1)
        key = x.tobytes()
        last = self._last
        if last is not None and last[0] == key:
            return last[1]
        f = self.model.drift(x)
        G = self.model.actuation(x)
        values = [self.base.value(x)]
        grad = np.asarray(self.base.gradient(x), dtype=float)
        for i in range(1, self.degree):
            values.append(box_inf(grad @ f, grad @ G, self.box) + self._k[i - 1] * values[-1])
            grad = self.level_gradient(i, x)
        offset = float(grad @ f) + self._k[-1] * values[-1]
        slope = grad @ G
        stack = np.array(values)
        if not (np.isfinite(stack).all() and np.isfinite(offset) and np.isfinite(slope).all()):
            raise EvaluationError(f"non-finite ICCBF evaluation at {x}: stack={stack}")
        stack.flags.writeable = False
        slope.flags.writeable = False
        out = IccbfEval(stack, offset, slope, box_sup(offset, slope, self.box))
        self._last = (key, out)
        return out


def inf_over_box(L_f: float, L_g, box: InputBox) -> float:
    return box_inf(L_f, L_g, box)


def sup_over_box(L_f: float, L_g, box: InputBox) -> float:
    return box_sup(L_f, L_g, box)


def eval_stack(spec: IccbfSpec, x) -> np.ndarray:
    return spec.evaluate(x).stack


def constraint_coefficients(spec: IccbfSpec, x) -> tuple[float, np.ndarray]:
    ev = spec.evaluate(x)
    return ev.offset, ev.slope


def eval_constraint(spec: IccbfSpec, x, u) -> float:
    """b_r(x, u)."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if not spec.box.contains(u):
        raise InvalidInputError(f"input {u} outside the admissible box")
    return spec.evaluate(x).constraint(u)


def inner_set_margin(spec: IccbfSpec, x) -> float:
    """min_i b_i(x); non-negative exactly on the inner safe set."""
    return spec.evaluate(x).inner_margin


def kcand_maximizer(spec: IccbfSpec, x) -> np.ndarray:
    """Box vertex maximizing b_r(x, .); zero-slope channels take the lower bound."""
    slope = spec.evaluate(x).slope
    return np.where(slope > 0, spec.box.upper, spec.box.lower)


def kcand_feasible(spec: IccbfSpec, x, tol: float = 0.0) -> tuple[bool, float]:
    """(K_cand non-empty, sup_u b_r(x, u))."""
    margin = spec.evaluate(x).feasibility
    return margin >= -tol, margin
