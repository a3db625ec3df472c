"""Minimum-deviation safety filter over one affine ICCBF constraint and the input box.

The program

    min ||u - u_nom||^2   s.t.  a + s . u >= 0,   lower <= u <= upper

has the KKT solution u(lam) = clip(u_nom + lam * s) for the smallest lam >= 0
with a + s . u(lam) >= 0. The constraint value along that path is
non-decreasing and piecewise linear in lam, with breakpoints where a coordinate
reaches a box face, so the solver walks the face activations in order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import DynamicsModel, InputBox, clamp_input
from .errors import InvalidInputError
from .iccbf import IccbfSpec


@dataclass(frozen=True)
class FilterResult:
    input: np.ndarray
    modified: bool
    slack_used: float
    constraint_value: float


def nominal_pd(model: DynamicsModel, goal, x, gains: Sequence[float]) -> np.ndarray:
    """Model-specific PD tracking law toward ``goal``, clamped to the box."""
    if min(gains) <= 0:
        raise ValueError(f"PD gains must be positive, got {tuple(gains)}")
    goal = np.asarray(goal, dtype=float)
    x = np.asarray(x, dtype=float)
    return clamp_input(model.input_box, model.nominal(goal, x, gains))


def project_halfspace_box(offset: float, slope, box: InputBox, u_nom) -> tuple[np.ndarray, float]:
    """Closest point to ``u_nom`` in {offset + slope.u >= 0} ∩ box.

    Returns ``(u, value)``. If the intersection is empty, ``u`` maximizes the
    constraint over the box (staying at ``u_nom`` on zero-slope channels) and
    ``value`` is that negative maximum.
    """
    s = np.asarray(slope, dtype=float)
    u0 = np.asarray(u_nom, dtype=float)
    value = offset + float(s @ u0)
    if value >= 0.0:
        return u0.copy(), value
    ss = float(s @ s)
    if ss > 0.0:
        u = u0 - (value / ss) * s
        if (u >= box.lower).all() and (u <= box.upper).all():
            return u, offset + float(s @ u)

    # lam at which each coordinate hits the face it is moving toward
    with np.errstate(divide="ignore", invalid="ignore"):
        hit = np.where(s > 0, (box.upper - u0) / s, np.where(s < 0, (box.lower - u0) / s, np.inf))
    hit = np.maximum(hit, 0.0)
    order = np.argsort(hit, kind="stable")

    free = s != 0
    free &= hit > 0
    lam_prev = 0.0
    val_prev = value
    for j in order:
        if not free.any():
            break
        rate = float(s[free] @ s[free])
        lam_next = hit[j]
        if lam_next > lam_prev:
            reach = lam_prev + (-val_prev) / rate
            if reach <= lam_next:
                u = np.clip(u0 + reach * s, box.lower, box.upper)
                # snap free coordinates to the exact root
                return u, offset + float(s @ u)
            val_prev += rate * (lam_next - lam_prev)
            lam_prev = lam_next
        free[j] = False

    # every moving coordinate is at its face: best box point, still infeasible
    u = np.where(s > 0, box.upper, np.where(s < 0, box.lower, u0))
    return u, offset + float(s @ u)


def safety_filter(spec: IccbfSpec, x, u_nom) -> FilterResult:
    """Minimally modify ``u_nom`` so that b_r(x, u) >= 0 and u stays in the box.

    Infeasibility is reported through ``slack_used > 0``, never raised.
    """
    u_nom = np.asarray(u_nom, dtype=float).reshape(-1)
    box = spec.box
    if not box.contains(u_nom):
        raise InvalidInputError(f"nominal input {u_nom} outside the admissible box")
    # absorb the containment tolerance
    u_nom = np.minimum(np.maximum(u_nom, box.lower), box.upper)
    ev = spec.evaluate(x)
    value = ev.constraint(u_nom)
    if value >= 0.0:
        return FilterResult(u_nom, False, 0.0, value)
    if not ev.slope.any():
        return FilterResult(u_nom, False, -value, value)

    u, value = project_halfspace_box(ev.offset, ev.slope, box, u_nom)
    if value < 0.0 and value > -1e-9:
        # root-finding round-off; the halfspace is reachable
        value_slack = 0.0
    else:
        value_slack = max(0.0, -value)
    return FilterResult(u, True, value_slack, value)


class FilteredPolicy:
    """x -> safety_filter(spec, x, nominal_pd(goal, x)).

    ``extra_specs`` are filtered first, in order, each taking the previous
    output as its nominal input; ``spec`` is applied last so its constraint
    holds whenever it is feasible.
    """

    def __init__(self, spec: IccbfSpec, goal, gains: Sequence[float], extra_specs: Sequence[IccbfSpec] = ()):
        self.spec = spec
        self.goal = np.asarray(goal, dtype=float)
        self.gains = tuple(gains)
        self.extra_specs = tuple(extra_specs)
        self.last: FilterResult | None = None

    def with_spec(self, spec: IccbfSpec) -> "FilteredPolicy":
        return FilteredPolicy(spec, self.goal, self.gains, self.extra_specs)

    def nominal(self, x) -> np.ndarray:
        return nominal_pd(self.spec.model, self.goal, x, self.gains)

    def filter(self, x) -> FilterResult:
        u = self.nominal(x)
        for extra in self.extra_specs:
            u = safety_filter(extra, x, u).input
        self.last = res = safety_filter(self.spec, x, u)
        return res

    def __call__(self, x) -> np.ndarray:
        return self.filter(x).input


def filtered_policy(spec: IccbfSpec, goal, gains, extra_specs=()) -> Callable[[np.ndarray], np.ndarray]:
    return FilteredPolicy(spec, goal, gains, extra_specs)
