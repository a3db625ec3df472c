"""Closed-loop runs with fixed barrier parameters, and trajectory metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import DEFAULT_DT, DynamicsModel, step
from .iccbf import IccbfSpec
from .qp_filter import FilteredPolicy


@dataclass
class Trajectory:
    times: np.ndarray  # (N+1,)
    states: np.ndarray  # (N+1, n)
    inputs: np.ndarray  # (N, m)
    stacks: np.ndarray  # (N+1, r) barrier stack of the spec active at each sample
    feasibility: np.ndarray  # (N,) sup_u b_r at each input time
    modified: np.ndarray = field(default=None)  # (N,) filter active
    params: Optional[np.ndarray] = None  # (N+1, r) gains active at each sample

    @property
    def min_b0(self) -> float:
        return float(np.min(self.stacks[:, 0]))

    @property
    def inner_margins(self) -> np.ndarray:
        return np.min(self.stacks, axis=1)

    @property
    def filter_active_fraction(self) -> float:
        if self.modified is None or self.modified.size == 0:
            return 0.0
        return float(np.mean(self.modified))


def time_to_reach(
    model: DynamicsModel, traj: Trajectory, target, tol: float
) -> Optional[float]:
    """First sample time with goal distance to ``target`` at most ``tol``; None if never."""
    target = np.asarray(target, dtype=float)
    for t, x in zip(traj.times, traj.states):
        if model.goal_distance(x, target) <= tol:
            return float(t)
    return None


def simulate(
    spec: IccbfSpec,
    goal,
    x0,
    duration: float,
    gains: Sequence[float],
    dt: float = DEFAULT_DT,
    extra_specs: Sequence[IccbfSpec] = (),
) -> Trajectory:
    """Filtered closed loop with the parameters of ``spec`` held fixed."""
    policy = FilteredPolicy(spec, goal, gains, extra_specs)
    n_steps = int(round(duration / dt))
    x = np.asarray(x0, dtype=float).reshape(-1)
    states = [x]
    inputs, stacks, feas, modified = [], [], [], []
    for _ in range(n_steps):
        ev = spec.evaluate(x)
        stacks.append(ev.stack)
        feas.append(ev.feasibility)
        res = policy.filter(x)
        inputs.append(res.input)
        modified.append(res.modified)
        x = step(spec.model, x, res.input, dt)
        states.append(x)
    stacks.append(spec.evaluate(x).stack)
    params = np.tile(spec.params.as_array(), (n_steps + 1, 1))
    return Trajectory(
        times=np.arange(n_steps + 1) * dt,
        states=np.array(states),
        inputs=np.array(inputs).reshape(n_steps, spec.model.m),
        stacks=np.array(stacks),
        feasibility=np.array(feas),
        modified=np.array(modified, dtype=bool),
        params=params,
    )
