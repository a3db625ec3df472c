"""Finite-horizon check of locally validated CBF parameters, and training data.

A parameter vector is accepted over [t, t+T] when the closed loop under the
filtered policy, simulated from the current state, keeps the candidate
constraint set K_cand non-empty at every visited state and never leaves the
inner safe set C* by more than ``eps``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .barrier import ClassKParams
from .dynamics import DEFAULT_DT, step
from .errors import CbfAdaptError, IntegrationError, OutOfSetError
from .iccbf import IccbfSpec
from .qp_filter import FilteredPolicy

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 2.0
DEFAULT_EPS = 1e-3
# b_r round-off allowance; matches the filter's feasibility tolerance
FEASIBILITY_TOL = 1e-9


@dataclass
class ValidationReport:
    validated: bool
    horizon: float
    min_inner_margin: float
    min_feasibility_margin: float
    safety_target: float
    progress_target: float
    infeasible_at: Optional[float]
    steps: int

    def to_dict(self) -> dict:
        return asdict(self)


def horizon_steps(T: float, dt: float) -> int:
    return max(1, int(round(T / dt)))


def validate_horizon(
    spec: IccbfSpec,
    policy: Callable[[np.ndarray], np.ndarray],
    x0,
    T: float = DEFAULT_HORIZON,
    dt: float = DEFAULT_DT,
    eps: float = DEFAULT_EPS,
    goal=None,
    stop_on_failure: bool = False,
) -> ValidationReport:
    """Roll the closed loop out over ``T`` and check the discrete invariance surrogate.

    Args:
        spec: candidate ICCBF whose parameters are being checked.
        policy: state -> input map; normally a :class:`FilteredPolicy` on ``spec``.
        x0: initial state; must satisfy ``inner_set_margin >= -eps``.
        T, dt: horizon and integration step. ``round(T/dt)`` steps are taken.
        eps: allowed excursion below zero of the sampled inner-set margin.
        goal: goal state for the progress label; taken from the policy if omitted.
        stop_on_failure: end the rollout at the first failing step. The labels
            then cover only the simulated prefix.

    Raises:
        OutOfSetError: ``x0`` is outside the inner safe set.
    """
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if not (0 < dt <= T):
        raise ValueError(f"need 0 < dt <= T, got dt={dt}, T={T}")
    model = spec.model
    x = np.asarray(x0, dtype=float).reshape(-1)
    ev = spec.evaluate(x)
    if ev.inner_margin < -eps:
        raise OutOfSetError(
            f"initial state outside the inner safe set: inner margin {ev.inner_margin:.6g} < -{eps:g}"
        )
    if goal is None:
        goal = getattr(policy, "goal", None)
    n_steps = horizon_steps(T, dt)

    min_inner = ev.inner_margin
    min_feas = math.inf
    min_b0 = float(ev.stack[0])
    infeasible_at = None
    validated = True
    for k in range(n_steps):
        ev = spec.evaluate(x)
        feas = ev.feasibility
        min_feas = min(min_feas, feas)
        if feas < -FEASIBILITY_TOL and infeasible_at is None:
            infeasible_at = k * dt
            validated = False
            if stop_on_failure:
                break
        u = policy(x)
        try:
            x = step(model, x, u, dt)
        except IntegrationError:
            validated = False
            if infeasible_at is None:
                infeasible_at = (k + 1) * dt
            break
        ev = spec.evaluate(x)
        min_inner = min(min_inner, ev.inner_margin)
        min_b0 = min(min_b0, float(ev.stack[0]))
        if ev.inner_margin < -eps and validated:
            validated = False
            infeasible_at = (k + 1) * dt
            if stop_on_failure:
                break

    if goal is not None:
        progress = model.goal_distance(x0, goal) - model.goal_distance(x, goal)
    else:
        progress = 0.0
    return ValidationReport(
        validated=validated,
        horizon=float(T),
        min_inner_margin=float(min_inner),
        min_feasibility_margin=float(min_feas),
        safety_target=float(min_b0),
        progress_target=float(progress),
        infeasible_at=infeasible_at,
        steps=n_steps,
    )


def validate_params(
    spec: IccbfSpec, params, x0, goal, gains, T=DEFAULT_HORIZON, dt=DEFAULT_DT, eps=DEFAULT_EPS, **kwargs
) -> ValidationReport:
    """Convenience wrapper: rebuild the spec and filtered policy for ``params``."""
    cand = spec.with_params(params)
    return validate_horizon(cand, FilteredPolicy(cand, goal, gains), x0, T, dt, eps, goal=goal, **kwargs)


def make_features(x, goal, params) -> np.ndarray:
    """State relative to goal followed by the raw class-K gains."""
    coeffs = params.as_array() if isinstance(params, ClassKParams) else np.asarray(params, dtype=float)
    return np.concatenate([np.asarray(x, dtype=float) - np.asarray(goal, dtype=float), coeffs])


@dataclass
class Dataset:
    """Feature matrix with the two regression labels and the validated flag."""

    features: np.ndarray
    targets: np.ndarray  # columns: safety_target, progress_target
    validated: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_arrays(cls, features, targets, validated=None, meta=None) -> "Dataset":
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        targets = np.asarray(targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        if validated is None:
            validated = np.ones(features.shape[0], dtype=bool)
        mean, std = feature_stats(features)
        return cls(features, targets, np.asarray(validated, dtype=bool), mean, std, dict(meta or {}))


def feature_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if features.shape[0] == 0:
        return np.zeros(features.shape[1]), np.ones(features.shape[1])
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def generate_dataset(
    spec: IccbfSpec,
    scenario_sampler: Callable[[np.random.Generator], tuple],
    param_sampler: Callable[[np.random.Generator], ClassKParams],
    N: int,
    T: float = DEFAULT_HORIZON,
    dt: float = DEFAULT_DT,
    eps: float = DEFAULT_EPS,
    seed: int = 0,
    gains=(1.0, 1.5),
    max_retries: int = 100,
) -> Dataset:
    """Label ``N`` sampled (state, goal, parameter) triples by rollout.

    ``scenario_sampler(rng)`` returns ``(x0, goal)``; ``param_sampler(rng)``
    returns gains. Draws whose ``x0`` is outside C*(params) are resampled up
    to ``max_retries`` times; rows that still fail are dropped and counted in
    ``meta['rejected_rows']``. Row ``i`` draws from its own generator seeded by
    ``(seed, i)`` so the output does not depend on evaluation order.
    """
    rows_x, rows_y, rows_v = [], [], []
    rejected = 0
    for i in range(N):
        rng = np.random.default_rng([seed, i])
        for _ in range(max_retries):
            x0, goal = scenario_sampler(rng)
            params = param_sampler(rng)
            if not isinstance(params, ClassKParams):
                params = ClassKParams(tuple(params))
            cand = spec.with_params(params)
            try:
                if cand.evaluate(x0).inner_margin < 0:
                    continue
                rep = validate_horizon(cand, FilteredPolicy(cand, goal, gains), x0, T, dt, eps, goal=goal)
            except CbfAdaptError:
                continue
            rows_x.append(make_features(x0, goal, params))
            rows_y.append((rep.safety_target, rep.progress_target))
            rows_v.append(rep.validated)
            break
        else:
            rejected += 1
    if rejected:
        log.warning("generate_dataset: %d of %d rows rejected after %d retries", rejected, N, max_retries)
    n_feat = spec.model.n + spec.degree
    features = np.array(rows_x, dtype=float).reshape(-1, n_feat)
    meta = {
        "seed": int(seed),
        "rows_requested": int(N),
        "rejected_rows": rejected,
        "horizon": float(T),
        "dt": float(dt),
        "eps": float(eps),
        "gains": [float(g) for g in gains],
        "model": spec.model.name,
        "barrier": spec.base.name,
        "degree": spec.degree,
    }
    return Dataset.from_arrays(features, np.array(rows_y, dtype=float).reshape(-1, 2), rows_v, meta)


TARGET_COLUMNS = ("safety_target", "progress_target")


def save_dataset(ds: Dataset, csv_path) -> Path:
    """Write ``<csv_path>`` and the sidecar ``<csv_path>.json``. Returns the sidecar path."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"feature_{j}" for j in range(ds.n_features)] + list(TARGET_COLUMNS) + ["validated"])
    for xrow, yrow, v in zip(ds.features, ds.targets, ds.validated):
        writer.writerow([repr(float(a)) for a in xrow] + [repr(float(a)) for a in yrow] + [int(v)])
    csv_path.write_text(buf.getvalue())
    sidecar = csv_path.with_suffix(csv_path.suffix + ".json")
    side = {
        "feature_mean": ds.feature_mean.tolist(),
        "feature_std": ds.feature_std.tolist(),
        "n_features": ds.n_features,
        "rows": len(ds),
        "config": ds.meta,
    }
    sidecar.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_dataset(csv_path) -> Dataset:
    csv_path = Path(csv_path)
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    n_feat = sum(1 for h in header if h.startswith("feature_"))
    data = np.array([[float(a) for a in r] for r in rows], dtype=float).reshape(-1, len(header))
    sidecar = csv_path.with_suffix(csv_path.suffix + ".json")
    if sidecar.exists():
        side = json.loads(sidecar.read_text())
        mean = np.asarray(side["feature_mean"], dtype=float)
        std = np.asarray(side["feature_std"], dtype=float)
        meta = side.get("config", {})
    else:
        mean, std = feature_stats(data[:, :n_feat])
        meta = {}
    return Dataset(data[:, :n_feat], data[:, n_feat : n_feat + 2], data[:, -1] > 0.5, mean, std, meta)
