"""Online adaptation of class-K gains with uncertainty-gated proposals.

At every adaptation time t_k the loop proposes gains around the current ones,
scores them with a predictor (the trained ensemble, or an oracle that runs the
validator), keeps the ones that are in-distribution and confidently safe,
picks the one with the best predicted progress, and confirms it by a rollout
from the current state before adopting it. Adaptation times are spaced by
less than the validation horizon, so consecutive validated windows overlap.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .barrier import ClassKParams
from .dynamics import DEFAULT_DT, DynamicsModel, step
from .errors import CbfAdaptError, InvalidParameterError, OutOfSetError
from .iccbf import IccbfSpec
from .penn import EnsembleModel, EnsemblePrediction, predict
from .qp_filter import FilteredPolicy
from .simulation import Trajectory
from .validator import ValidationReport, make_features, validate_horizon

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptationConfig:
    horizon: float = 2.0
    period: float = 0.5
    candidates: int = 8
    spread: float = 0.3
    epistemic_threshold: float = 0.05
    beta: float = 1.0
    eps: float = 1e-3
    dt: float = DEFAULT_DT
    seed: int = 0
    confirm: bool = True

    def __post_init__(self):
        if not (0 < self.period < self.horizon):
            raise InvalidParameterError(
                f"adaptation period must satisfy 0 < period < horizon, got period={self.period}, horizon={self.horizon}"
            )
        if not self.epistemic_threshold > 0:
            raise InvalidParameterError(f"epistemic_threshold must be > 0, got {self.epistemic_threshold}")
        if self.beta < 0:
            raise InvalidParameterError(f"beta must be >= 0, got {self.beta}")
        if self.candidates < 0 or self.spread < 0:
            raise InvalidParameterError("candidates and spread must be non-negative")
        if not (0 < self.dt <= self.period):
            raise InvalidParameterError(f"need 0 < dt <= period, got dt={self.dt}")

    @property
    def period_steps(self) -> int:
        return max(1, int(round(self.period / self.dt)))


def propose_candidates(current: ClassKParams, config: AdaptationConfig, index: int = 0) -> list:
    """``current`` followed by ``config.candidates`` log-normal perturbations of it."""
    rng = np.random.default_rng([config.seed, index])
    base = np.log(current.as_array())
    out = [current]
    for _ in range(config.candidates):
        step_ = config.spread * rng.standard_normal(base.size)
        out.append(ClassKParams(tuple(np.exp(base + step_))))
    return out


def gate_decisions(predictions: Sequence[EnsemblePrediction], config: AdaptationConfig) -> list:
    """Per prediction: (in-distribution, confidently safe)."""
    out = []
    for p in predictions:
        epistemic_ok = bool(p.epistemic_safety <= config.epistemic_threshold)
        lower = p.mean_safety - config.beta * np.sqrt(p.total_safety)
        out.append((epistemic_ok, bool(lower >= 0.0)))
    return out


def uncertainty_gate(predictions: Sequence[EnsemblePrediction], config: AdaptationConfig) -> list:
    """Indices whose safety prediction is in-distribution and confidently non-negative."""
    return [i for i, (e, s) in enumerate(gate_decisions(predictions, config)) if e and s]


def select_parameter(candidates: Sequence[ClassKParams], predictions: Sequence[EnsemblePrediction], current: ClassKParams) -> ClassKParams:
    """Highest predicted progress; ties go to the candidate closest to ``current`` in log space."""
    if not candidates:
        raise ValueError("no accepted candidates to select from")
    log_cur = np.log(current.as_array())
    best, best_key = None, None
    for i, (c, p) in enumerate(zip(candidates, predictions)):
        prog = float(p.mean_progress)
        dist = float(np.linalg.norm(np.log(c.as_array()) - log_cur))
        if best is None:
            best, best_key = i, (prog, dist)
            continue
        bp, bd = best_key
        if prog > bp + 1e-9 or (abs(prog - bp) <= 1e-9 and dist < bd - 1e-12):
            best, best_key = i, (prog, dist)
    return candidates[best]


class EnsemblePredictor:
    """Scores candidate gains with a trained ensemble."""

    def __init__(self, model: EnsembleModel):
        self.model = model

    def __call__(self, x, goal, candidates) -> list:
        if not candidates:
            return []
        feats = np.array([make_features(x, goal, c) for c in candidates])
        pred = predict(self.model, feats)
        return [pred.row(i) for i in range(len(candidates))]


class OraclePredictor:
    """Scores candidates by running the validator itself (zero uncertainty).

    Invalid candidates get a safety mean of -1 so the gate rejects them.
    Reports are cached per (state, gains) so the confirmation step can reuse them.
    """

    def __init__(self, spec: IccbfSpec, gains, config: AdaptationConfig, extra_specs=()):
        self.spec = spec
        self.gains = tuple(gains)
        self.config = config
        self.extra_specs = tuple(extra_specs)
        self.cache: dict = {}

    def report(self, x, goal, params: ClassKParams) -> ValidationReport:
        key = (np.asarray(x, dtype=float).tobytes(), params.coeffs)
        if key not in self.cache:
            self.cache = {k: v for k, v in self.cache.items() if k[0] == key[0]}
            self.cache[key] = confirm(self.spec, params, x, goal, self.gains, self.config, self.extra_specs)
        return self.cache[key]

    def __call__(self, x, goal, candidates) -> list:
        preds = []
        for c in candidates:
            rep = self.report(x, goal, c)
            safety = rep.safety_target if rep.validated else -1.0
            zero = np.zeros(2)
            preds.append(EnsemblePrediction(np.array([safety, rep.progress_target]), zero, zero.copy()))
        return preds


def confirm(spec, params, x, goal, gains, config: AdaptationConfig, extra_specs=()) -> ValidationReport:
    cand = spec.with_params(params)
    policy = FilteredPolicy(cand, goal, gains, extra_specs)
    return validate_horizon(cand, policy, x, config.horizon, config.dt, config.eps, goal=goal, stop_on_failure=True)


@dataclass
class AdaptationLog:
    events: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    def event_times(self) -> list:
        return [e["t"] for e in self.events]

    def adopted(self) -> list:
        return [tuple(e["chosen"]) for e in self.events]

    def parameter_changes(self) -> int:
        chosen = self.adopted()
        return sum(1 for a, b in zip(chosen, chosen[1:]) if a != b)

    def frozen_events(self) -> int:
        return sum(1 for e in self.events if e["frozen"])

    def records(self):
        for e in self.events:
            yield {"type": "event", **e}
        for s in self.steps:
            yield {"type": "step", **s}

    def to_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        # events and steps interleaved in time order
        merged = sorted(self.records(), key=lambda r: (r["t"], 0 if r["type"] == "event" else 1))
        with path.open("w") as fh:
            for rec in merged:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "AdaptationLog":
        out = cls()
        for line in Path(path).read_text().splitlines():
            rec = json.loads(line)
            kind = rec.pop("type")
            (out.events if kind == "event" else out.steps).append(rec)
        return out


def adapt_run(
    model: DynamicsModel,
    spec0: IccbfSpec,
    ensemble: Optional[EnsembleModel],
    goal,
    x0,
    duration: float,
    config: AdaptationConfig,
    gains: Sequence[float],
    extra_specs: Sequence[IccbfSpec] = (),
    predictor: Optional[Callable] = None,
) -> tuple[Trajectory, AdaptationLog]:
    """Run the adaptation loop for ``duration`` seconds.

    ``ensemble=None`` (and no explicit ``predictor``) selects oracle mode.

    Raises:
        OutOfSetError: ``x0`` is outside C*(spec0.params), or spec0.params
            fails validation from ``x0``.
    """
    if spec0.model is not model:
        raise ValueError("spec0 must be built on the given model")
    goal = np.asarray(goal, dtype=float)
    x = np.asarray(x0, dtype=float).reshape(-1)
    margin0 = spec0.evaluate(x).inner_margin
    if margin0 < 0:
        raise OutOfSetError(f"x0 outside the inner safe set of the initial gains: inner margin {margin0:.6g} < 0")
    rep0 = confirm(spec0, spec0.params, x, goal, gains, config, extra_specs)
    if not rep0.validated:
        raise OutOfSetError(
            "initial gains are not locally validated from x0: "
            f"min feasibility margin {rep0.min_feasibility_margin:.6g}, min inner margin {rep0.min_inner_margin:.6g}"
        )
    if predictor is None:
        predictor = EnsemblePredictor(ensemble) if ensemble is not None else OraclePredictor(spec0, gains, config, extra_specs)
    oracle = predictor if isinstance(predictor, OraclePredictor) else None

    def confirm_cached(params, state):
        if oracle is not None:
            return oracle.report(state, goal, params)
        return confirm(spec0, params, state, goal, gains, config, extra_specs)

    dt = config.dt
    n_steps = int(round(duration / dt))
    current = spec0.params
    spec = spec0
    policy = FilteredPolicy(spec, goal, gains, extra_specs)
    alog = AdaptationLog()
    states, inputs, stacks, feas, modified, params_hist = [x], [], [], [], [], []
    event_index = 0

    for k in range(n_steps):
        t = k * dt
        event_flag = None
        if k % config.period_steps == 0:
            event = _adaptation_event(
                spec0, current, x, goal, t, event_index, config, predictor, confirm_cached, rep0 if k == 0 else None
            )
            alog.events.append(event)
            event_flag = event["source"]
            new = ClassKParams(tuple(event["chosen"]))
            if new != current:
                current = new
                spec = spec0.with_params(current)
                policy = FilteredPolicy(spec, goal, gains, extra_specs)
            event_index += 1

        ev = spec.evaluate(x)
        margin = ev.feasibility
        res = policy.filter(x)
        alog.steps.append(
            {
                "t": t,
                "state": x.tolist(),
                "input": res.input.tolist(),
                "stack": ev.stack.tolist(),
                "feasibility_margin": margin,
                "inner_margin": ev.inner_margin,
                "params": list(current.coeffs),
                "filter_active": bool(res.modified),
                "slack": res.slack_used,
                "event": event_flag,
            }
        )
        stacks.append(ev.stack)
        feas.append(margin)
        modified.append(res.modified)
        params_hist.append(current.as_array())
        inputs.append(res.input)
        x = step(model, x, res.input, dt)
        states.append(x)

    stacks.append(spec.evaluate(x).stack)
    params_hist.append(current.as_array())
    traj = Trajectory(
        times=np.arange(n_steps + 1) * dt,
        states=np.array(states),
        inputs=np.array(inputs).reshape(n_steps, model.m),
        stacks=np.array(stacks),
        feasibility=np.array(feas),
        modified=np.array(modified, dtype=bool),
        params=np.array(params_hist),
    )
    return traj, alog


def _adaptation_event(spec0, current, x, goal, t, index, config, predictor, confirm_cached, initial_report):
    candidates = propose_candidates(current, config, index)
    # adoptable only if the current state already lies in the candidate's inner safe set
    admissible = []
    for c in candidates:
        try:
            if spec0.with_params(c).evaluate(x).inner_margin >= 0:
                admissible.append(c)
        except CbfAdaptError:
            pass
    preds = predictor(x, goal, admissible)
    decisions = gate_decisions(preds, config)
    accepted = [i for i, (e, s) in enumerate(decisions) if e and s]

    chosen, report, source, frozen, fallback = None, None, None, False, False
    if accepted:
        sel = select_parameter([admissible[i] for i in accepted], [preds[i] for i in accepted], current)
        if not config.confirm:
            chosen, source = sel, "predictor"
        else:
            rep = initial_report if (initial_report is not None and sel == current) else confirm_cached(sel, x)
            if rep.validated:
                chosen, report, source = sel, rep, "gated"
    if chosen is None:
        fallback = True
        rep = initial_report if initial_report is not None else confirm_cached(current, x)
        report = rep
        chosen = current
        if rep.validated:
            source = "fallback_current"
        else:
            source, frozen = "frozen", True
            log.warning("t=%.3f: no validated gains; freezing %s", t, current.coeffs)

    return {
        "t": t,
        "index": index,
        "candidates": [list(c.coeffs) for c in admissible],
        "candidates_proposed": len(candidates),
        "accepted": len(accepted),
        "gate": [{"epistemic_ok": e, "safety_ok": s} for e, s in decisions],
        "chosen": list(chosen.coeffs),
        "source": source,
        "fallback": fallback,
        "frozen": frozen,
        "validation": report.to_dict() if report is not None else None,
    }
