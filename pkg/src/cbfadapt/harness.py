"""Scenario configs and the batch stages behind the ``cbfadapt`` command.

Config files are TOML::

    [scenario]            model, x0, goal, gains, duration, dt, seed,
                          reach_target, reach_tolerance, model_options
    [barrier]             name + constants, degree, params
    [[extra_barriers]]    optional fixed-gain barriers filtered before the main one
    [adaptation]          horizon, period, candidates, spread,
                          epistemic_threshold, beta, eps, confirm
    [data]                rows, state_low/high, goal_low/high, param_low/high
    [train]               epochs, batch, learning_rate, momentum, members, hidden
    [output]              dir

Each stage returns a process exit code: 0 success, 1 runtime failure,
2 invalid config or missing input.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import penn
from .adaptation import AdaptationConfig, adapt_run
from .barrier import (
    CandidateBarrier,
    ClassKParams,
    DiskObstacle,
    floor_barrier,
    lower_bound_barrier,
    upper_bound_barrier,
    wall_barrier,
)
from .dynamics import MODELS, DynamicsModel, make_model
from .errors import CbfAdaptError, InvalidParameterError
from .iccbf import IccbfSpec
from .simulation import Trajectory, simulate, time_to_reach
from .validator import generate_dataset, load_dataset, save_dataset, validate_params

log = logging.getLogger(__name__)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(CbfAdaptError, ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


class MissingInputError(CbfAdaptError, FileNotFoundError):
    pass


def build_barrier(section: dict, model: DynamicsModel, where: str = "barrier") -> CandidateBarrier:
    name = section.get("name")
    n = model.n
    try:
        if name == "wall":
            return wall_barrier(float(section["x_max"]), int(section.get("index", 0)), n)
        if name == "altitude_floor":
            return floor_barrier(float(section["z_min"]), int(section.get("index", 1)), n)
        if name == "upper_bound":
            return upper_bound_barrier(float(section["bound"]), int(section["index"]), n)
        if name == "lower_bound":
            return lower_bound_barrier(float(section["bound"]), int(section["index"]), n)
        if name == "disk":
            return DiskObstacle(section["center"], float(section["radius"]), section.get("indices", (0, 1)), n)
    except KeyError as exc:
        raise ConfigError(f"{where}.{exc.args[0]}", "required constant is missing") from None
    raise ConfigError(
        f"{where}.name", f"unknown barrier {name!r}; choose from wall, altitude_floor, upper_bound, lower_bound, disk"
    )


@dataclass
class ScenarioConfig:
    model: DynamicsModel
    spec: IccbfSpec
    extra_specs: tuple
    x0: np.ndarray
    goal: np.ndarray
    gains: tuple
    duration: float
    dt: float
    seed: int
    reach_target: np.ndarray
    reach_tolerance: float
    adaptation: AdaptationConfig
    data: dict
    train: dict
    out_dir: Path
    raw: dict = field(default_factory=dict)


def _vector(section: dict, key: str, length: int, where: str, default=None) -> np.ndarray:
    if key not in section:
        if default is not None:
            return np.asarray(default, dtype=float)
        raise ConfigError(f"{where}.{key}", "required field is missing")
    try:
        v = np.asarray(section[key], dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}", "expected a list of numbers") from None
    if v.size != length:
        raise ConfigError(f"{where}.{key}", f"expected {length} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{where}.{key}", "entries must be finite")
    return v


def _spec_from(section: dict, model: DynamicsModel, where: str) -> IccbfSpec:
    barrier = build_barrier(section, model, where)
    params = section.get("params")
    if params is None:
        raise ConfigError(f"{where}.params", "required field is missing")
    try:
        return IccbfSpec(model, barrier, ClassKParams(tuple(params)), section.get("degree"))
    except InvalidParameterError as exc:
        raise ConfigError(f"{where}.params", f"{exc} (class-K gains must be strictly positive)") from None


def parse_config(doc: dict, seed_override: Optional[int] = None, out_override=None) -> ScenarioConfig:
    scen = doc.get("scenario")
    if not isinstance(scen, dict):
        raise ConfigError("scenario", "missing [scenario] section")
    name = scen.get("model")
    if name not in MODELS:
        raise ConfigError("scenario.model", f"unknown model {name!r}; choose from {sorted(MODELS)}")
    model = make_model(name, **scen.get("model_options", {}))
    if "barrier" not in doc:
        raise ConfigError("barrier", "missing [barrier] section")
    spec = _spec_from(doc["barrier"], model, "barrier")
    extra = tuple(_spec_from(s, model, f"extra_barriers[{i}]") for i, s in enumerate(doc.get("extra_barriers", [])))

    if "seed" not in scen and seed_override is None:
        raise ConfigError("scenario.seed", "a seed is required")
    seed = int(seed_override if seed_override is not None else scen["seed"])
    x0 = _vector(scen, "x0", model.n, "scenario")
    goal = _vector(scen, "goal", model.n, "scenario")
    gains = tuple(float(g) for g in scen.get("gains", ()))
    if not gains or any(g <= 0 for g in gains):
        raise ConfigError("scenario.gains", "PD gains must be a non-empty list of positive numbers")
    dt = float(scen.get("dt", 0.01))
    duration = float(scen.get("duration", 10.0))
    if not (dt > 0 and duration > 0):
        raise ConfigError("scenario.dt", "dt and duration must be positive")

    ad = dict(doc.get("adaptation", {}))
    ad.setdefault("dt", dt)
    ad["seed"] = seed
    try:
        adaptation = AdaptationConfig(**ad)
    except TypeError as exc:
        raise ConfigError("adaptation", str(exc)) from None
    except InvalidParameterError as exc:
        raise ConfigError("adaptation", str(exc)) from None

    out = out_override or doc.get("output", {}).get("dir", "out")
    return ScenarioConfig(
        model=model,
        spec=spec,
        extra_specs=extra,
        x0=x0,
        goal=goal,
        gains=gains,
        duration=duration,
        dt=dt,
        seed=seed,
        reach_target=_vector(scen, "reach_target", model.n, "scenario", default=goal),
        reach_tolerance=float(scen.get("reach_tolerance", 0.1)),
        adaptation=adaptation,
        data=dict(doc.get("data", {})),
        train=dict(doc.get("train", {})),
        out_dir=Path(out),
        raw=doc,
    )


def load_config(path, seed_override=None, out_override=None) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(str(path))
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"TOML parse error: {exc}") from None
    return parse_config(doc, seed_override, out_override)


def _fmt(v) -> str:
    return repr(float(v))


def write_trace(path: Path, traj: Trajectory, events: Optional[dict] = None) -> None:
    """One row per input time: t, state, input, b-stack, margins, gains, flags."""
    n, m, r = traj.states.shape[1], traj.inputs.shape[1], traj.stacks.shape[1]
    header = (
        ["t"]
        + [f"x{i}" for i in range(n)]
        + [f"u{j}" for j in range(m)]
        + [f"b{i}" for i in range(r)]
        + ["feasibility_margin", "inner_margin"]
        + [f"k{i + 1}" for i in range(r)]
        + ["filter_active", "event"]
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    params = traj.params if traj.params is not None else np.full((len(traj.times), r), np.nan)
    for k in range(traj.inputs.shape[0]):
        row = [_fmt(traj.times[k])]
        row += [_fmt(v) for v in traj.states[k]]
        row += [_fmt(v) for v in traj.inputs[k]]
        row += [_fmt(v) for v in traj.stacks[k]]
        row += [_fmt(traj.feasibility[k]), _fmt(np.min(traj.stacks[k]))]
        row += [_fmt(v) for v in params[k]]
        row += [int(traj.modified[k]), (events or {}).get(k, "")]
        w.writerow(row)
    path.write_text(buf.getvalue())


def _summary(cfg: ScenarioConfig, traj: Trajectory, **extra) -> dict:
    ttg = time_to_reach(cfg.model, traj, cfg.reach_target, cfg.reach_tolerance)
    return {
        "min_b0": traj.min_b0,
        "violations": int(np.sum(traj.stacks[:, 0] < -cfg.adaptation.eps)),
        "time_to_goal": ttg,
        "filter_active_fraction": traj.filter_active_fraction,
        "final_state": traj.states[-1].tolist(),
        "seed": cfg.seed,
        **extra,
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_simulate(cfg: ScenarioConfig) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    traj = simulate(cfg.spec, cfg.goal, cfg.x0, cfg.duration, cfg.gains, cfg.dt, cfg.extra_specs)
    write_trace(cfg.out_dir / "trace.csv", traj)
    _write_json(cfg.out_dir / "summary.json", _summary(cfg, traj, params=list(cfg.spec.params.coeffs)))
    return EXIT_OK


def _samplers(cfg: ScenarioConfig):
    d = cfg.data
    n, r = cfg.model.n, cfg.spec.degree
    s_lo = _vector(d, "state_low", n, "data", default=cfg.x0)
    s_hi = _vector(d, "state_high", n, "data", default=cfg.x0)
    g_lo = _vector(d, "goal_low", n, "data", default=cfg.goal)
    g_hi = _vector(d, "goal_high", n, "data", default=cfg.goal)
    p_lo = _vector(d, "param_low", r, "data", default=np.full(r, 0.2))
    p_hi = _vector(d, "param_high", r, "data", default=np.full(r, 5.0))
    if np.any(p_lo <= 0) or np.any(p_hi < p_lo):
        raise ConfigError("data.param_low", "parameter range must be positive with low <= high")

    def scenario_sampler(rng):
        return rng.uniform(s_lo, s_hi), rng.uniform(g_lo, g_hi)

    def param_sampler(rng):
        return ClassKParams(tuple(np.exp(rng.uniform(np.log(p_lo), np.log(p_hi)))))

    return scenario_sampler, param_sampler


def dataset_path(cfg: ScenarioConfig) -> Path:
    return Path(cfg.data.get("path", cfg.out_dir / "dataset.csv"))


def model_path(cfg: ScenarioConfig) -> Path:
    return Path(cfg.train.get("model_path", cfg.out_dir / "model.json"))


def run_generate_data(cfg: ScenarioConfig) -> int:
    scenario_sampler, param_sampler = _samplers(cfg)
    ds = generate_dataset(
        cfg.spec,
        scenario_sampler,
        param_sampler,
        int(cfg.data.get("rows", 1000)),
        cfg.adaptation.horizon,
        cfg.dt,
        cfg.adaptation.eps,
        seed=cfg.seed,
        gains=cfg.gains,
    )
    save_dataset(ds, dataset_path(cfg))
    return EXIT_OK


def run_train(cfg: ScenarioConfig) -> int:
    path = dataset_path(cfg)
    if not path.exists():
        raise MissingInputError(str(path))
    ds = load_dataset(path)
    fields = {k: v for k, v in cfg.train.items() if k in penn.TrainConfig.__dataclass_fields__}
    if "hidden" in fields:
        fields["hidden"] = tuple(int(h) for h in fields["hidden"])
    tc = penn.TrainConfig(**{**fields, "seed": cfg.seed})
    model = penn.train(ds, tc)
    penn.save(model, model_path(cfg))
    return EXIT_OK


def run_adapt(cfg: ScenarioConfig, oracle: bool = False) -> int:
    ensemble = None
    if not oracle:
        path = model_path(cfg)
        if not path.exists():
            raise MissingInputError(str(path))
        ensemble = penn.load(path)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    traj, alog = adapt_run(
        cfg.model, cfg.spec, ensemble, cfg.goal, cfg.x0, cfg.duration, cfg.adaptation, cfg.gains, cfg.extra_specs
    )
    alog.to_jsonl(cfg.out_dir / "adaptation.jsonl")
    period = cfg.adaptation.period_steps
    events = {i * period: e["source"] for i, e in enumerate(alog.events)}
    write_trace(cfg.out_dir / "adapt_trace.csv", traj, events)
    _write_json(
        cfg.out_dir / "adapt_summary.json",
        _summary(
            cfg,
            traj,
            mode="oracle" if oracle else "ensemble",
            parameter_changes=alog.parameter_changes(),
            frozen_events=alog.frozen_events(),
            events=len(alog.events),
            final_params=list(alog.events[-1]["chosen"]) if alog.events else None,
        ),
    )
    return EXIT_OK


def run_validate_param(cfg: ScenarioConfig, state=None, params=None, stream=None) -> int:
    x = cfg.x0 if state is None else np.asarray(state, dtype=float)
    if x.size != cfg.model.n:
        raise ConfigError("--state", f"expected {cfg.model.n} entries, got {x.size}")
    try:
        p = cfg.spec.params if params is None else ClassKParams(tuple(params))
    except InvalidParameterError as exc:
        raise ConfigError("--params", str(exc)) from None
    rep = validate_params(
        cfg.spec, p, x, cfg.goal, cfg.gains, cfg.adaptation.horizon, cfg.dt, cfg.adaptation.eps
    )
    out = {"state": x.tolist(), "params": list(p.coeffs), **rep.to_dict()}
    (stream or sys.stdout).write(json.dumps(out, sort_keys=True) + "\n")
    return EXIT_OK
