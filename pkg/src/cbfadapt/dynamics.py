"""Control-affine system models  xdot = f(x) + g(x) u  with box input limits.

Every model exposes ``drift(x)`` (f), ``actuation(x)`` (g, an n x m matrix) and
an :class:`InputBox`. Simulation uses a fixed-step classical Runge-Kutta step
with the input held constant over the step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, IntegrationError

DEFAULT_DT = 0.01


@dataclass(frozen=True)
class InputBox:
    """Componentwise bounds ``lower <= u <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise DimensionError(f"box bounds differ in length: {lower.size} vs {upper.size}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("input box must be finite")
        if np.any(lower > upper):
            raise ValueError("input box requires lower <= upper componentwise")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def m(self) -> int:
        return self.lower.size

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return bool((u >= self.lower - tol).all() and (u <= self.upper + tol).all())

    def vertices(self) -> np.ndarray:
        """All 2^m corners, one per row."""
        if self.m == 0:
            return np.zeros((1, 0))
        grids = np.meshgrid(*[(lo, hi) for lo, hi in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


def clamp_input(box: InputBox, u) -> np.ndarray:
    """Project ``u`` onto the box componentwise."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != box.m:
        raise DimensionError(f"input has length {u.size}, box expects {box.m}")
    return np.minimum(np.maximum(u, box.lower), box.upper)


class DynamicsModel:
    """Base class for control-affine models.

    Subclasses set ``n``, ``m``, ``input_box`` and ``name`` and implement
    :meth:`drift` and :meth:`actuation`. ``goal_indices`` picks the state
    entries used to measure distance to a goal.
    """

    n: int
    m: int
    input_box: InputBox
    name: str = "model"
    goal_indices: tuple = (0,)

    def drift(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def actuation(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def nominal(self, goal: np.ndarray, x: np.ndarray, gains: Sequence[float]) -> np.ndarray:
        """Unclamped tracking input toward ``goal``."""
        raise NotImplementedError(f"{self.name} has no nominal tracking law")

    def goal_distance(self, x: np.ndarray, goal: np.ndarray) -> float:
        idx = list(self.goal_indices)
        return float(np.linalg.norm(np.asarray(x)[idx] - np.asarray(goal)[idx]))

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, m={self.m})"


def _check_state(model: DynamicsModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.n:
        raise DimensionError(f"{model.name}: state has length {x.size}, expected {model.n}")
    return x


def eval_drift(model: DynamicsModel, x) -> np.ndarray:
    return model.drift(_check_state(model, x))


def eval_actuation(model: DynamicsModel, x) -> np.ndarray:
    return model.actuation(_check_state(model, x)).reshape(model.n, model.m)


def step(model: DynamicsModel, x, u, dt: float = DEFAULT_DT) -> np.ndarray:
    """One RK4 step of the closed loop with ``u`` held constant over ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = _check_state(model, x)
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != model.m:
        raise DimensionError(f"{model.name}: input has length {u.size}, expected {model.m}")

    def rhs(s):
        return model.drift(s) + model.actuation(s) @ u

    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        raise IntegrationError(f"{model.name}: non-finite state after step from {x} with u={u}")
    return out


class DoubleIntegrator(DynamicsModel):
    """Point mass on a line: state (p, v), input acceleration."""

    name = "double_integrator"
    n = 2
    m = 1
    goal_indices = (0,)

    def __init__(self, u_max: float = 1.0):
        self.input_box = InputBox([-u_max], [u_max])
        self._g = np.array([[0.0], [1.0]])
        self._g.flags.writeable = False

    def drift(self, x):
        return np.array([x[1], 0.0])

    def actuation(self, x):
        return self._g

    def nominal(self, goal, x, gains):
        kp, kd = gains
        return np.array([kp * (goal[0] - x[0]) + kd * (goal[1] - x[1])])


class Unicycle(DynamicsModel):
    """Kinematic unicycle: state (px, py, heading), inputs (speed, turn rate)."""

    name = "unicycle"
    n = 3
    m = 2
    goal_indices = (0, 1)

    def __init__(self, v_max: float = 1.0, w_max: float = 2.0):
        self.input_box = InputBox([0.0, -w_max], [v_max, w_max])

    def drift(self, x):
        return np.zeros(3)

    def actuation(self, x):
        c, s = np.cos(x[2]), np.sin(x[2])
        return np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])

    def nominal(self, goal, x, gains):
        kv, kw = gains
        dx, dy = goal[0] - x[0], goal[1] - x[1]
        heading_err = np.arctan2(dy, dx) - x[2]
        heading_err = (heading_err + np.pi) % (2 * np.pi) - np.pi
        return np.array([kv * np.hypot(dx, dy) * np.cos(heading_err), kw * heading_err])


@dataclass(frozen=True)
class QuadplaneParams:
    mass: float = 5.0  # kg
    inertia: float = 0.5  # kg m^2
    gravity: float = 9.81
    drag_x: float = 0.05  # N s^2/m^2
    drag_z: float = 0.3
    lift_0: float = 2.0  # N per (m/s) of forward speed
    lift_pitch: float = 10.0  # N per (m/s) per rad
    pitch_damping: float = 1.0  # 1/s
    max_forward_thrust: float = 30.0  # N
    max_moment: float = 5.0  # N m
    thrust_to_weight: float = 2.0


class PlanarQuadplane(DynamicsModel):
    """Longitudinal VTOL quadplane surrogate.

    State ``(x, z, vx, vz, theta, omega)``; inputs ``(T_vertical, T_forward,
    M_pitch)``. Rotor and propeller thrust act along the inertial axes, so
    g(x) is constant. Aerodynamics: quadratic drag ``-c v|v|`` per axis and
    a wing lift ``(lift_0 + lift_pitch * theta) * vx`` on the vertical axis.
    The lift law is meant for ``vx >= 0``.
    """

    name = "quadplane"
    n = 6
    m = 3
    # transition goal: altitude and forward speed
    goal_indices = (1, 2)

    def __init__(self, params: QuadplaneParams | None = None):
        self.params = p = params or QuadplaneParams()
        self.input_box = InputBox(
            [0.0, 0.0, -p.max_moment],
            [p.thrust_to_weight * p.mass * p.gravity, p.max_forward_thrust, p.max_moment],
        )
        g = np.zeros((6, 3))
        g[2, 1] = 1.0 / p.mass
        g[3, 0] = 1.0 / p.mass
        g[5, 2] = 1.0 / p.inertia
        g.flags.writeable = False
        self._g = g

    def lift(self, x) -> float:
        p = self.params
        return (p.lift_0 + p.lift_pitch * x[4]) * x[2]

    def drift(self, x):
        p = self.params
        vx, vz, omega = x[2], x[3], x[5]
        ax = -p.drag_x * vx * abs(vx) / p.mass
        az = (self.lift(x) - p.drag_z * vz * abs(vz)) / p.mass - p.gravity
        return np.array([vx, vz, ax, az, omega, -p.pitch_damping * omega])

    def actuation(self, x):
        return self._g

    def trim_thrust(self, x) -> float:
        """Vertical thrust that cancels gravity, lift and vertical drag at ``x``."""
        p = self.params
        return p.mass * p.gravity - self.lift(x) + p.drag_z * x[3] * abs(x[3])

    def nominal(self, goal, x, gains):
        """Velocity tracking forward, PD on altitude and pitch.

        ``gains = (k_vx, kp_z, kd_z, kp_theta, kd_theta)``.
        """
        p = self.params
        k_vx, kp_z, kd_z, kp_th, kd_th = gains
        t_fwd = p.mass * k_vx * (goal[2] - x[2]) + p.drag_x * x[2] * abs(x[2])
        t_vert = self.trim_thrust(x) + p.mass * (kp_z * (goal[1] - x[1]) + kd_z * (goal[3] - x[3]))
        moment = p.inertia * (kp_th * (goal[4] - x[4]) - kd_th * x[5] + p.pitch_damping * x[5])
        return np.array([t_vert, t_fwd, moment])


class ControlAffineSystem(DynamicsModel):
    """Model assembled from user callables ``f(x)`` and ``g(x)``."""

    def __init__(
        self,
        n: int,
        m: int,
        drift_fn: Callable[[np.ndarray], np.ndarray],
        actuation_fn: Callable[[np.ndarray], np.ndarray],
        input_box: InputBox,
        name: str = "custom",
        goal_indices: Sequence[int] = (0,),
    ):
        if input_box.m != m:
            raise DimensionError(f"box has {input_box.m} inputs, model declares {m}")
        self.n, self.m = n, m
        self.input_box = input_box
        self.name = name
        self.goal_indices = tuple(goal_indices)
        self._f, self._g = drift_fn, actuation_fn

    def drift(self, x):
        return np.asarray(self._f(x), dtype=float).reshape(self.n)

    def actuation(self, x):
        return np.asarray(self._g(x), dtype=float).reshape(self.n, self.m)


MODELS = {
    "double_integrator": DoubleIntegrator,
    "unicycle": Unicycle,
    "quadplane": PlanarQuadplane,
}


def make_model(name: str, **kwargs) -> DynamicsModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**kwargs)
