"""Quadrotor translational dynamics with drag and wall-force compensation.

The model takes collective thrust and body angular velocity as the input;
the rotational moment equation is deliberately absent (a low-level loop is
assumed to track angular velocity). Discretization is second order in
position and first order in rotation and velocity, with the acceleration
evaluated at the step's start state, which makes the dynamics-factor
residual of :mod:`wallmpc.factors` exactly zero at a propagated state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .manifold import POS, ROT, VEL, State
from .suction import SuctionParams, suction_force_world

GRAVITY = 9.81


@dataclass
class VehicleParams:
    """Mass, diagonal drag matrix (N s/m) and gravity magnitude."""

    mass: float = 1.0
    drag: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1, 0.15]))
    gravity: float = GRAVITY

    def __post_init__(self):
        self.drag = np.asarray(self.drag, dtype=float).reshape(3)
        self.validate()

    def validate(self):
        if not self.mass > 0.0:
            raise ValueError("mass must be > 0")
        if np.any(self.drag < 0.0):
            raise ValueError("drag entries must be >= 0")
        if not self.gravity > 0.0:
            raise ValueError("gravity must be > 0")

    def hover_thrust(self) -> float:
        return self.mass * self.gravity


@dataclass
class ControlInput:
    """Collective thrust along body z plus body angular velocity."""

    thrust: float = 0.0
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.thrust = float(self.thrust)
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)

    @classmethod
    def hover(cls, params: VehicleParams) -> "ControlInput":
        return cls(params.hover_thrust(), np.zeros(3))

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float).reshape(4)
        return cls(u[0], u[1:4])

    def as_array(self) -> np.ndarray:
        out = np.empty(4)
        out[0] = self.thrust
        out[1:4] = self.omega
        return out


def drag_force_body(x: State, params: VehicleParams) -> np.ndarray:
    """Body-frame drag D @ R^T @ v (sign convention follows the model)."""
    return params.drag * (x.R.T @ x.v)


def state_derivative(x: State, u: ControlInput, F_s, params: VehicleParams) -> np.ndarray:
    """Tangent rate (p_dot, body rotation rate, v_dot) as a (9,) array."""
    F_s = np.asarray(F_s, dtype=float).reshape(3)
    out = np.empty(9)
    out[POS] = x.v
    out[ROT] = u.omega
    out[VEL] = kernels.accel_world(
        x.R, x.v, u.thrust, F_s, params.mass, params.drag, params.gravity
    )
    return out


def propagate(
    x: State,
    u: ControlInput,
    dt: float,
    planes=(),
    suction: SuctionParams | None = None,
    params: VehicleParams | None = None,
) -> State:
    """One discrete step with the wall force evaluated at the start state."""
    if params is None:
        params = VehicleParams()
    if not dt > 0.0:
        raise ValueError("dt must be > 0")
    if suction is not None and len(tuple(planes)) > 0:
        F_s = suction_force_world(x, planes, suction)
    else:
        F_s = np.zeros(3)
    p, R, v = kernels.propagate_step(
        x.p, x.R, x.v, u.thrust, u.omega, F_s, dt, params.mass, params.drag, params.gravity
    )
    return State(p, R, v)
