"""Receding-horizon controllers.

Each tick assembles the horizon graph (dynamics, reference, rate and limit
factors over N steps with the current state fixed), solves it with the
shared damped least-squares solver and applies the first input. The
wall-compensated variant evaluates the wall force inside the dynamics
factors; the baseline is the identical graph with the force forced to
zero. A cascaded PID (position PI -> velocity P -> attitude P) serves as
the non-predictive baseline.

A controller instance is single threaded; distinct instances share
nothing and may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlInput, VehicleParams
from .factors import (
    DynamicsFactor,
    LimitFactor,
    NoiseParams,
    RateFactor,
    ReferenceFactor,
    _sqrt_information,
    dynamics_weight,
)
from .manifold import State
from .solver import LmOptions, Problem, SingularSystemError, SolveReport, lm_solve
from .suction import stack_planes
from . import kernels


def _default_Q() -> np.ndarray:
    # position tracking dominates; the level-attitude reference is a soft
    # regularizer only, so holding a compensating tilt stays cheap. The
    # position weight also sets the controller's static stiffness against
    # unmodeled wall pull, which the baseline comparison relies on.
    return np.diag([1e4, 1e4, 1e4, 1.0, 1.0, 1.0, 10.0, 10.0, 10.0])


def _default_G() -> np.ndarray:
    return np.diag([1.0, 10.0, 10.0, 10.0])


@dataclass
class MpcConfig:
    """Horizon, step, weights, input box and solver options of the MPC."""

    horizon: int = 20
    dt: float = 0.02
    Q: np.ndarray = field(default_factory=_default_Q)
    Q_N: np.ndarray | None = None  # defaults to 2 Q
    G: np.ndarray = field(default_factory=_default_G)
    Q_lim: np.ndarray = field(default_factory=lambda: 1e4 * np.eye(4))
    u_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -3.0, -3.0, -3.0]))
    u_max: np.ndarray | None = None  # defaults to (2 m g, 3, 3, 3)
    noise: NoiseParams = field(default_factory=NoiseParams)
    suction_enabled: bool = False
    # lambda0 well below the generic default: the stiff dynamics weights
    # make diagonal damping eat the step otherwise, and warm-started ticks
    # sit close enough to the optimum for plain Gauss-Newton steps
    lm: LmOptions = field(default_factory=lambda: LmOptions(max_iter=5, lambda0=1e-10))

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        if self.Q_N is None:
            self.Q_N = 2.0 * self.Q
        self.Q_N = np.asarray(self.Q_N, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        self.Q_lim = np.asarray(self.Q_lim, dtype=float)
        self.u_min = np.asarray(self.u_min, dtype=float).reshape(4)
        if self.u_max is not None:
            self.u_max = np.asarray(self.u_max, dtype=float).reshape(4)

    def resolved_u_max(self, vehicle: VehicleParams) -> np.ndarray:
        if self.u_max is not None:
            return self.u_max
        return np.array([2.0 * vehicle.hover_thrust(), 3.0, 3.0, 3.0])

    def validate(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")
        for name, M, strict in (("Q", self.Q, False), ("Q_N", self.Q_N, False),
                                ("G", self.G, True), ("Q_lim", self.Q_lim, True)):
            w = np.linalg.eigvalsh(0.5 * (M + M.T))
            if strict and w.min() <= 0.0:
                raise ValueError(f"{name} must be positive definite")
            if not strict and w.min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        if self.noise.sigma_thrust <= 0.0 or self.noise.sigma_omega <= 0.0:
            raise ValueError("MPC needs strictly positive command noise sigmas")


@dataclass
class ReferenceTrajectory:
    """Reference states and inputs sampled on the controller grid."""

    ts: np.ndarray
    ps: np.ndarray
    Rs: np.ndarray
    vs: np.ndarray
    us: np.ndarray

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=float)
        n = self.ts.shape[0]
        self.ps = np.asarray(self.ps, dtype=float).reshape(n, 3)
        self.Rs = np.asarray(self.Rs, dtype=float).reshape(n, 3, 3)
        self.vs = np.asarray(self.vs, dtype=float).reshape(n, 3)
        self.us = np.asarray(self.us, dtype=float).reshape(n, 4)
        if n >= 2 and np.any(np.diff(self.ts) <= 0.0):
            raise ValueError("reference timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.ts.shape[0]

    def state(self, k: int) -> State:
        return State(self.ps[k], self.Rs[k], self.vs[k])

    def window(self, start: int, length: int) -> "ReferenceTrajectory":
        if start < 0 or start + length > len(self):
            raise ValueError("reference window out of range")
        sl = slice(start, start + length)
        return ReferenceTrajectory(self.ts[sl], self.ps[sl], self.Rs[sl],
                                   self.vs[sl], self.us[sl])


@dataclass
class MpcPlan:
    """Optimized horizon used to warm start the next tick."""

    states: list  # N+1 State, index 0 is the tick's initial state
    inputs: np.ndarray  # (N, 4)

    def shifted(self) -> "MpcPlan":
        states = list(self.states[1:]) + [self.states[-1]]
        inputs = np.vstack([self.inputs[1:], self.inputs[-1:]])
        return MpcPlan(states, inputs)


@dataclass
class MpcStepResult:
    u0: ControlInput
    plan: MpcPlan
    report: SolveReport
    degraded: bool = False


class _MpcWeights:
    """Square-root factor weights plus static plane arrays, shared per tick."""

    def __init__(self, cfg: MpcConfig, vehicle: VehicleParams, planes, suction):
        self.W_dyn = dynamics_weight(cfg.dt, cfg.noise, vehicle)
        self.sqrt_W_dyn = _sqrt_information(self.W_dyn)
        self.sqrt_Q = _sqrt_information(cfg.Q)
        self.sqrt_Q_N = _sqrt_information(cfg.Q_N)
        self.sqrt_G = _sqrt_information(cfg.G)
        self.sqrt_Q_lim = _sqrt_information(cfg.Q_lim)
        self.u_max = cfg.resolved_u_max(vehicle)
        if cfg.suction_enabled and suction is not None:
            self.Rwps, self.twps = stack_planes(planes)
            self.suction_on = self.Rwps.shape[0] > 0
            self.offsets = suction.rotor_offsets
            self.k_s = suction.k_s
            self.d_thr = suction.d_thr
        else:
            self.Rwps, self.twps = stack_planes(())
            self.suction_on = False
            self.offsets = np.zeros((4, 3))
            self.k_s = 0.0
            self.d_thr = 1.0


class _FusedMpc:
    """Compiled-evaluator hook for the horizon graph (see solver.Problem)."""

    def __init__(self, weights: _MpcWeights, ref: ReferenceTrajectory,
                 cfg: MpcConfig, vehicle: VehicleParams):
        self.w = weights
        self.cfg = cfg
        self.vehicle = vehicle
        N = cfg.horizon
        self.N = N
        self.ref_p = ref.ps[: N + 1].copy()
        self.ref_R = ref.Rs[: N + 1].copy()
        self.ref_v = ref.vs[: N + 1].copy()

    def _pack(self, values):
        N = self.N
        ps = np.empty((N + 1, 3))
        Rs = np.empty((N + 1, 3, 3))
        vs = np.empty((N + 1, 3))
        us = np.empty((N, 4))
        for k in range(N + 1):
            s = values[2 * k]
            ps[k] = s.p
            Rs[k] = s.R
            vs[k] = s.v
        for k in range(N):
            us[k] = values[2 * k + 1]
        return ps, Rs, vs, us

    def _args(self, values):
        w = self.w
        cfg = self.cfg
        ps, Rs, vs, us = self._pack(values)
        return (ps, Rs, vs, us, self.ref_p, self.ref_R, self.ref_v,
                w.sqrt_W_dyn, w.sqrt_Q, w.sqrt_Q_N, w.sqrt_G, w.sqrt_Q_lim,
                cfg.u_min, w.u_max, cfg.dt, self.vehicle.mass,
                self.vehicle.drag, self.vehicle.gravity,
                w.Rwps, w.twps, w.offsets, w.k_s, w.d_thr, w.suction_on)

    def linearize(self, values):
        return kernels.mpc_fused_linearize(*self._args(values))

    def cost(self, values):
        return kernels.mpc_fused_cost(*self._args(values))


def build_mpc_graph(x_init: State, ref: ReferenceTrajectory, planes,
                    suction, vehicle: VehicleParams, cfg: MpcConfig,
                    weights: _MpcWeights | None = None) -> Problem:
    """Horizon graph: x_0 fixed, variables x_1..x_N and u_0..u_{N-1}.

    Variables are interleaved (x_0, u_0, x_1, u_1, ..., x_N) so the normal
    matrix stays banded. Factors: N dynamics, N-1 stage references plus a
    terminal one, N-1 rate, N limit. The attached fused evaluator lets the
    solver run the linearization in compiled loops; it computes exactly
    the same residuals and Jacobians as the factor objects.
    """
    N = cfg.horizon
    if len(ref) < N + 1:
        raise ValueError(f"reference must cover the horizon: need {N + 1} samples, "
                         f"got {len(ref)}")
    if weights is None:
        weights = _MpcWeights(cfg, vehicle, planes, suction)
    u_max = weights.u_max
    suction_args = dict(planes=planes, suction=suction) if cfg.suction_enabled else {}

    problem = Problem()
    ids_x = [problem.add_state(fixed=True)]
    ids_u = []
    for _ in range(N):
        ids_u.append(problem.add_vector(4))
        ids_x.append(problem.add_state())

    for k in range(N):
        problem.add_factor(DynamicsFactor(
            (ids_x[k], ids_u[k], ids_x[k + 1]), cfg.dt, vehicle, weights.W_dyn,
            sqrt_weight=weights.sqrt_W_dyn, **suction_args))
        problem.add_factor(LimitFactor((ids_u[k],), cfg.u_min, u_max, cfg.Q_lim,
                                       sqrt_weight=weights.sqrt_Q_lim))
        if k >= 1:
            problem.add_factor(ReferenceFactor((ids_x[k],), ref.state(k), cfg.Q,
                                               sqrt_weight=weights.sqrt_Q))
        if k <= N - 2:
            problem.add_factor(RateFactor((ids_u[k], ids_u[k + 1]), cfg.G,
                                          sqrt_weight=weights.sqrt_G))
    problem.add_factor(ReferenceFactor((ids_x[N],), ref.state(N), cfg.Q_N,
                                       sqrt_weight=weights.sqrt_Q_N))
    problem.fused = _FusedMpc(weights, ref, cfg, vehicle)
    return problem


def _rollout(x_init: State, us: np.ndarray, cfg: MpcConfig,
             vehicle: VehicleParams, weights: _MpcWeights) -> list:
    """Propagate the controller's own model under a given input sequence.

    Used to seed the cold start: the resulting chain has exactly zero
    dynamics residuals, so the first solve starts from a feasible plan
    instead of fighting the stiff dynamics weights.
    """
    w = weights
    states = [x_init]
    p, R, v = x_init.p, x_init.R, x_init.v
    for k in range(cfg.horizon):
        if w.suction_on:
            Fs = kernels.suction_force_total(p, R, w.Rwps, w.twps, w.offsets,
                                             w.k_s, w.d_thr)
        else:
            Fs = np.zeros(3)
        p, R, v = kernels.propagate_step(p, R, v, us[k, 0], us[k, 1:4], Fs,
                                         cfg.dt, vehicle.mass, vehicle.drag,
                                         vehicle.gravity)
        states.append(State._wrap(p, R, v))
    return states


def _initial_values(x_init: State, ref: ReferenceTrajectory, cfg: MpcConfig,
                    warm_start: MpcPlan | None, vehicle: VehicleParams,
                    weights: _MpcWeights):
    N = cfg.horizon
    values = [x_init]
    if warm_start is not None:
        for k in range(N):
            values.append(warm_start.inputs[k].copy())
            values.append(warm_start.states[k + 1].copy())
    else:
        us = ref.us[:N].copy()
        states = _rollout(x_init, us, cfg, vehicle, weights)
        for k in range(N):
            values.append(us[k])
            values.append(states[k + 1])
    return values


def mpc_step(x_init: State, ref: ReferenceTrajectory, planes, suction,
             vehicle: VehicleParams, cfg: MpcConfig,
             warm_start: MpcPlan | None = None,
             weights: _MpcWeights | None = None) -> MpcStepResult:
    """Solve one receding-horizon tick and return the first input.

    The returned plan is the optimized sequence; shift it by one step to
    warm start the next tick. On solver failure the shifted warm start's
    first input is returned flagged degraded.
    """
    if weights is None:
        weights = _MpcWeights(cfg, vehicle, planes, suction)
    u_max = weights.u_max
    problem = build_mpc_graph(x_init, ref, planes, suction, vehicle, cfg, weights)
    init_values = _initial_values(x_init, ref, cfg, warm_start, vehicle, weights)
    try:
        values, report = lm_solve(problem, init_values, cfg.lm)
    except SingularSystemError:
        fallback = warm_start.shifted() if warm_start is not None else MpcPlan(
            [init_values[2 * k] for k in range(cfg.horizon + 1)],
            np.vstack([init_values[2 * k + 1] for k in range(cfg.horizon)]),
        )
        u0 = np.clip(fallback.inputs[0], cfg.u_min, u_max)
        report = SolveReport(converged=False, termination="max_iter")
        return MpcStepResult(ControlInput.from_array(u0), fallback, report, degraded=True)

    N = cfg.horizon
    states = [values[0]] + [values[2 * k + 2] for k in range(N)]
    inputs = np.vstack([values[2 * k + 1] for k in range(N)])
    plan = MpcPlan(states, inputs)
    u0 = np.clip(inputs[0], cfg.u_min, u_max)
    return MpcStepResult(ControlInput.from_array(u0), plan, report, degraded=False)


class MpcController:
    """Stateful wrapper that keeps and shifts the warm start between ticks."""

    def __init__(self, cfg: MpcConfig, vehicle: VehicleParams, planes=(), suction=None):
        cfg.validate()
        self.cfg = cfg
        self.vehicle = vehicle
        self.planes = tuple(planes)
        self.suction = suction
        self._plan: MpcPlan | None = None
        self._weights = _MpcWeights(cfg, vehicle, self.planes, suction)

    def reset(self):
        self._plan = None

    def step(self, x: State, ref_window: ReferenceTrajectory) -> MpcStepResult:
        warm = self._plan.shifted() if self._plan is not None else None
        result = mpc_step(x, ref_window, self.planes, self.suction,
                          self.vehicle, self.cfg, warm, self._weights)
        self._plan = result.plan
        return result


@dataclass
class PidConfig:
    """Gains of the cascaded position/velocity/attitude loops."""

    pos_kp: np.ndarray = field(default_factory=lambda: np.full(3, 2.0))
    pos_ki: np.ndarray = field(default_factory=lambda: np.full(3, 0.4))
    pos_kd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel_kp: np.ndarray = field(default_factory=lambda: np.full(3, 4.0))
    att_kp: float = 6.0
    integral_limit: float = 1.0
    u_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -3.0, -3.0, -3.0]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([19.62, 3.0, 3.0, 3.0]))

    def __post_init__(self):
        for name in ("pos_kp", "pos_ki", "pos_kd", "vel_kp"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim == 0:
                v = np.full(3, float(v))
            setattr(self, name, v.reshape(3))
        self.u_min = np.asarray(self.u_min, dtype=float).reshape(4)
        self.u_max = np.asarray(self.u_max, dtype=float).reshape(4)
        if (np.any(self.pos_kp < 0) or np.any(self.pos_ki < 0)
                or np.any(self.pos_kd < 0) or np.any(self.vel_kp < 0)
                or self.att_kp < 0):
            raise ValueError("PID gains must be >= 0")


def pid_step(x: State, x_ref: State, v_ref, pid: PidConfig,
             vehicle: VehicleParams, integral=None, dt: float = 0.02):
    """One cascaded-PID tick; returns (ControlInput, updated integral).

    Position PID produces a velocity setpoint, the velocity loop an
    acceleration demand, which maps to a thrust vector; thrust is its
    projection on the body z axis and the attitude P loop turns the tilt
    error into a body-rate command. Outputs are clamped to the input box.
    """
    v_ref = np.asarray(v_ref, dtype=float).reshape(3)
    if integral is None:
        integral = np.zeros(3)
    e_p = x_ref.p - x.p
    integral = integral + e_p * dt
    lim = pid.integral_limit
    integral = np.clip(integral, -lim, lim)

    v_des = v_ref + pid.pos_kp * e_p + pid.pos_ki * integral + pid.pos_kd * (v_ref - x.v)
    a_des = pid.vel_kp * (v_des - x.v)
    f_world = vehicle.mass * a_des
    f_world[2] += vehicle.mass * vehicle.gravity

    thrust = float(f_world @ x.R[:, 2])
    norm_f = np.linalg.norm(f_world)
    if norm_f < 1e-9:
        z_des = np.array([0.0, 0.0, 1.0])
    else:
        z_des = f_world / norm_f
    # desired attitude with zero yaw
    x_c = np.array([1.0, 0.0, 0.0])
    y_des = np.cross(z_des, x_c)
    ny = np.linalg.norm(y_des)
    if ny < 1e-9:
        y_des = np.array([0.0, 1.0, 0.0])
    else:
        y_des = y_des / ny
    x_des = np.cross(y_des, z_des)
    R_des = np.column_stack((x_des, y_des, z_des))
    omega = pid.att_kp * kernels.so3_log(x.R.T @ R_des)

    u = np.empty(4)
    u[0] = thrust
    u[1:4] = omega
    u = np.clip(u, pid.u_min, pid.u_max)
    return ControlInput.from_array(u), integral


class PidController:
    """Stateful cascaded PID holding the position integrator."""

    def __init__(self, cfg: PidConfig, vehicle: VehicleParams, dt: float):
        self.cfg = cfg
        self.vehicle = vehicle
        self.dt = float(dt)
        self._integral = np.zeros(3)

    def reset(self):
        self._integral = np.zeros(3)

    def step(self, x: State, x_ref: State, v_ref) -> ControlInput:
        u, self._integral = pid_step(x, x_ref, v_ref, self.cfg, self.vehicle,
                                     self._integral, self.dt)
        return u
