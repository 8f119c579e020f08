"""Deterministic closed-loop simulation harness.

The plant integrates the suction-augmented dynamics at a faster substep
rate than the controller tick; the commanded input is perturbed once per
tick by Gaussian actuator noise and held across the substeps. The plant
always feels its own true wall parameters while the controller sees a
separate belief, which makes model-mismatch studies a config edit. Runs
are bitwise reproducible: one seed spawns independent child streams for
thrust noise, rate noise and the logged-acceleration noise channel, so
enabling one source never shifts another's sequence.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .controller import (
    MpcConfig,
    MpcController,
    PidConfig,
    PidController,
    ReferenceTrajectory,
)
from .dynamics import ControlInput, VehicleParams
from .manifold import State
from .suction import PlaneFrame, SuctionParams, stack_planes

CONTROLLER_KINDS = ("pid", "mpc", "scmpc")


class EmptyWindowError(ValueError):
    """No log rows remain after the warmup cut."""


@dataclass
class TrajectorySpec:
    """Geometric reference specification: circle, line or hover.

    Circles live in a world plane ("yz" runs parallel to an x-normal wall,
    "xz" runs toward and away from it). Lines traverse start -> end at
    constant speed and hold the endpoint afterwards.
    """

    kind: str = "hover"
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0
    period: float = 10.0
    plane: str = "yz"
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    end: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    speed: float = 0.5
    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        self.end = np.asarray(self.end, dtype=float).reshape(3)
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if self.kind not in ("circle", "line", "hover"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")

    def validate(self):
        if self.kind == "circle":
            if self.radius <= 0.0 or self.period <= 0.0:
                raise ValueError("circle needs radius > 0 and period > 0")
            if self.plane not in ("yz", "xz", "xy"):
                raise ValueError(f"unknown circle plane {self.plane!r}")
        elif self.kind == "line":
            if self.speed <= 0.0:
                raise ValueError("line needs speed > 0")
            if np.linalg.norm(self.end - self.start) == 0.0:
                raise ValueError("line endpoints coincide")


_CIRCLE_AXES = {
    "yz": (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    "xz": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    "xy": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
}


def _sample_spec(spec: TrajectorySpec, t: np.ndarray):
    n = t.shape[0]
    ps = np.zeros((n, 3))
    vs = np.zeros((n, 3))
    if spec.kind == "hover":
        ps[:] = spec.position
    elif spec.kind == "circle":
        a, b = _CIRCLE_AXES[spec.plane]
        w = 2.0 * np.pi / spec.period
        ang = w * t
        ps[:] = spec.center
        ps += spec.radius * (np.cos(ang)[:, None] * a + np.sin(ang)[:, None] * b)
        vs[:] = spec.radius * w * (-np.sin(ang)[:, None] * a + np.cos(ang)[:, None] * b)
    else:  # line
        d = spec.end - spec.start
        length = np.linalg.norm(d)
        d_unit = d / length
        t_end = length / spec.speed
        s = np.minimum(t, t_end)
        ps[:] = spec.start + (s * spec.speed)[:, None] * d_unit
        moving = t < t_end
        vs[moving] = spec.speed * d_unit
    return ps, vs


def make_trajectory(spec: TrajectorySpec, duration: float, dt: float,
                    horizon: int = 0, hover_thrust: float = 9.81) -> ReferenceTrajectory:
    """Sample a spec on the controller grid, extended past the end of the
    run so the final ticks still see a full horizon. Attitude is level and
    the reference input is hover."""
    spec.validate()
    n = int(round(duration / dt)) + horizon + 2
    ts = np.arange(n) * dt
    ps, vs = _sample_spec(spec, ts)
    Rs = np.tile(np.eye(3), (n, 1, 1))
    us = np.zeros((n, 4))
    us[:, 0] = hover_thrust
    return ReferenceTrajectory(ts, ps, Rs, vs, us)


def apply_actuator_noise(u_cmd: ControlInput, sigma_T: float, sigma_w: float,
                         rng_thrust: np.random.Generator,
                         rng_rates: np.random.Generator | None = None) -> ControlInput:
    """Perturb a command with independent Gaussian draws.

    Draws are always consumed and scaled by sigma, so toggling a sigma to
    zero leaves every stream's sequence unchanged. Pass two generators to
    keep thrust and rate noise on independent streams.
    """
    if sigma_T < 0.0 or sigma_w < 0.0:
        raise ValueError("noise sigmas must be >= 0")
    if rng_rates is None:
        rng_rates = rng_thrust
    thrust = u_cmd.thrust + sigma_T * rng_thrust.standard_normal()
    omega = u_cmd.omega + sigma_w * rng_rates.standard_normal(3)
    return ControlInput(thrust, omega)


@dataclass
class SimConfig:
    """Everything one closed-loop run depends on, seed included."""

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    suction_true: SuctionParams = field(default_factory=SuctionParams)
    suction_ctrl: SuctionParams | None = None  # defaults to the plant truth
    planes: tuple = ()
    controller: str = "scmpc"
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    sigma_thrust: float = 0.2
    sigma_omega: float = 0.2
    sigma_accel: float = 0.0  # noise on the logged acceleration channel
    duration: float = 10.0
    sim_dt: float = 0.002
    ctrl_dt: float = 0.02
    rng_seed: int = 0
    warmup: float = 2.0
    mpc: MpcConfig = field(default_factory=MpcConfig)
    pid: PidConfig = field(default_factory=PidConfig)

    def __post_init__(self):
        if self.suction_ctrl is None:
            self.suction_ctrl = self.suction_true

    def validate(self):
        if self.controller not in CONTROLLER_KINDS:
            raise ValueError(f"controller must be one of {CONTROLLER_KINDS}")
        if not 0.0 < self.sim_dt <= self.ctrl_dt:
            raise ValueError("need 0 < sim_dt <= ctrl_dt")
        ratio = self.ctrl_dt / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("ctrl_dt must be an integer multiple of sim_dt")
        if self.duration <= 0.0:
            raise ValueError("duration must be > 0")
        if self.sigma_thrust < 0.0 or self.sigma_omega < 0.0 or self.sigma_accel < 0.0:
            raise ValueError("noise sigmas must be >= 0")
        self.trajectory.validate()


# CSV column layout; the trailing acceleration triplet feeds identification.
_CSV_COLUMNS = (
    ["t"]
    + [f"ref_{c}" for c in ("px", "py", "pz", "rx", "ry", "rz", "vx", "vy", "vz")]
    + ["px", "py", "pz", "rx", "ry", "rz", "vx", "vy", "vz"]
    + ["T_cmd", "wx_cmd", "wy_cmd", "wz_cmd"]
    + ["T_act", "wx_act", "wy_act", "wz_act"]
    + ["Fs_x", "Fs_y", "Fs_z"]
    + ["collision", "cost", "solve_ms"]
    + ["ax", "ay", "az"]
)


@dataclass
class SimLog:
    """Columnar per-tick record of one run."""

    t: np.ndarray
    ref_p: np.ndarray
    ref_r: np.ndarray
    ref_v: np.ndarray
    p: np.ndarray
    r: np.ndarray
    v: np.ndarray
    u_cmd: np.ndarray
    u_act: np.ndarray
    F_s: np.ndarray
    collision: np.ndarray
    cost: np.ndarray
    solve_ms: np.ndarray
    accel: np.ndarray
    max_penetration: float = 0.0

    def __len__(self) -> int:
        return self.t.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(fh)

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for i in range(len(self)):
            row = (
                [self.t[i]]
                + list(self.ref_p[i]) + list(self.ref_r[i]) + list(self.ref_v[i])
                + list(self.p[i]) + list(self.r[i]) + list(self.v[i])
                + list(self.u_cmd[i]) + list(self.u_act[i]) + list(self.F_s[i])
                + [int(self.collision[i]), self.cost[i], self.solve_ms[i]]
                + list(self.accel[i])
            )
            writer.writerow([repr(float(x)) if not isinstance(x, int) else x
                             for x in row])

    @classmethod
    def from_csv(cls, path) -> "SimLog":
        with open(path, "r", newline="") as fh:
            return cls.read_csv(fh)

    @classmethod
    def read_csv(cls, fh) -> "SimLog":
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[: len(_CSV_COLUMNS)] != _CSV_COLUMNS:
            raise ValueError("unrecognized log header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_CSV_COLUMNS):
                raise ValueError(f"malformed log row at line {lineno}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise ValueError(f"malformed log row at line {lineno}: {exc}") from None
        if not rows:
            raise ValueError("log has no data rows")
        data = np.asarray(rows)
        g = lambda a, b: data[:, a:b]
        return cls(
            t=data[:, 0],
            ref_p=g(1, 4), ref_r=g(4, 7), ref_v=g(7, 10),
            p=g(10, 13), r=g(13, 16), v=g(16, 19),
            u_cmd=g(19, 23), u_act=g(23, 27), F_s=g(27, 30),
            collision=data[:, 30].astype(bool),
            cost=data[:, 31],
            solve_ms=data[:, 32],
            accel=g(33, 36),
        )


@dataclass
class Metrics:
    """Per-axis tracking errors plus the collision record of a run."""

    mae: np.ndarray
    rmse: np.ndarray
    collision_count: int
    max_penetration: float

    def to_dict(self) -> dict:
        return {
            "mae": list(map(float, self.mae)),
            "rmse": list(map(float, self.rmse)),
            "collision_count": int(self.collision_count),
            "max_penetration": float(self.max_penetration),
        }


def compute_metrics(log: SimLog, warmup: float = 0.0) -> Metrics:
    """Per-axis MAE/RMSE of the position error over ticks past the warmup."""
    keep = log.t >= warmup
    if not np.any(keep):
        raise EmptyWindowError(f"no log rows at or after t={warmup}")
    err = log.p[keep] - log.ref_p[keep]
    mae = np.mean(np.abs(err), axis=0)
    rmse = np.sqrt(np.mean(err * err, axis=0))
    return Metrics(
        mae=mae,
        rmse=rmse,
        collision_count=int(np.count_nonzero(log.collision)),
        max_penetration=float(log.max_penetration),
    )


def _make_controller(cfg: SimConfig):
    if cfg.controller == "pid":
        return PidController(cfg.pid, cfg.vehicle, cfg.ctrl_dt)
    mpc_cfg = replace(cfg.mpc, dt=cfg.ctrl_dt,
                      suction_enabled=(cfg.controller == "scmpc"))
    suction = cfg.suction_ctrl if cfg.controller == "scmpc" else None
    return MpcController(mpc_cfg, cfg.vehicle, cfg.planes, suction)


def simulate(cfg: SimConfig) -> tuple[SimLog, Metrics]:
    """Run one closed loop and return its log and metrics.

    The loop starts on the reference. Controller failures degrade the tick
    (the previous plan's shifted input is applied) and the run continues;
    wall contact clamps the body at the minimum rotor distance and flags
    the tick.
    """
    cfg.validate()
    n_ticks = int(round(cfg.duration / cfg.ctrl_dt))
    n_sub = int(round(cfg.ctrl_dt / cfg.sim_dt))
    horizon = cfg.mpc.horizon if cfg.controller in ("mpc", "scmpc") else 0
    traj = make_trajectory(cfg.trajectory, cfg.duration, cfg.ctrl_dt, horizon,
                           cfg.vehicle.hover_thrust())

    seq = np.random.SeedSequence(cfg.rng_seed)
    rng_thrust, rng_rates, rng_accel = (np.random.default_rng(s) for s in seq.spawn(3))

    controller = _make_controller(cfg)
    Rwps, twps = stack_planes(cfg.planes)
    has_wall = Rwps.shape[0] > 0
    st = cfg.suction_true

    x = State(traj.ps[0].copy(), traj.Rs[0].copy(), traj.vs[0].copy())
    cols = lambda k: np.zeros((n_ticks, k))
    log = SimLog(
        t=np.arange(n_ticks) * cfg.ctrl_dt,
        ref_p=cols(3), ref_r=cols(3), ref_v=cols(3),
        p=cols(3), r=cols(3), v=cols(3),
        u_cmd=cols(4), u_act=cols(4), F_s=cols(3),
        collision=np.zeros(n_ticks, dtype=bool),
        cost=cols(1)[:, 0], solve_ms=cols(1)[:, 0], accel=cols(3),
    )
    max_pen = 0.0

    for i in range(n_ticks):
        x_ref = traj.state(i)
        if cfg.controller == "pid":
            u_cmd = controller.step(x, x_ref, traj.vs[i])
            cost = 0.0
            solve_ms = 0.0
        else:
            t0 = time.perf_counter()
            result = controller.step(x, traj.window(i, horizon + 1))
            solve_ms = (time.perf_counter() - t0) * 1e3
            u_cmd = result.u0
            cost = result.report.final_cost

        u_act = apply_actuator_noise(u_cmd, cfg.sigma_thrust, cfg.sigma_omega,
                                     rng_thrust, rng_rates)

        if has_wall:
            Fs = kernels.suction_force_total(
                x.p, x.R, Rwps, twps, st.rotor_offsets, st.k_s, st.d_thr)
        else:
            Fs = np.zeros(3)
        accel = kernels.accel_world(x.R, x.v, u_act.thrust, Fs, cfg.vehicle.mass,
                                    cfg.vehicle.drag, cfg.vehicle.gravity)
        accel = accel + cfg.sigma_accel * rng_accel.standard_normal(3)

        log.ref_p[i] = x_ref.p
        log.ref_r[i] = kernels.so3_log(x_ref.R)
        log.ref_v[i] = traj.vs[i]
        log.p[i] = x.p
        log.r[i] = kernels.so3_log(x.R)
        log.v[i] = x.v
        log.u_cmd[i] = u_cmd.as_array()
        log.u_act[i] = u_act.as_array()
        log.F_s[i] = Fs
        log.cost[i] = cost
        log.solve_ms[i] = solve_ms
        log.accel[i] = accel

        p, R, v, collided, pen = kernels.plant_tick(
            x.p, x.R, x.v, u_act.thrust, u_act.omega, n_sub, cfg.sim_dt,
            cfg.vehicle.mass, cfg.vehicle.drag, cfg.vehicle.gravity,
            Rwps, twps, st.rotor_offsets, st.k_s, st.d_thr, st.d_min,
        )
        x = State(p, R, v)
        log.collision[i] = collided
        max_pen = max(max_pen, pen)

    log.max_penetration = max_pen
    metrics = compute_metrics(log, cfg.warmup)
    return log, metrics


def id_samples_from_log(log: SimLog):
    """Identification samples from a run log (actual thrust, logged accel)."""
    from .identification import IdSample

    out = []
    for i in range(len(log)):
        out.append(IdSample(
            t=float(log.t[i]),
            p=log.p[i],
            a_w=log.accel[i],
            v_w=log.v[i],
            R=kernels.so3_exp(log.r[i]),
            thrust=float(log.u_act[i, 0]),
        ))
    return out


def wall_plane(point=(0.0, 0.0, 0.0), outward_normal=(1.0, 0.0, 0.0),
               plane_id: int = 0) -> PlaneFrame:
    """Convenience wall constructor used by configs and tests."""
    return PlaneFrame.from_point_normal(point, outward_normal, plane_id)
