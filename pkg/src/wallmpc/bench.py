"""Micro-benchmarks for the receding-horizon solve.

Times warm-started solver ticks along a representative near-wall circle
and reports the latency distribution. The CLI wraps this and can rerun
the same scenario in a subprocess with WALLMPC_DISABLE_NUMBA=1 to compare
the compiled kernels against the pure-numpy fallback. Timing numbers are
hardware relative; the stable claims are orderings (a shorter horizon is
never slower on average) and iteration-count determinism.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .accel import NUMBA_ENABLED
from .controller import MpcConfig, MpcController
from .dynamics import VehicleParams
from .manifold import State
from .sim import TrajectorySpec, make_trajectory, wall_plane
from .suction import SuctionParams


@dataclass
class BenchResult:
    scenario: str
    n_solves: int
    mean_ms: float
    median_ms: float
    p99_ms: float
    iterations_per_solve: float
    numba: bool = NUMBA_ENABLED

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_solves": self.n_solves,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p99_ms": self.p99_ms,
            "iterations_per_solve": self.iterations_per_solve,
            "numba": self.numba,
        }


def _scenario(cfg: MpcConfig):
    vehicle = VehicleParams()
    suction = SuctionParams()
    planes = (wall_plane(),)
    spec = TrajectorySpec(kind="circle", center=np.array([0.15, 0.0, 1.5]),
                          radius=1.0, period=10.0, plane="yz")
    return vehicle, suction, planes, spec


def bench_mpc_solve(cfg: MpcConfig | None = None, n_solves: int = 200,
                    scenario: str = "circle_near_wall", warmup_ticks: int = 20) -> BenchResult:
    """Time warm-started receding-horizon ticks in closed loop.

    The plant is propagated with the controller's own plan between ticks
    so every solve after the warmup runs from a realistic warm start.
    """
    if n_solves < 100:
        raise ValueError("n_solves must be >= 100")
    if cfg is None:
        cfg = MpcConfig(suction_enabled=True)
    else:
        cfg = replace(cfg, suction_enabled=True)
    vehicle, suction, planes, spec = _scenario(cfg)
    total = warmup_ticks + n_solves
    traj = make_trajectory(spec, total * cfg.dt, cfg.dt, cfg.horizon,
                           vehicle.hover_thrust())
    controller = MpcController(cfg, vehicle, planes, suction)
    x = State(traj.ps[0].copy(), traj.Rs[0].copy(), traj.vs[0].copy())

    times = np.empty(n_solves)
    iters = np.empty(n_solves)
    for i in range(total):
        window = traj.window(i, cfg.horizon + 1)
        t0 = time.perf_counter()
        result = controller.step(x, window)
        dt_ms = (time.perf_counter() - t0) * 1e3
        if i >= warmup_ticks:
            times[i - warmup_ticks] = dt_ms
            iters[i - warmup_ticks] = result.report.iterations
        # follow the plan's first prediction; keeps the trace on the wall
        x = result.plan.states[1]

    return BenchResult(
        scenario=scenario,
        n_solves=n_solves,
        mean_ms=float(np.mean(times)),
        median_ms=float(np.median(times)),
        p99_ms=float(np.percentile(times, 99)),
        iterations_per_solve=float(np.mean(iters)),
    )
