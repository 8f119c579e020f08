"""Batch identification of the wall-force parameters from flight logs.

Each sample contributes a 3-vector force residual, the gap between the
measured specific force and what thrust, gravity and drag explain; the
remainder is attributed to the wall force and fit over (k_s, d_thr) with
the shared damped least-squares solver. The objective is piecewise smooth
in d_thr (rotors enter and leave the active set), so a coarse 1-D grid
over d_thr seeds the solve to avoid dead-gradient starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import VehicleParams
from .factors import CallableFactor
from .manifold import rotation_is_valid
from .solver import LmOptions, Problem, lm_solve
from .suction import stack_planes

GRID_UPPER_D_THR = 0.3
MIN_ACTIVE_SAMPLES = 10


class InsufficientExcitationError(RuntimeError):
    """Too few samples with an active rotor; the fit would be unidentifiable."""


@dataclass
class IdSample:
    """One log row: time, pose, world velocity/acceleration and thrust."""

    t: float
    p: np.ndarray
    a_w: np.ndarray
    v_w: np.ndarray
    R: np.ndarray
    thrust: float

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.a_w = np.asarray(self.a_w, dtype=float).reshape(3)
        self.v_w = np.asarray(self.v_w, dtype=float).reshape(3)
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        if not rotation_is_valid(self.R, 1e-6):
            raise ValueError("sample rotation is not orthonormal")


@dataclass
class IdResult:
    k_s: float
    d_thr: float
    residual_rms: float
    sample_count: int
    active_sample_count: int

    def to_dict(self) -> dict:
        return {
            "k_s": self.k_s,
            "d_thr": self.d_thr,
            "residual_rms": self.residual_rms,
            "sample_count": self.sample_count,
            "active_sample_count": self.active_sample_count,
        }


@dataclass
class _Batch:
    ps: np.ndarray
    vs: np.ndarray
    Rs: np.ndarray
    accs: np.ndarray
    thrusts: np.ndarray
    Rwps: np.ndarray
    twps: np.ndarray
    offsets: np.ndarray
    vehicle: VehicleParams = field(repr=False, default=None)

    @classmethod
    def pack(cls, samples, planes, vehicle, rotor_offsets) -> "_Batch":
        samples = list(samples)
        Rwps, twps = stack_planes(planes)
        return cls(
            ps=np.stack([s.p for s in samples]),
            vs=np.stack([s.v_w for s in samples]),
            Rs=np.stack([s.R for s in samples]),
            accs=np.stack([s.a_w for s in samples]),
            thrusts=np.array([s.thrust for s in samples], dtype=float),
            Rwps=Rwps,
            twps=twps,
            offsets=np.asarray(rotor_offsets, dtype=float).reshape(-1, 3),
            vehicle=vehicle,
        )

    def evaluate(self, k_s: float, d_thr: float):
        v = self.vehicle
        return kernels.id_residual_jacobian(
            self.ps, self.vs, self.Rs, self.accs, self.thrusts, k_s, d_thr,
            self.Rwps, self.twps, self.offsets, v.mass, v.drag, v.gravity,
        )


def force_residual(s: IdSample, k_s: float, d_thr: float, planes,
                   vehicle: VehicleParams, rotor_offsets) -> np.ndarray:
    """m a + m g e3 - R (e3 T + drag) - F_wall(k_s, d_thr)."""
    batch = _Batch.pack([s], planes, vehicle, rotor_offsets)
    r, _, _, _ = batch.evaluate(k_s, d_thr)
    return r[0]


def force_jacobian(s: IdSample, k_s: float, d_thr: float, planes,
                   vehicle: VehicleParams, rotor_offsets):
    """Derivatives of the force residual in (k_s, d_thr).

    d/d k_s is minus the per-plane normal times the summed threshold
    deficit of the active rotors; d/d d_thr is the active count times
    k_s along the normal (zero when nothing is active). Both match
    central finite differences of the residual away from the d = d_thr
    kinks.
    """
    batch = _Batch.pack([s], planes, vehicle, rotor_offsets)
    _, jk, jd, _ = batch.evaluate(k_s, d_thr)
    return jk[0], jd[0]


def active_rotor_counts(samples, d_thr: float, planes, rotor_offsets) -> np.ndarray:
    """Number of rotors inside the threshold for every sample."""
    batch = _Batch.pack(samples, planes, VehicleParams(), rotor_offsets)
    _, _, _, active = batch.evaluate(0.0, d_thr)
    return active


def _grid_initialize(batch: _Batch, init, d_min: float):
    """Best (k_s, d_thr) over a coarse d_thr grid with closed-form k_s.

    The residual is linear in k_s at fixed d_thr, so each grid point has
    an explicit optimum. The caller's initialization enters as one of the
    candidates, which keeps the final fit at least as good as that start.
    """
    lo = max(d_min, 1e-4)
    candidates = [(float(init[0]), float(init[1]))]
    for d_thr in np.linspace(lo, GRID_UPPER_D_THR, 25):
        r0, jk, _, active = batch.evaluate(0.0, d_thr)
        if not np.any(active > 0):
            continue
        # residual(k) = r0 + k * jk  (jk is d r / d k_s, constant in k)
        denom = float(np.sum(jk * jk))
        if denom <= 0.0:
            continue
        k_star = max(0.0, -float(np.sum(jk * r0)) / denom)
        candidates.append((k_star, float(d_thr)))

    best = None
    best_sse = np.inf
    for k_s, d_thr in candidates:
        r, _, _, _ = batch.evaluate(k_s, d_thr)
        sse = float(np.sum(r * r))
        if sse < best_sse:
            best_sse = sse
            best = (k_s, d_thr)
    return best


def identify(samples, init=(1.0, 0.2), planes=(), vehicle: VehicleParams | None = None,
             rotor_offsets=None, d_min: float = 1e-3) -> IdResult:
    """Fit (k_s, d_thr) to a log by damped least squares on force residuals.

    k_s is floored at 0 and d_thr at d_min during updates. Raises
    InsufficientExcitationError when fewer than 10 samples have a rotor
    within the searchable threshold range.
    """
    samples = list(samples)
    if vehicle is None:
        vehicle = VehicleParams()
    if rotor_offsets is None:
        from .suction import default_rotor_offsets

        rotor_offsets = default_rotor_offsets()
    if not samples:
        raise InsufficientExcitationError("log is empty")

    batch = _Batch.pack(samples, planes, vehicle, rotor_offsets)
    reach = max(GRID_UPPER_D_THR, float(init[1]))
    excitable = active_rotor_counts(samples, reach, planes, rotor_offsets)
    n_excitable = int(np.count_nonzero(excitable))
    if n_excitable < MIN_ACTIVE_SAMPLES:
        raise InsufficientExcitationError(
            f"only {n_excitable} samples have a rotor within {reach:.3f} m "
            f"of a wall; need at least {MIN_ACTIVE_SAMPLES}")

    theta0 = np.array(_grid_initialize(batch, init, d_min), dtype=float)

    def residual_fn(theta):
        r, jk, jd, _ = batch.evaluate(float(theta[0]), float(theta[1]))
        J = np.empty((r.size, 2))
        J[:, 0] = jk.ravel()
        J[:, 1] = jd.ravel()
        return r.ravel(), [J]

    problem = Problem()
    problem.add_vector(2, lower=np.array([0.0, max(d_min, 1e-6)]))
    problem.add_factor(CallableFactor((0,), 3 * len(samples), residual_fn))
    opts = LmOptions(max_iter=60, grad_tol=1e-12, step_tol=1e-14)
    values, _ = lm_solve(problem, [theta0], opts)
    k_s, d_thr = float(values[0][0]), float(values[0][1])

    r, _, _, active = batch.evaluate(k_s, d_thr)
    rms = float(np.sqrt(np.mean(r * r)))
    return IdResult(
        k_s=k_s,
        d_thr=d_thr,
        residual_rms=rms,
        sample_count=len(samples),
        active_sample_count=int(np.count_nonzero(active)),
    )
