"""Residual blocks of the control and identification graphs.

Four factor kinds drive the receding-horizon problem: a dynamics factor
tying consecutive states to an input (with analytic Jacobians and a
process covariance built from the input-noise model), a reference factor
pulling a state toward its target, a rate factor penalizing input changes
and a limit factor penalizing excursions outside the input box. A state
prior and a generic callable factor exist for initialization and tests.

Residual functions are pure; factor objects only bind parameters and are
safe to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import ControlInput, VehicleParams
from .manifold import State
from .suction import SuctionParams, stack_planes


@dataclass
class NoiseParams:
    """Standard deviations of the thrust and angular-velocity commands."""

    sigma_thrust: float = 0.2
    sigma_omega: float = 0.2

    def __post_init__(self):
        if self.sigma_thrust < 0.0 or self.sigma_omega < 0.0:
            raise ValueError("noise sigmas must be >= 0")


def dynamics_residual(x_k: State, x_k1: State, u_k: ControlInput, F_s_k,
                      params: VehicleParams, dt: float) -> np.ndarray:
    """Body-frame residual (e_p, e_theta, e_v); zero at a propagated pair."""
    F_s_k = np.asarray(F_s_k, dtype=float).reshape(3)
    return kernels.dyn_residual(
        x_k.p, x_k.R, x_k.v, x_k1.p, x_k1.R, x_k1.v,
        u_k.thrust, u_k.omega, F_s_k, dt, params.mass, params.drag, params.gravity,
    )


def dynamics_jacobians(x_k: State, x_k1: State, u_k: ControlInput, F_s_k,
                       params: VehicleParams, dt: float):
    """Analytic Jacobians w.r.t. the tangent perturbations of x_k, x_k1, u_k.

    F_s_k is held constant (its state dependence is not differentiated);
    callers re-evaluate the force at every linearization point instead.
    """
    F_s_k = np.asarray(F_s_k, dtype=float).reshape(3)
    _, J0, J1, Ju = kernels.dyn_residual_jacobians(
        x_k.p, x_k.R, x_k.v, x_k1.p, x_k1.R, x_k1.v,
        u_k.thrust, u_k.omega, F_s_k, dt, params.mass, params.drag, params.gravity,
    )
    return J0, J1, Ju


def dynamics_input_matrix(dt: float, params: VehicleParams) -> np.ndarray:
    """Constant residual-to-input Jacobian B (thrust enters along body z)."""
    B = np.zeros((9, 4))
    B[2, 0] = -0.5 * dt * dt / params.mass
    B[3, 1] = -dt
    B[4, 2] = -dt
    B[5, 3] = -dt
    B[8, 0] = -dt / params.mass
    return B


def dynamics_covariance(dt: float, noise: NoiseParams, params: VehicleParams) -> np.ndarray:
    """Process covariance B Sigma_u B^T of the dynamics residual (rank 4)."""
    if not dt > 0.0:
        raise ValueError("dt must be > 0")
    B = dynamics_input_matrix(dt, params)
    sigma = np.zeros((4, 4))
    sigma[0, 0] = noise.sigma_thrust ** 2
    sigma[1, 1] = sigma[2, 2] = sigma[3, 3] = noise.sigma_omega ** 2
    P = B @ sigma @ B.T
    return 0.5 * (P + P.T)


WEIGHT_REGULARIZATION = 1e-4


def dynamics_weight(dt: float, noise: NoiseParams, params: VehicleParams,
                    regularization: float | None = None) -> np.ndarray:
    """Information matrix (P + eps I)^-1 with eps = regularization * tr(P)/9.

    P is rank deficient (4 of 9), so the unmodeled directions only get a
    finite weight through eps.
    """
    if regularization is None:
        regularization = WEIGHT_REGULARIZATION
    P = dynamics_covariance(dt, noise, params)
    eps = regularization * np.trace(P) / 9.0
    if eps <= 0.0:
        raise ValueError("dynamics weight needs a nonzero noise model")
    w, V = np.linalg.eigh(P)
    w = np.maximum(w, 0.0)
    return (V / (w + eps)) @ V.T


def reference_residual(x: State, x_ref: State) -> np.ndarray:
    """Blocks (p - p_ref, Log(R^T R_ref), v - v_ref)."""
    return kernels.reference_residual(x.p, x.R, x.v, x_ref.p, x_ref.R, x_ref.v)


def reference_jacobian(x: State, x_ref: State) -> np.ndarray:
    _, J = kernels.reference_residual_jacobian(x.p, x.R, x.v, x_ref.p, x_ref.R, x_ref.v)
    return J


def control_limit_residual(u: ControlInput, u_min, u_max) -> np.ndarray:
    """Componentwise distance outside the input box, zero inside."""
    u_min = np.asarray(u_min, dtype=float).reshape(4)
    u_max = np.asarray(u_max, dtype=float).reshape(4)
    if np.any(u_min > u_max):
        raise ValueError("u_min must be <= u_max")
    return kernels.limit_residual(u.as_array(), u_min, u_max)


def control_rate_residual(u_k: ControlInput, u_k1: ControlInput) -> np.ndarray:
    return u_k.as_array() - u_k1.as_array()


def _sqrt_information(W: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD information matrix."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        return np.diag(np.sqrt(W))
    if np.count_nonzero(W - np.diag(np.diagonal(W))) == 0:
        return np.diag(np.sqrt(np.diagonal(W)))
    w, V = np.linalg.eigh(0.5 * (W + W.T))
    w = np.maximum(w, 0.0)
    return (V * np.sqrt(w)) @ V.T


class Factor:
    """One residual block: variable ids, weight and evaluation hooks."""

    kind = "generic"

    def __init__(self, var_ids, weight, residual_dim: int, sqrt_weight=None):
        self.var_ids = tuple(int(i) for i in var_ids)
        self.residual_dim = int(residual_dim)
        if weight is None:
            self.weight = None
            self.sqrt_weight = None
        else:
            W = np.asarray(weight, dtype=float)
            if W.ndim == 1:
                W = np.diag(W)
            if W.shape != (self.residual_dim, self.residual_dim):
                raise ValueError("weight shape does not match the residual")
            self.weight = W
            if sqrt_weight is None:
                sqrt_weight = _sqrt_information(W)
            self.sqrt_weight = sqrt_weight

    def residual(self, values) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, values) -> list:
        raise NotImplementedError

    def linearize(self, values):
        return self.residual(values), self.jacobians(values)


class DynamicsFactor(Factor):
    """Ties (x_k, u_k, x_k1); optionally evaluates the wall force at x_k."""

    kind = "dynamics"

    def __init__(self, var_ids, dt: float, vehicle: VehicleParams, weight,
                 planes=(), suction: SuctionParams | None = None, sqrt_weight=None):
        super().__init__(var_ids, weight, 9, sqrt_weight)
        if len(self.var_ids) != 3:
            raise ValueError("dynamics factor takes (x_k, u_k, x_k1)")
        self.dt = float(dt)
        self.vehicle = vehicle
        self._Rwps, self._twps = stack_planes(planes if suction is not None else ())
        self._suction = suction

    def _wall_force(self, x: State) -> np.ndarray:
        if self._suction is None or self._Rwps.shape[0] == 0:
            return np.zeros(3)
        return kernels.suction_force_total(
            x.p, x.R, self._Rwps, self._twps,
            self._suction.rotor_offsets, self._suction.k_s, self._suction.d_thr,
        )

    def residual(self, values) -> np.ndarray:
        xk, u, xk1 = (values[i] for i in self.var_ids)
        Fs = self._wall_force(xk)
        return kernels.dyn_residual(
            xk.p, xk.R, xk.v, xk1.p, xk1.R, xk1.v, u[0], u[1:4], Fs,
            self.dt, self.vehicle.mass, self.vehicle.drag, self.vehicle.gravity,
        )

    def linearize(self, values):
        xk, u, xk1 = (values[i] for i in self.var_ids)
        if self._suction is not None and self._Rwps.shape[0] > 0:
            # wall force evaluated at x_k with its state gradient folded in
            r, J0, J1, Ju = kernels.dyn_residual_jacobians_wall(
                xk.p, xk.R, xk.v, xk1.p, xk1.R, xk1.v, u[0], u[1:4],
                self.dt, self.vehicle.mass, self.vehicle.drag,
                self.vehicle.gravity, self._Rwps, self._twps,
                self._suction.rotor_offsets, self._suction.k_s,
                self._suction.d_thr,
            )
        else:
            r, J0, J1, Ju = kernels.dyn_residual_jacobians(
                xk.p, xk.R, xk.v, xk1.p, xk1.R, xk1.v, u[0], u[1:4],
                np.zeros(3), self.dt, self.vehicle.mass, self.vehicle.drag,
                self.vehicle.gravity,
            )
        return r, [J0, Ju, J1]

    def jacobians(self, values):
        return self.linearize(values)[1]


class ReferenceFactor(Factor):
    """Pulls one state toward a fixed target."""

    kind = "reference"

    def __init__(self, var_ids, target: State, weight, sqrt_weight=None):
        super().__init__(var_ids, weight, 9, sqrt_weight)
        if len(self.var_ids) != 1:
            raise ValueError("reference factor takes one state")
        self.target = target

    def residual(self, values) -> np.ndarray:
        x = values[self.var_ids[0]]
        return kernels.reference_residual(
            x.p, x.R, x.v, self.target.p, self.target.R, self.target.v
        )

    def linearize(self, values):
        x = values[self.var_ids[0]]
        r, J = kernels.reference_residual_jacobian(
            x.p, x.R, x.v, self.target.p, self.target.R, self.target.v
        )
        return r, [J]

    def jacobians(self, values):
        return self.linearize(values)[1]


class PriorFactor(ReferenceFactor):
    kind = "prior"


class RateFactor(Factor):
    """Penalizes the difference between consecutive inputs."""

    kind = "rate"

    _JA = np.eye(4)
    _JB = -np.eye(4)

    def __init__(self, var_ids, weight, sqrt_weight=None):
        super().__init__(var_ids, weight, 4, sqrt_weight)
        if len(self.var_ids) != 2:
            raise ValueError("rate factor takes (u_k, u_k1)")

    def residual(self, values) -> np.ndarray:
        return values[self.var_ids[0]] - values[self.var_ids[1]]

    def jacobians(self, values):
        return [self._JA, self._JB]


class LimitFactor(Factor):
    """Penalizes input components outside [u_min, u_max]."""

    kind = "limit"

    def __init__(self, var_ids, u_min, u_max, weight, sqrt_weight=None):
        super().__init__(var_ids, weight, 4, sqrt_weight)
        if len(self.var_ids) != 1:
            raise ValueError("limit factor takes one input")
        self.u_min = np.asarray(u_min, dtype=float).reshape(4)
        self.u_max = np.asarray(u_max, dtype=float).reshape(4)

    def residual(self, values) -> np.ndarray:
        return kernels.limit_residual(values[self.var_ids[0]], self.u_min, self.u_max)

    def linearize(self, values):
        r, J = kernels.limit_residual_jacobian(
            values[self.var_ids[0]], self.u_min, self.u_max
        )
        return r, [J]

    def jacobians(self, values):
        return self.linearize(values)[1]


class CallableFactor(Factor):
    """Wraps a user function fn(values_of_vars) -> (r, [J...])."""

    kind = "callable"

    def __init__(self, var_ids, residual_dim, fn, weight=None):
        super().__init__(var_ids, weight, residual_dim)
        self.fn = fn

    def linearize(self, values):
        args = [values[i] for i in self.var_ids]
        return self.fn(*args)

    def residual(self, values) -> np.ndarray:
        return self.linearize(values)[0]

    def jacobians(self, values):
        return self.linearize(values)[1]
