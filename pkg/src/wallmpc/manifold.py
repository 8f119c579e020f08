"""Algebra on the product manifold R^3 x SO(3) x R^3.

States carry a rotation matrix internally; rotation vectors appear only in
tangents and logs. Tangent vectors are plain (9,) arrays with the fixed
block order (position, rotation, velocity), exposed here as the slices
``POS``, ``ROT``, ``VEL``. Rotation perturbations act on the right:
``R_new = R @ exp(skew(delta_rot))``.

All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

POS = slice(0, 3)
ROT = slice(3, 6)
VEL = slice(6, 9)

TANGENT_DIM = 9

ORTHOGONALITY_TOL = 1e-6


class InvalidRotationError(ValueError):
    """Raised when a matrix violates the rotation invariants."""


def skew(w) -> np.ndarray:
    """Antisymmetric matrix with skew(w) @ x == cross(w, x)."""
    return kernels.skew3(np.asarray(w, dtype=float))


def so3_exp(theta) -> np.ndarray:
    """Rodrigues exponential map; series expansion below 1e-6 rad."""
    return kernels.so3_exp(np.asarray(theta, dtype=float))


def so3_log(R) -> np.ndarray:
    """Canonical axis-angle of a rotation matrix, angle in [0, pi].

    Stable near zero (series) and near pi (axis recovered from the
    symmetric part). Raises InvalidRotationError if R is not orthogonal
    with unit determinant to within 1e-6.
    """
    R = np.asarray(R, dtype=float)
    if not rotation_is_valid(R, ORTHOGONALITY_TOL):
        raise InvalidRotationError("matrix is not a rotation to within 1e-6")
    return kernels.so3_log(R)


def rotation_is_valid(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


@dataclass
class State:
    """Quadrotor state: world position, body-to-world rotation, world velocity."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "State":
        return cls()

    @classmethod
    def _wrap(cls, p: np.ndarray, R: np.ndarray, v: np.ndarray) -> "State":
        # hot-path constructor: trusts float64 shapes, skips __post_init__
        obj = object.__new__(cls)
        obj.p = p
        obj.R = R
        obj.v = v
        return obj

    def copy(self) -> "State":
        return State(self.p.copy(), self.R.copy(), self.v.copy())

    def rotation_vector(self) -> np.ndarray:
        return kernels.so3_log(self.R)

    def allclose(self, other: "State", tol: float = 1e-12) -> bool:
        return (
            np.max(np.abs(self.p - other.p)) <= tol
            and np.max(np.abs(self.R - other.R)) <= tol
            and np.max(np.abs(self.v - other.v)) <= tol
        )


def state_boxplus(x: State, delta) -> State:
    """Right-perturb a state by a (9,) tangent vector."""
    delta = np.asarray(delta, dtype=float).reshape(9)
    p, R, v = kernels.boxplus(x.p, x.R, x.v, delta)
    return State._wrap(p, R, v)


def state_boxminus(y: State, x: State) -> np.ndarray:
    """Tangent d with x boxplus d == y, valid for relative angle < pi."""
    return kernels.boxminus(y.p, y.R, y.v, x.p, x.R, x.v)
