"""Wall-proximity suction force model.

A wall is a plane frame whose x axis is the outward wall normal and whose
z axis points against gravity. Every rotor closer to the plane than the
threshold distance contributes a force k_s * (d_thr - d) pulling the
vehicle toward the wall; beyond the threshold the contribution is zero,
so the total force is continuous and piecewise linear in position. The
plane is two-sided: activation uses the absolute wall-frame x coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .manifold import State, rotation_is_valid

# Symmetric X layout, 0.115 m from hub to rotor axis. The layout is
# configuration, not physics; it is chosen so four rotors at 0.066 m from
# a wall reproduce the bench-identified peak force.
ARM_HALF_SPAN = 0.115


class NegativeDistanceError(ValueError):
    """Rotor behind the wall plane, which signals a simulated collision."""


def default_rotor_offsets() -> np.ndarray:
    h = ARM_HALF_SPAN / np.sqrt(2.0)
    return np.array(
        [[h, h, 0.0], [h, -h, 0.0], [-h, h, 0.0], [-h, -h, 0.0]]
    )


@dataclass
class PlaneFrame:
    """World-to-plane rigid transform: p_plane = R_wp @ p_world + t_wp."""

    R_wp: np.ndarray
    t_wp: np.ndarray
    plane_id: int = 0

    def __post_init__(self):
        self.R_wp = np.asarray(self.R_wp, dtype=float).reshape(3, 3)
        self.t_wp = np.asarray(self.t_wp, dtype=float).reshape(3)
        if not rotation_is_valid(self.R_wp, 1e-6):
            raise ValueError("plane frame rotation is not orthonormal")

    @classmethod
    def from_point_normal(cls, point, outward_normal, plane_id: int = 0) -> "PlaneFrame":
        """Build a wall frame from a point on the wall and its outward normal.

        The frame x axis is the normal and z is as anti-gravity as the
        normal allows (walls are vertical, so normals are horizontal).
        """
        point = np.asarray(point, dtype=float).reshape(3)
        x = np.asarray(outward_normal, dtype=float).reshape(3)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            raise ValueError("outward normal must be nonzero")
        x = x / nx
        up = np.array([0.0, 0.0, 1.0])
        z = up - np.dot(up, x) * x
        nz = np.linalg.norm(z)
        if nz < 1e-9:
            raise ValueError("wall normal may not be vertical")
        z = z / nz
        y = np.cross(z, x)
        R_pw = np.column_stack((x, y, z))
        R_wp = R_pw.T
        return cls(R_wp, -R_wp @ point, plane_id)

    def normal_world(self) -> np.ndarray:
        """Outward wall normal expressed in world coordinates."""
        return self.R_wp[0].copy()


@dataclass
class SuctionParams:
    """Force-law parameters plus the rotor geometry they act on.

    k_s is the force per metre of threshold deficit, d_thr the activation
    distance, d_min the closest geometrically possible rotor-to-wall
    distance (the simulator's contact clamp). k_s = 0 represents a
    suction-free model and is allowed.
    """

    k_s: float = 4.1
    d_thr: float = 0.132
    rotor_offsets: np.ndarray = field(default_factory=default_rotor_offsets)
    d_min: float = 0.02

    def __post_init__(self):
        self.rotor_offsets = np.asarray(self.rotor_offsets, dtype=float).reshape(-1, 3)
        self.validate()

    def validate(self):
        if not self.k_s >= 0.0:
            raise ValueError("k_s must be >= 0")
        if not self.d_thr > 0.0:
            raise ValueError("d_thr must be > 0")
        if not 0.0 <= self.d_min < self.d_thr:
            raise ValueError("d_min must satisfy 0 <= d_min < d_thr")

    def with_k_s(self, k_s: float) -> "SuctionParams":
        return SuctionParams(k_s, self.d_thr, self.rotor_offsets.copy(), self.d_min)


def rotor_position_in_plane(x: State, offset, plane: PlaneFrame) -> np.ndarray:
    """Rotor position in the wall frame for a body-frame rotor offset."""
    offset = np.asarray(offset, dtype=float).reshape(3)
    return plane.R_wp @ (x.R @ offset + x.p) + plane.t_wp


def suction_scalar(d: float, params: SuctionParams) -> float:
    """Force magnitude at rotor-to-wall distance d, continuous at d_thr."""
    if d < 0.0:
        raise NegativeDistanceError(f"rotor distance {d} is behind the wall")
    if d >= params.d_thr:
        return 0.0
    return params.k_s * (params.d_thr - d)


def stack_planes(planes) -> tuple[np.ndarray, np.ndarray]:
    """Pack plane frames into the (K,3,3)/(K,3) arrays the kernels take."""
    planes = list(planes)
    if not planes:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    R = np.stack([pl.R_wp for pl in planes])
    t = np.stack([pl.t_wp for pl in planes])
    return R, t


def suction_force_world(x: State, planes, params: SuctionParams) -> np.ndarray:
    """Total wall force in world coordinates, summed over planes.

    Active rotors contribute along minus the outward normal (toward the
    wall); the result is zero when every rotor is beyond d_thr or when
    k_s is zero.
    """
    Rwps, twps = stack_planes(planes)
    if Rwps.shape[0] == 0:
        return np.zeros(3)
    return kernels.suction_force_total(
        x.p, x.R, Rwps, twps, params.rotor_offsets, params.k_s, params.d_thr
    )
