"""Shared construction helpers for the tests."""

import numpy as np

from wallmpc import IdSample, State, VehicleParams, kernels
from wallmpc.manifold import so3_exp
from wallmpc.suction import default_rotor_offsets, stack_planes
from wallmpc.sim import wall_plane


def random_rotation(rng, max_angle=2.9):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def random_state(rng, max_angle=2.9, p_scale=1.0, v_scale=1.0):
    return State(
        rng.normal(size=3) * p_scale,
        random_rotation(rng, max_angle),
        rng.normal(size=3) * v_scale,
    )


def synthetic_id_samples(n, k_s, d_thr, rng, accel_noise=0.0,
                         x_range=(0.10, 0.20), far_every=5):
    """Model-exact identification samples with mostly near-wall poses."""
    vehicle = VehicleParams()
    offsets = default_rotor_offsets()
    planes = [wall_plane()]
    Rwps, twps = stack_planes(planes)
    samples = []
    for i in range(n):
        if far_every and i % far_every == 0:
            x = rng.uniform(0.25, 0.45)
        else:
            x = rng.uniform(*x_range)
        p = np.array([x, rng.normal(), 1.5 + rng.normal()])
        R = so3_exp(rng.normal(size=3) * 0.2)
        v = rng.normal(size=3) * 0.8
        thrust = 9.81 + rng.normal() * 2.0
        Fs = kernels.suction_force_total(p, R, Rwps, twps, offsets, k_s, d_thr)
        a = kernels.accel_world(R, v, thrust, Fs, vehicle.mass, vehicle.drag,
                                vehicle.gravity)
        a = a + accel_noise * rng.standard_normal(3)
        samples.append(IdSample(t=0.01 * i, p=p, a_w=a, v_w=v, R=R, thrust=thrust))
    return samples, planes, vehicle, offsets
