import numpy as np
import pytest

from wallmpc import kernels
from wallmpc.suction import default_rotor_offsets, stack_planes
from wallmpc.sim import wall_plane


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger JIT compilation once so timed tests measure steady state."""
    th = np.array([0.1, -0.2, 0.3])
    R = kernels.so3_exp(th)
    p = np.array([0.2, 0.0, 1.0])
    v = np.array([0.1, -0.1, 0.0])
    u = np.array([9.81, 0.1, 0.0, 0.0])
    offs = default_rotor_offsets()
    Rwps, twps = stack_planes([wall_plane()])
    Dd = np.array([0.1, 0.1, 0.15])
    kernels.skew3(th)
    kernels.so3_log(R)
    kernels.so3_jr_inv(th)
    kernels.boxplus(p, R, v, np.zeros(9))
    kernels.boxminus(p, R, v, p, R, v)
    kernels.accel_world(R, v, 9.81, np.zeros(3), 1.0, Dd, 9.81)
    kernels.propagate_step(p, R, v, 9.81, th, np.zeros(3), 0.02, 1.0, Dd, 9.81)
    kernels.rotor_plane_x(p, R, Rwps[0], twps[0], offs)
    kernels.suction_force_plane(p, R, Rwps[0], twps[0], offs, 4.1, 0.132)
    kernels.suction_force_total(p, R, Rwps, twps, offs, 4.1, 0.132)
    kernels.suction_force_and_gradients(p, R, Rwps, twps, offs, 4.1, 0.132)
    kernels.dyn_residual(p, R, v, p, R, v, 9.81, th, np.zeros(3), 0.02, 1.0, Dd, 9.81)
    kernels.dyn_residual_jacobians(p, R, v, p, R, v, 9.81, th, np.zeros(3),
                                   0.02, 1.0, Dd, 9.81)
    kernels.dyn_residual_jacobians_wall(p, R, v, p, R, v, 9.81, th, 0.02, 1.0,
                                        Dd, 9.81, Rwps, twps, offs, 4.1, 0.132)
    kernels.reference_residual(p, R, v, p, R, v)
    kernels.reference_residual_jacobian(p, R, v, p, R, v)
    kernels.limit_residual(u, -u, u)
    kernels.limit_residual_jacobian(u, -u, u)
    kernels.plant_tick(p, R, v, 9.81, th, 2, 0.002, 1.0, Dd, 9.81,
                       Rwps, twps, offs, 4.1, 0.132, 0.01)
    kernels.id_residual_jacobian(p[None], v[None], R[None], v[None],
                                 np.array([9.81]), 4.1, 0.132,
                                 Rwps, twps, offs, 1.0, Dd, 9.81)
    n = 2
    sq9 = np.eye(9)
    sq4 = np.eye(4)
    ps = np.tile(p, (n + 1, 1))
    Rs = np.tile(R, (n + 1, 1, 1))
    vs = np.tile(v, (n + 1, 1))
    us = np.tile(u, (n, 1))
    args = (ps, Rs, vs, us, ps, Rs, vs, sq9, sq9, sq9, sq4, sq4,
            -2 * np.abs(u), 2 * np.abs(u) + 1, 0.02, 1.0, Dd, 9.81,
            Rwps, twps, offs, 4.1, 0.132, True)
    kernels.mpc_fused_cost(*args)
    kernels.mpc_fused_linearize(*args)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
