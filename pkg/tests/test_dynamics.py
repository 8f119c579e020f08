import numpy as np
import pytest

from wallmpc import (
    ControlInput,
    State,
    SuctionParams,
    VehicleParams,
    drag_force_body,
    propagate,
    state_derivative,
)
from wallmpc.factors import dynamics_residual
from wallmpc.manifold import POS, ROT, VEL, so3_exp
from wallmpc.sim import wall_plane
from wallmpc.suction import suction_force_world

from helpers import random_state


class TestDrag:
    def test_zero_velocity(self):
        x = State.identity()
        assert np.array_equal(drag_force_body(x, VehicleParams()), np.zeros(3))

    def test_zero_drag_matrix(self, rng):
        params = VehicleParams(drag=np.zeros(3))
        x = random_state(rng)
        assert np.array_equal(drag_force_body(x, params), np.zeros(3))

    def test_hand_product(self):
        params = VehicleParams(drag=np.array([0.1, 0.1, 0.2]))
        x = State(np.zeros(3), np.eye(3), np.array([1.0, 0.0, -2.0]))
        np.testing.assert_allclose(drag_force_body(x, params), [0.1, 0.0, -0.4],
                                   atol=1e-15)


class TestDerivative:
    def test_hover_balance(self):
        params = VehicleParams()
        x = State.identity()
        u = ControlInput.hover(params)
        d = state_derivative(x, u, np.zeros(3), params)
        np.testing.assert_allclose(d[VEL], np.zeros(3), atol=1e-14)
        assert np.array_equal(d[POS], np.zeros(3))
        assert np.array_equal(d[ROT], np.zeros(3))

    def test_hover_with_wall_force(self):
        params = VehicleParams(mass=1.0)
        x = State.identity()
        u = ControlInput.hover(params)
        d = state_derivative(x, u, np.array([-0.41, 0.0, 0.0]), params)
        np.testing.assert_allclose(d[VEL], [-0.41, 0.0, 0.0], atol=1e-14)

    def test_free_fall(self):
        params = VehicleParams()
        d = state_derivative(State.identity(), ControlInput(0.0), np.zeros(3), params)
        np.testing.assert_allclose(d[VEL], [0.0, 0.0, -params.gravity], atol=1e-14)

    def test_velocity_passthrough(self, rng):
        x = random_state(rng)
        d = state_derivative(x, ControlInput(5.0, rng.normal(size=3)),
                             np.zeros(3), VehicleParams())
        assert np.array_equal(d[POS], x.v)


class TestPropagate:
    def test_hover_fixed_point(self):
        params = VehicleParams(drag=np.zeros(3))
        x = State(np.array([1.0, 2.0, 3.0]), np.eye(3), np.zeros(3))
        y = propagate(x, ControlInput.hover(params), 0.01, params=params)
        assert x.allclose(y, tol=1e-12)

    def test_rotation_advances_by_exp(self):
        params = VehicleParams()
        x = State.identity()
        u = ControlInput(params.hover_thrust(), np.array([0.0, 0.0, 1.0]))
        y = propagate(x, u, 0.1, params=params)
        np.testing.assert_allclose(y.R, so3_exp([0.0, 0.0, 0.1]), atol=1e-15)

    def test_residual_consistency(self, rng):
        # the dynamics factor must vanish at a propagated pair by construction
        params = VehicleParams()
        suction = SuctionParams(k_s=4.1, d_thr=0.132)
        planes = (wall_plane(),)
        dt = 0.02
        for _ in range(100):
            x = random_state(rng, max_angle=1.0)
            x.p[0] = rng.uniform(0.0, 0.3)
            u = ControlInput(rng.normal() * 4 + 9.81, rng.normal(size=3))
            y = propagate(x, u, dt, planes, suction, params)
            F_s = suction_force_world(x, planes, suction)
            r = dynamics_residual(x, y, u, F_s, params, dt)
            assert np.max(np.abs(r)) < 1e-10

    def test_rotation_invariants_long_run(self):
        params = VehicleParams(drag=np.zeros(3))
        x = State.identity()
        u = ControlInput(params.hover_thrust(), np.array([0.7, -0.4, 0.9]))
        for _ in range(10_000):
            x = propagate(x, u, 0.002, params=params)
            x.p[:] = 0.0  # keep positions bounded; only the rotation matters
            x.v[:] = 0.0
        assert np.max(np.abs(x.R.T @ x.R - np.eye(3))) < 1e-6
        assert abs(np.linalg.det(x.R) - 1.0) < 1e-6

    def test_rotation_invariants_single_step(self, rng):
        params = VehicleParams()
        for _ in range(50):
            x = random_state(rng)
            u = ControlInput(rng.normal() * 5, rng.normal(size=3) * 3)
            y = propagate(x, u, 0.02, params=params)
            assert np.max(np.abs(y.R.T @ y.R - np.eye(3))) < 1e-9

    def test_horizontal_momentum_conserved(self):
        params = VehicleParams(drag=np.zeros(3))
        x = State(np.zeros(3), np.eye(3), np.array([0.7, -0.3, 0.0]))
        for _ in range(100):
            x = propagate(x, ControlInput(15.0, np.zeros(3)), 0.01, params=params)
        np.testing.assert_allclose(x.v[:2], [0.7, -0.3], atol=1e-12)

    def test_deterministic(self, rng):
        params = VehicleParams()
        x = random_state(rng)
        u = ControlInput(9.0, np.array([0.1, 0.2, -0.3]))
        a = propagate(x, u, 0.02, params=params)
        b = propagate(x, u, 0.02, params=params)
        assert np.array_equal(a.p, b.p)
        assert np.array_equal(a.R, b.R)
        assert np.array_equal(a.v, b.v)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            propagate(State.identity(), ControlInput(9.81), 0.0, params=VehicleParams())


class TestValidation:
    def test_vehicle_invariants(self):
        with pytest.raises(ValueError):
            VehicleParams(mass=0.0)
        with pytest.raises(ValueError):
            VehicleParams(drag=np.array([-0.1, 0.0, 0.0]))
        with pytest.raises(ValueError):
            VehicleParams(gravity=0.0)

    def test_control_input_array_round_trip(self):
        u = ControlInput(9.4, np.array([0.1, -0.2, 0.3]))
        v = ControlInput.from_array(u.as_array())
        assert v.thrust == u.thrust
        assert np.array_equal(v.omega, u.omega)
