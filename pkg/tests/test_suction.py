import numpy as np
import pytest

from wallmpc import (
    NegativeDistanceError,
    PlaneFrame,
    State,
    SuctionParams,
    rotor_position_in_plane,
    suction_force_world,
    suction_scalar,
)
from wallmpc.manifold import so3_exp
from wallmpc.sim import wall_plane

from helpers import random_rotation, random_state


def plane_at(x=0.0, normal=(1.0, 0.0, 0.0)):
    return wall_plane(point=(x, 0.0, 0.0), outward_normal=normal)


class TestPlaneFrame:
    def test_world_aligned(self):
        pl = plane_at()
        np.testing.assert_allclose(pl.normal_world(), [1.0, 0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(pl.R_wp, np.eye(3), atol=1e-15)

    def test_rotated_normal(self):
        pl = wall_plane(point=(0, 0, 0), outward_normal=(0, 1, 0))
        np.testing.assert_allclose(pl.normal_world(), [0, 1, 0], atol=1e-15)
        # z axis of the wall frame stays anti-gravity
        np.testing.assert_allclose(pl.R_wp[2], [0, 0, 1], atol=1e-15)

    def test_vertical_normal_rejected(self):
        with pytest.raises(ValueError):
            wall_plane(point=(0, 0, 0), outward_normal=(0, 0, 1))


class TestRotorPosition:
    def test_identity_everything(self):
        got = rotor_position_in_plane(State.identity(), np.zeros(3), plane_at())
        assert np.array_equal(got, np.zeros(3))

    def test_pure_offset(self):
        got = rotor_position_in_plane(State.identity(), [0.1, 0.0, 0.0], plane_at())
        np.testing.assert_allclose(got, [0.1, 0.0, 0.0], atol=1e-15)

    def test_matches_homogeneous_composition(self, rng):
        for _ in range(30):
            x = random_state(rng)
            offset = rng.normal(size=3) * 0.2
            R_pw = random_rotation(rng)
            q = rng.normal(size=3)
            plane = PlaneFrame(R_pw.T, -R_pw.T @ q, 0)
            # oracle: compose 4x4 homogeneous transforms step by step
            T_bw = np.eye(4)
            T_bw[:3, :3] = x.R
            T_bw[:3, 3] = x.p
            T_wp = np.eye(4)
            T_wp[:3, :3] = plane.R_wp
            T_wp[:3, 3] = plane.t_wp
            expected = (T_wp @ T_bw @ np.append(offset, 1.0))[:3]
            got = rotor_position_in_plane(x, offset, plane)
            np.testing.assert_allclose(got, expected, atol=1e-12)


class TestSuctionScalar:
    def test_zero_at_threshold(self):
        params = SuctionParams(k_s=4.1, d_thr=0.132)
        assert suction_scalar(0.132, params) == 0.0

    def test_paper_identified_point(self):
        params = SuctionParams(k_s=4.1, d_thr=0.132)
        assert suction_scalar(0.032, params) == pytest.approx(0.410, abs=1e-12)

    def test_far_is_zero(self):
        params = SuctionParams(k_s=4.1, d_thr=0.132)
        assert suction_scalar(1.0, params) == 0.0

    def test_continuity_at_threshold(self):
        params = SuctionParams(k_s=4.1, d_thr=0.132)
        eps = 1e-12
        assert abs(suction_scalar(0.132 - eps, params)) < 1e-10

    def test_negative_distance_raises(self):
        with pytest.raises(NegativeDistanceError):
            suction_scalar(-0.01, SuctionParams())


class TestSuctionForceWorld:
    def test_bench_anchor_magnitude(self):
        # all four rotors at 0.066 m: zero offsets, body centre at the distance
        params = SuctionParams(k_s=4.1, d_thr=0.132, rotor_offsets=np.zeros((4, 3)),
                               d_min=0.02)
        x = State(np.array([0.066, 0.0, 1.0]), np.eye(3), np.zeros(3))
        F = suction_force_world(x, [plane_at()], params)
        assert np.linalg.norm(F) == pytest.approx(4 * 4.1 * (0.132 - 0.066), abs=1e-12)
        assert F[0] < 0  # toward the wall

    def test_zero_beyond_threshold(self):
        params = SuctionParams()
        x = State(np.array([5.0, 0.0, 1.0]), np.eye(3), np.zeros(3))
        assert np.array_equal(suction_force_world(x, [plane_at()], params), np.zeros(3))

    def test_partial_activation_matches_per_rotor_sum(self, rng):
        # two rotors inside the threshold, two outside; oracle sums
        # suction_scalar over rotor positions computed independently
        params = SuctionParams(k_s=4.1, d_thr=0.10)
        plane = plane_at()
        x = State(np.array([0.13, 0.2, 1.0]), np.eye(3), np.zeros(3))
        dists = [abs(rotor_position_in_plane(x, off, plane)[0])
                 for off in params.rotor_offsets]
        inside = [d for d in dists if d < params.d_thr]
        assert len(inside) == 2
        expected_mag = sum(suction_scalar(d, params) for d in inside)
        F = suction_force_world(x, [plane], params)
        np.testing.assert_allclose(F, [-expected_mag, 0.0, 0.0], atol=1e-12)

    def test_continuous_in_position(self):
        params = SuctionParams(k_s=4.1, d_thr=0.10)
        plane = plane_at()
        # walk the body across the activation boundary of the near rotors
        xs = np.linspace(0.17, 0.20, 2001)
        forces = [suction_force_world(
            State(np.array([x, 0, 1]), np.eye(3), np.zeros(3)), [plane], params)[0]
            for x in xs]
        steps = np.abs(np.diff(forces))
        assert steps.max() < 4 * params.k_s * (xs[1] - xs[0]) + 1e-12

    def test_never_pushes_away(self, rng):
        params = SuctionParams(k_s=4.1, d_thr=0.132)
        plane = plane_at()
        n = plane.normal_world()
        for _ in range(100):
            x = State(np.array([rng.uniform(-0.3, 0.3), 0, 1]),
                      random_rotation(rng, 0.4), np.zeros(3))
            F = suction_force_world(x, [plane], params)
            assert F @ n <= 1e-15

    def test_bounded_by_min_distance(self, rng):
        params = SuctionParams(k_s=4.1, d_thr=0.132, d_min=0.03)
        plane = plane_at()
        bound = 4 * params.k_s * (params.d_thr - params.d_min)
        for _ in range(100):
            x = State(np.array([rng.uniform(0.03 + 0.0814, 0.4), 0, 1]),
                      np.eye(3), np.zeros(3))
            dists = [rotor_position_in_plane(x, off, plane)[0]
                     for off in params.rotor_offsets]
            if min(dists) < params.d_min:
                continue
            assert np.linalg.norm(suction_force_world(x, [plane], params)) <= bound + 1e-12

    def test_zero_scale_factor(self, rng):
        params = SuctionParams(k_s=0.0, d_thr=0.132)
        for _ in range(20):
            x = State(np.array([rng.uniform(0.0, 0.3), 0, 1]),
                      random_rotation(rng, 0.3), np.zeros(3))
            assert np.array_equal(
                suction_force_world(x, [plane_at()], params), np.zeros(3))

    def test_multiple_planes_superpose(self):
        params = SuctionParams(k_s=4.1, d_thr=0.132, rotor_offsets=np.zeros((4, 3)))
        # corridor: walls at x=0 (normal +x) and x=0.2 (normal -x)
        pa = plane_at(0.0)
        pb = wall_plane(point=(0.2, 0, 0), outward_normal=(-1, 0, 0))
        x = State(np.array([0.08, 0.0, 1.0]), np.eye(3), np.zeros(3))
        Fa = suction_force_world(x, [pa], params)
        Fb = suction_force_world(x, [pb], params)
        F = suction_force_world(x, [pa, pb], params)
        np.testing.assert_allclose(F, Fa + Fb, atol=1e-12)

    def test_two_sided_plane_activation(self):
        params = SuctionParams(k_s=4.1, d_thr=0.132, rotor_offsets=np.zeros((4, 3)))
        plane = plane_at()
        x_neg = State(np.array([-0.05, 0.0, 1.0]), np.eye(3), np.zeros(3))
        F = suction_force_world(x_neg, [plane], params)
        # the absolute value activates on either side of the plane
        assert np.linalg.norm(F) == pytest.approx(4 * 4.1 * (0.132 - 0.05), abs=1e-12)


class TestParamsValidation:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SuctionParams(k_s=-1.0)
        with pytest.raises(ValueError):
            SuctionParams(d_thr=0.0)
        with pytest.raises(ValueError):
            SuctionParams(d_thr=0.1, d_min=0.2)

    def test_zero_k_s_allowed(self):
        assert SuctionParams(k_s=0.0).k_s == 0.0
