import math

import numpy as np
import pytest

from conetrack.core import (
    ColorDistribution,
    ConeClass,
    Gaussian2,
    Pose2,
    Velocity2,
    bhattacharyya_distance,
    bhattacharyya_distance_matrix,
    compose,
    integrate_velocity,
    invert,
    normalize_angle,
    project_spd,
    relative_pose,
)


def random_pose(rng):
    return Pose2(*rng.uniform(-10, 10, size=2), rng.uniform(-math.pi, math.pi))


class TestPose:
    def test_theta_normalized_to_half_open_interval(self):
        assert Pose2(0, 0, math.pi).theta == pytest.approx(math.pi)
        assert Pose2(0, 0, -math.pi).theta == pytest.approx(math.pi)
        assert Pose2(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
        assert Pose2(0, 0, 2 * math.pi).theta == pytest.approx(0.0, abs=1e-12)

    def test_compose_identity_both_sides(self):
        p = Pose2(1.5, -2.0, 0.7)
        ident = Pose2.identity()
        for q in (compose(ident, p), compose(p, ident)):
            assert q.as_array() == pytest.approx(p.as_array(), abs=1e-12)

    def test_compose_quarter_turn(self):
        # (1, 0, pi/2) (+) (1, 0, 0) -> (1, 1, pi/2)
        q = compose(Pose2(1, 0, math.pi / 2), Pose2(1, 0, 0))
        assert q.x == pytest.approx(1.0, abs=1e-12)
        assert q.y == pytest.approx(1.0, abs=1e-12)
        assert q.theta == pytest.approx(math.pi / 2)

    def test_compose_associative(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = compose(compose(a, b), c).as_array()
            right = compose(a, compose(b, c)).as_array()
            assert np.allclose(left[:2], right[:2], atol=1e-10)
            assert abs(normalize_angle(left[2] - right[2])) < 1e-10

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            p = random_pose(rng)
            back = compose(p, invert(p))
            assert back.as_array() == pytest.approx([0, 0, 0], abs=1e-10)

    def test_relative_pose_recovers_increment(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            a, d = random_pose(rng), random_pose(rng)
            b = compose(a, d)
            assert relative_pose(a, b).as_array() == pytest.approx(d.as_array(), abs=1e-10)


class TestVelocityIntegration:
    def test_zero_velocity_keeps_pose(self):
        p = Pose2(3, 4, 1.0)
        q = integrate_velocity(p, Velocity2.zero(), 5.0)
        assert q.as_array() == pytest.approx(p.as_array())

    def test_straight_line(self):
        q = integrate_velocity(Pose2(0, 0, 0), Velocity2(1, 0, 0), 2.0)
        assert q.as_array() == pytest.approx([2, 0, 0])

    def test_heading_rotates_body_velocity(self):
        q = integrate_velocity(Pose2(0, 0, math.pi / 2), Velocity2(1, 0, 0), 1.0)
        assert q.x == pytest.approx(0.0, abs=1e-12)
        assert q.y == pytest.approx(1.0)
        assert q.theta == pytest.approx(math.pi / 2)

    def test_negative_dt_rejected(self):
        with pytest.raises(ValueError):
            integrate_velocity(Pose2.identity(), Velocity2(1, 0, 0), -0.1)

    def test_substepping_converges_to_exact_arc(self):
        # Constant-twist motion has a closed form; Euler sub-steps must
        # approach it at first order.
        vel = Velocity2(2.0, 0.5, 0.8)
        total = 1.5
        theta0 = 0.3
        w = vel.yaw_rate
        # exact displacement of the continuous integral, world frame
        sw, cw = math.sin(w * total), math.cos(w * total)
        mat = np.array([[sw, cw - 1.0], [1.0 - cw, sw]]) / w
        c0, s0 = math.cos(theta0), math.sin(theta0)
        rot0 = np.array([[c0, -s0], [s0, c0]])
        exact = rot0 @ mat @ np.array([vel.vx, vel.vy])

        def euler_error(n):
            pose = Pose2(0, 0, theta0)
            for _ in range(n):
                pose = integrate_velocity(pose, vel, total / n)
            return float(np.hypot(pose.x - exact[0], pose.y - exact[1]))

        errs = [euler_error(n) for n in (1, 4, 16, 64, 256)]
        assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
        assert errs[-1] < 0.01
        # first-order: quadrupling the steps shrinks the error ~4x
        assert errs[2] / errs[4] > 8.0


class TestColorDistribution:
    def test_validates_sum(self):
        with pytest.raises(ValueError):
            ColorDistribution(0.5, 0.5, 0.5)

    def test_from_evidence_normalizes_and_is_idempotent(self):
        d = ColorDistribution.from_evidence(np.array([2.0, 1.0, 1.0]))
        assert d.as_array() == pytest.approx([0.5, 0.25, 0.25])
        again = ColorDistribution.from_evidence(d.as_array())
        assert again.as_array() == pytest.approx(d.as_array(), abs=1e-15)

    def test_argmax_class(self):
        assert ColorDistribution(0.7, 0.2, 0.1).argmax_class() is ConeClass.BLUE
        assert ColorDistribution(0.1, 0.8, 0.1).argmax_class() is ConeClass.YELLOW


class TestGaussian:
    def test_spd_projection_floors_eigenvalues(self):
        g = Gaussian2(np.zeros(2), np.array([[1e-15, 0], [0, 1.0]]))
        vals = np.linalg.eigvalsh(g.cov)
        assert vals.min() >= 1e-9 * (1 - 1e-12)

    def test_symmetrizes(self):
        g = Gaussian2(np.zeros(2), np.array([[1.0, 0.3], [0.1, 1.0]]))
        assert g.cov[0, 1] == pytest.approx(g.cov[1, 0])
        assert g.cov[0, 1] == pytest.approx(0.2)

    def test_arrays_read_only(self):
        g = Gaussian2.isotropic([1, 2], 0.5)
        with pytest.raises(ValueError):
            g.mean[0] = 9.0

    def test_project_spd_keeps_good_matrices(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert np.allclose(project_spd(cov), cov)


class TestBhattacharyya:
    def test_identical_is_zero(self):
        g = Gaussian2(np.array([1.0, 2.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
        assert bhattacharyya_distance(g, g) == pytest.approx(0.0, abs=1e-12)

    def test_unit_mean_separation(self):
        a = Gaussian2.isotropic([0, 0], 1.0)
        b = Gaussian2.isotropic([1, 0], 1.0)
        assert bhattacharyya_distance(a, b) == pytest.approx(0.125, abs=1e-12)

    def test_covariance_mismatch_term(self):
        a = Gaussian2.isotropic([3, -1], 1.0)
        b = Gaussian2(np.array([3.0, -1.0]), 4.0 * np.eye(2))
        assert bhattacharyya_distance(a, b) == pytest.approx(math.log(2.5 / 2.0), abs=1e-12)

    def test_symmetric_and_zero_iff_identical(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            means = rng.normal(size=(2, 2))
            covs = []
            for _ in range(2):
                m = rng.normal(size=(2, 2))
                covs.append(m @ m.T + 0.1 * np.eye(2))
            a = Gaussian2(means[0], covs[0])
            b = Gaussian2(means[1], covs[1])
            dab = bhattacharyya_distance(a, b)
            dba = bhattacharyya_distance(b, a)
            assert dab == pytest.approx(dba, abs=1e-12)
            assert dab > 0.0

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(12)
        gas, gbs = [], []
        for _ in range(5):
            m = rng.normal(size=(2, 2))
            gas.append(Gaussian2(rng.normal(size=2), m @ m.T + 0.2 * np.eye(2)))
        for _ in range(7):
            m = rng.normal(size=(2, 2))
            gbs.append(Gaussian2(rng.normal(size=2), m @ m.T + 0.2 * np.eye(2)))
        mat = bhattacharyya_distance_matrix(
            np.array([g.mean for g in gas]),
            np.array([g.cov for g in gas]),
            np.array([g.mean for g in gbs]),
            np.array([g.cov for g in gbs]),
        )
        for i, a in enumerate(gas):
            for j, b in enumerate(gbs):
                assert mat[i, j] == pytest.approx(bhattacharyya_distance(a, b), abs=1e-10)

    def test_rejects_non_spd(self):
        good = Gaussian2.isotropic([0, 0], 1.0)
        bad = Gaussian2.isotropic([0, 0], 1.0)
        object.__setattr__(bad, "cov", np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            bhattacharyya_distance(good, bad)
