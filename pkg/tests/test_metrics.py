import numpy as np
import pytest

from poseloop.geometry import (
    PointCloud,
    Pose,
    compose,
    flip_y,
    rotation_x,
    rotation_z,
    sample_cylinder_model,
)
from poseloop.metrics import (
    VerificationThresholds,
    e_adi,
    nn_distances,
    normalize_flip,
    verify,
)

from conftest import brute_force_e_adi, brute_force_nn, random_pose


class TestThresholds:
    def test_defaults(self):
        th = VerificationThresholds()
        assert th.adi_mm == 2.0
        assert th.angle_deg == 15.0
        assert th.flip_trigger_deg == 90.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            VerificationThresholds(adi_mm=0.0)
        with pytest.raises(ValueError):
            VerificationThresholds(angle_deg=-1.0)

    def test_rejects_trigger_below_angle(self):
        with pytest.raises(ValueError):
            VerificationThresholds(angle_deg=15.0, flip_trigger_deg=10.0)


class TestNNDistances:
    def test_query_equals_target(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(100, 3))
        assert np.all(nn_distances(pts, pts) == 0.0)

    def test_single_target_point(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(50, 3))
        target = np.array([[1.0, -2.0, 0.5]])
        d = nn_distances(q, target)
        assert np.allclose(d, np.linalg.norm(q - target, axis=1))

    def test_matches_brute_force_both_paths(self):
        rng = np.random.default_rng(2)
        for n_target in (500, 700):  # dense path and tree path
            q = rng.uniform(-100, 100, size=(500, 3))
            t = rng.uniform(-100, 100, size=(n_target, 3))
            assert np.abs(nn_distances(q, t) - brute_force_nn(q, t)).max() < 1e-9

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError):
            nn_distances(np.zeros((3, 3)), np.zeros((0, 3)))

    def test_accepts_point_clouds(self):
        cloud = PointCloud(np.ones((4, 3)))
        assert np.all(nn_distances(cloud, cloud) == 0.0)


class TestEAdi:
    def test_same_pose_exact_zero(self, long_cylinder):
        rng = np.random.default_rng(3)
        p = random_pose(rng)
        assert e_adi(long_cylinder, p, p) == 0.0

    def test_single_point_translation(self, point_model):
        a = Pose.identity()
        b = Pose.from_translation([3.0, 0.0, 0.0])
        assert e_adi(point_model, a, b) == 3.0

    def test_z_rotation_within_sampling_tolerance(self, long_cylinder):
        a = Pose.identity()
        b = Pose(rotation_z(40.0), np.zeros(3))
        val = e_adi(long_cylinder, a, b)
        oracle = brute_force_e_adi(long_cylinder, a, b)
        assert val == pytest.approx(oracle, abs=1e-9)
        assert val <= 2.0 * long_cylinder.sampling_resolution

    def test_matches_brute_force_oracle(self, long_cylinder):
        rng = np.random.default_rng(4)
        for _ in range(5):
            a, b = random_pose(rng), random_pose(rng)
            assert e_adi(long_cylinder, a, b) == pytest.approx(
                brute_force_e_adi(long_cylinder, a, b), abs=1e-9)

    def test_nonnegative(self, long_cylinder):
        rng = np.random.default_rng(5)
        for _ in range(10):
            assert e_adi(long_cylinder, random_pose(rng), random_pose(rng)) >= 0.0

    def test_left_invariance(self, long_cylinder):
        rng = np.random.default_rng(6)
        a, b, g = (random_pose(rng) for _ in range(3))
        base = e_adi(long_cylinder, a, b)
        moved = e_adi(long_cylinder, compose(g, a), compose(g, b))
        assert moved == pytest.approx(base, abs=1e-9)


class TestNormalizeFlip:
    def test_small_angle_unchanged(self):
        exp = Pose.identity()
        found = Pose(rotation_x(10.0), np.zeros(3))
        e2, f2, flipped = normalize_flip(exp, found, 90.0)
        assert not flipped
        assert np.array_equal(e2.rotation, exp.rotation)
        assert np.array_equal(f2.rotation, found.rotation)

    def test_antipode_flips_to_zero(self):
        rng = np.random.default_rng(7)
        exp = random_pose(rng)
        found = flip_y(exp)
        e2, f2, flipped = normalize_flip(exp, found, 90.0)
        assert flipped
        from poseloop.geometry import angular_error_z

        assert angular_error_z(e2, f2) < 1e-9

    def test_91_degrees_triggers(self):
        exp = Pose.identity()
        found = Pose(rotation_x(91.0), np.zeros(3))
        _, _, flipped = normalize_flip(exp, found, 90.0)
        assert flipped

    def test_exactly_90_does_not_trigger(self):
        exp = Pose.identity()
        found = Pose(rotation_x(90.0), np.zeros(3))
        _, _, flipped = normalize_flip(exp, found, 90.0)
        assert not flipped


class TestVerify:
    def test_accepts_within_gate(self, point_model):
        exp = Pose.identity()
        found = Pose(rotation_x(10.0), [1.5, 0.0, 0.0])
        r = verify(point_model, exp, found)
        assert r.is_tp and not r.flipped
        assert r.e_adi == 1.5
        assert r.e_theta == pytest.approx(10.0, abs=1e-9)

    def test_rejects_large_distance(self, point_model):
        exp = Pose.identity()
        found = Pose(rotation_x(5.0), [2.5, 0.0, 0.0])
        r = verify(point_model, exp, found)
        assert not r.is_tp

    def test_exact_flip_accepted(self, long_cylinder):
        rng = np.random.default_rng(8)
        exp = random_pose(rng)
        found = flip_y(exp)
        r = verify(long_cylinder, exp, found)
        assert r.flipped and r.is_tp
        assert r.e_adi == 0.0 and r.e_theta < 1e-5
        # oracle: post-flip pair is exactly equal, brute force agrees
        assert brute_force_e_adi(long_cylinder, flip_y(exp), found) == 0.0

    def test_symmetric_grid_same_verdict(self):
        # dense model so the discretized symmetry stays well below the gate
        m = sample_cylinder_model(5.0, 61.0, 8192, seed=9)
        tol = 2.0 * m.sampling_resolution
        exp = Pose.identity()
        cases = [
            (Pose.from_translation([1.0, 0.0, 0.0]), True),   # margin > tol
            (Pose.from_translation([8.0, 0.0, 0.0]), False),  # margin > tol
        ]
        for base, expected_tp in cases:
            margin = abs(e_adi(m, exp, base) - 2.0)
            assert margin > tol
            for theta in np.linspace(0.0, 360.0, 36, endpoint=False):
                spun = Pose(base.rotation @ rotation_z(theta), base.translation)
                assert verify(m, exp, spun).is_tp is expected_tp

    def test_invariant_under_simultaneous_flip(self, long_cylinder):
        rng = np.random.default_rng(10)
        for dt, dr in ((0.5, 5.0), (1.5, 30.0), (0.2, 120.0), (5.0, 2.0)):
            exp = random_pose(rng)
            delta = Pose(rotation_x(dr), [dt, 0.0, 0.0])
            found = compose(exp, delta)
            direct = verify(long_cylinder, exp, found).is_tp
            both = verify(long_cylinder, flip_y(exp), flip_y(found)).is_tp
            assert direct == both

    def test_flip_decision_made_once(self, point_model):
        # pre-flip angle 91 -> flip; post-flip angle 89 stays (no re-flip)
        exp = Pose.identity()
        found = Pose(rotation_x(91.0), np.zeros(3))
        r = verify(point_model, exp, found)
        assert r.flipped
        assert r.e_theta == pytest.approx(89.0, abs=1e-9)
        assert not r.is_tp
