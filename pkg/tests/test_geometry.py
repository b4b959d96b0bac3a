import numpy as np
import pytest

from poseloop.geometry import (
    GeometryError,
    PointCloud,
    Pose,
    angular_error_z,
    compose,
    farthest_point_sample,
    flip_y,
    invert,
    load_model,
    random_rotation,
    rotation_geodesic,
    rotation_x,
    rotation_y,
    rotation_z,
    sample_cylinder_model,
    save_model,
    transform_points,
)

from conftest import random_pose


class TestPose:
    def test_identity_compose(self):
        p = Pose(rotation_x(30.0), [1.0, 2.0, 3.0])
        q = compose(Pose.identity(), p)
        assert np.array_equal(q.rotation, p.rotation)
        assert np.array_equal(q.translation, p.translation)

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = random_pose(rng)
            q = compose(p, invert(p))
            assert np.linalg.norm(q.rotation - np.eye(3)) < 1e-9
            assert np.linalg.norm(q.translation) < 1e-9

    def test_compose_camera_standoff(self):
        # object held at the 600 mm in-hand inspection distance
        cam_t_tcp = Pose.from_translation([0.0, 0.0, 600.0])
        tcp_t_obj = Pose.identity()
        obj = compose(cam_t_tcp, tcp_t_obj)
        assert obj.translation[2] == 600.0

    def test_compose_associative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.linalg.norm(left.rotation - right.rotation) < 1e-9
            assert np.linalg.norm(left.translation - right.translation) < 1e-9

    def test_invert_examples(self):
        ident = invert(Pose.identity())
        assert np.array_equal(ident.rotation, np.eye(3))
        t = invert(Pose.from_translation([1.0, 2.0, 3.0]))
        assert np.allclose(t.translation, [-1.0, -2.0, -3.0])

    def test_invert_involution(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = random_pose(rng)
            q = invert(invert(p))
            assert np.linalg.norm(q.rotation - p.rotation) < 1e-12
            assert np.linalg.norm(q.translation - p.translation) < 1e-12

    def test_rejects_bad_rotation(self):
        with pytest.raises(GeometryError):
            Pose(np.eye(3) * 2.0, np.zeros(3))
        with pytest.raises(GeometryError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det = -1

    def test_immutable(self):
        p = Pose.identity()
        with pytest.raises(ValueError):
            p.rotation[0, 0] = 2.0

    def test_numbers_round_trip(self):
        rng = np.random.default_rng(3)
        p = random_pose(rng)
        q = Pose.from_numbers(p.to_numbers())
        assert np.allclose(q.rotation, p.rotation)
        assert np.allclose(q.translation, p.translation)


class TestTransformPoints:
    def test_identity(self):
        cloud = PointCloud(np.arange(12.0).reshape(4, 3))
        out = transform_points(Pose.identity(), cloud)
        assert np.array_equal(out.points, cloud.points)

    def test_pure_translation(self):
        cloud = PointCloud(np.arange(12.0).reshape(4, 3))
        out = transform_points(Pose.from_translation([1.0, -2.0, 0.5]), cloud)
        assert np.allclose(out.points, cloud.points + [1.0, -2.0, 0.5])

    def test_double_flip_restores(self):
        rng = np.random.default_rng(4)
        cloud = PointCloud(rng.normal(size=(50, 3)))
        half = Pose(rotation_y(180.0), np.zeros(3))
        out = transform_points(half, transform_points(half, cloud))
        assert np.abs(out.points - cloud.points).max() < 1e-9

    def test_preserves_source_ids(self):
        cloud = PointCloud(np.zeros((3, 3)), source_ids=[7, 8, 9])
        out = transform_points(Pose.from_translation([1, 1, 1]), cloud)
        assert np.array_equal(out.source_ids, [7, 8, 9])


class TestAngularErrorZ:
    def test_identical(self):
        p = Pose(rotation_x(33.0), np.zeros(3))
        assert angular_error_z(p, p) == 0.0

    def test_flip_is_180(self):
        rng = np.random.default_rng(5)
        p = random_pose(rng)
        assert angular_error_z(p, flip_y(p)) == pytest.approx(180.0, abs=1e-9)

    def test_own_axis_rotation_is_zero(self):
        p = Pose(rotation_x(20.0), np.zeros(3))
        spun = Pose(p.rotation @ rotation_z(77.0), p.translation)
        assert angular_error_z(p, spun) < 1e-9

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            a, b = random_pose(rng), random_pose(rng)
            assert angular_error_z(a, b) == angular_error_z(b, a)


class TestFlipY:
    def test_involution(self):
        rng = np.random.default_rng(7)
        p = random_pose(rng)
        q = flip_y(flip_y(p))
        assert np.linalg.norm(q.rotation - p.rotation) < 1e-12
        assert np.array_equal(q.translation, p.translation)

    def test_identity_z_axis_flips(self):
        f = flip_y(Pose.identity())
        assert np.allclose(f.rotation[:, 2], [0.0, 0.0, -1.0])

    def test_preserves_rotation_invariants(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            f = flip_y(random_pose(rng))
            assert np.linalg.norm(f.rotation.T @ f.rotation - np.eye(3)) < 1e-9
            assert abs(np.linalg.det(f.rotation) - 1.0) < 1e-9


class TestRotationGeodesic:
    def test_identical(self):
        p = Pose(rotation_z(12.0), np.zeros(3))
        assert rotation_geodesic(p, p) == 0.0

    def test_ninety_about_any_axis(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            axis = rng.normal(size=3)
            from poseloop.geometry import rotation_about_axis

            p = Pose.identity()
            q = Pose(rotation_about_axis(axis, 90.0), np.zeros(3))
            assert rotation_geodesic(p, q) == pytest.approx(90.0, abs=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            a, b, c = (Pose(random_rotation(rng), np.zeros(3)) for _ in range(3))
            ab = rotation_geodesic(a, b)
            bc = rotation_geodesic(b, c)
            ac = rotation_geodesic(a, c)
            assert ac <= ab + bc + 1e-9


class TestCylinderModel:
    def test_longest_part_extent(self):
        m = sample_cylinder_model(5.0, 61.0, 2048, seed=0)
        z = m.surface_cloud.points[:, 2]
        assert z.max() - z.min() == pytest.approx(61.0, abs=0.5)
        assert m.diameter == pytest.approx(np.sqrt(100.0 + 61.0 ** 2))

    def test_shortest_part(self):
        m = sample_cylinder_model(5.0, 32.0, 2048, seed=0)
        z = m.surface_cloud.points[:, 2]
        assert z.max() - z.min() == pytest.approx(32.0, abs=0.5)

    def test_centered_mean_over_seeds(self):
        # oracle: area-uniform sampling has zero mean; the sample mean of
        # each axis stays within 3 standard errors
        r, h, n = 5.0, 61.0, 2048
        lateral = 2 * np.pi * r * h
        caps = 2 * np.pi * r * r
        wl, wc = lateral / (lateral + caps), caps / (lateral + caps)
        var_z = wl * h * h / 12.0 + wc * h * h / 4.0
        var_xy = wl * r * r / 2.0 + wc * r * r / 4.0
        se = np.sqrt(np.array([var_xy, var_xy, var_z]) / n)
        for seed in range(10):
            m = sample_cylinder_model(r, h, n, seed=seed)
            mean = m.surface_cloud.points.mean(axis=0)
            assert np.all(np.abs(mean) < 3.0 * se)

    def test_points_within_diameter(self):
        m = sample_cylinder_model(5.0, 61.0, 1024, seed=3)
        norms = np.linalg.norm(m.surface_cloud.points, axis=1)
        assert norms.max() <= m.diameter / 2.0 + 1e-9

    def test_normals_unit_outward(self):
        m = sample_cylinder_model(5.0, 32.0, 1024, seed=4)
        assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0)
        # outward: normal points away from the axis or along +-z
        outward = np.einsum("ij,ij->i", m.normals, m.surface_cloud.points)
        assert np.all(outward > 0)

    def test_keypoints_on_surface(self):
        m = sample_cylinder_model(5.0, 61.0, 512, seed=5)
        from poseloop.metrics import nn_distances

        d = nn_distances(m.keypoints, m.surface_cloud.points)
        assert d.max() == 0.0  # keypoints are sampled surface points

    def test_rejects_bad_dimensions(self):
        with pytest.raises(GeometryError):
            sample_cylinder_model(0.0, 10.0)
        with pytest.raises(GeometryError):
            sample_cylinder_model(5.0, -1.0)
        with pytest.raises(GeometryError):
            sample_cylinder_model(5.0, 10.0, n_points=8)

    def test_z_spin_leaves_cloud_near_itself(self):
        from poseloop.metrics import nn_distances

        m = sample_cylinder_model(5.0, 61.0, 2048, seed=6)
        rng = np.random.default_rng(11)
        for _ in range(5):
            spin = Pose(rotation_z(rng.uniform(0.0, 360.0)), np.zeros(3))
            moved = spin.apply(m.surface_cloud.points)
            mean_nn = nn_distances(moved, m.surface_cloud.points).mean()
            assert mean_nn < 2.0 * m.sampling_resolution

    def test_deterministic_for_seed(self):
        a = sample_cylinder_model(5.0, 61.0, 512, seed=7)
        b = sample_cylinder_model(5.0, 61.0, 512, seed=7)
        assert np.array_equal(a.surface_cloud.points, b.surface_cloud.points)
        assert np.array_equal(a.keypoints, b.keypoints)


class TestFarthestPointSample:
    def test_deterministic_and_spread(self):
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(300, 3))
        a = farthest_point_sample(pts, 8)
        b = farthest_point_sample(pts, 8)
        assert np.array_equal(a, b)
        # FPS picks the two extreme points before anything between them
        d = np.linalg.norm(a[0] - a[1])
        all_d = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        assert d >= 0.5 * all_d.max()

    def test_too_many_raises(self):
        with pytest.raises(GeometryError):
            farthest_point_sample(np.zeros((4, 3)), 5)


class TestModelFiles:
    def test_save_load_round_trip(self, tmp_path):
        m = sample_cylinder_model(5.0, 32.0, 256, seed=8)
        path = tmp_path / "part.txt"
        save_model(m, path)
        loaded = load_model(path)
        first = path.read_bytes()
        save_model(loaded, path)
        assert path.read_bytes() == first
        assert loaded.id == m.id
        assert loaded.symmetry == m.symmetry
        assert len(loaded.surface_cloud) == len(m.surface_cloud)
        assert np.abs(loaded.surface_cloud.points - m.surface_cloud.points).max() < 1e-6

    def test_ply_import(self, tmp_path):
        rng = np.random.default_rng(13)
        pts = rng.normal(size=(64, 3)) * 10.0
        lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
                 "property float x", "property float y", "property float z",
                 "end_header"]
        lines += [" ".join(f"{v:.6f}" for v in p) for p in pts]
        path = tmp_path / "part.ply"
        path.write_text("\n".join(lines) + "\n")
        m = load_model(path)
        assert len(m.surface_cloud) == 64
        assert m.id == "part"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("nonsense 1 2 3\n")
        with pytest.raises(GeometryError):
            load_model(path)
