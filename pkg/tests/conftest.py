import numpy as np
import pytest

from poseloop.geometry import ObjectModel, PointCloud, Pose, sample_cylinder_model


@pytest.fixture(scope="session")
def long_cylinder():
    """The longest test part: 61 mm cylinder, 10 mm wide."""
    return sample_cylinder_model(5.0, 61.0, 2048, seed=0)


@pytest.fixture(scope="session")
def short_cylinder():
    """The shortest test part: 32 mm cylinder."""
    return sample_cylinder_model(5.0, 32.0, 2048, seed=1)


@pytest.fixture()
def point_model():
    """Degenerate single-point model: e_adi equals the translation gap."""
    origin = np.zeros((1, 3))
    return ObjectModel("point", PointCloud(origin), diameter=0.0,
                       symmetry="none", keypoints=origin,
                       stable_rest_height=0.0)


def random_pose(rng, span_mm=500.0):
    from poseloop.geometry import random_rotation

    return Pose(random_rotation(rng), rng.uniform(-span_mm, span_mm, size=3))


def brute_force_nn(query: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Independent O(N*M) oracle: full distance matrix via broadcasting."""
    diff = query[:, None, :] - target[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)


def brute_force_e_adi(model, pose_a: Pose, pose_b: Pose) -> float:
    """Direct-formulation oracle: no relative-pose reduction, no index."""
    pts = model.surface_cloud.points
    a = pose_a.apply(pts)
    b = pose_b.apply(pts)
    return float(brute_force_nn(a, b).mean())


def rotation_close(a: np.ndarray, b: np.ndarray, tol_deg: float) -> bool:
    c = (np.trace(a.T @ b) - 1.0) / 2.0
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0))) <= tol_deg
