"""Pose-error metrics and the true-positive verification gate.

The gate accepts a pose pair when the average nearest-point distance of
the model under the two poses stays below a mm threshold and the object
z-axes agree within an angular threshold.  Estimates that are off by a
180-degree flip are first normalized by flipping the estimate-derived
pose about its body y-axis, so that otherwise-correct flipped estimates
remain usable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .geometry import ObjectModel, PointCloud, Pose, angular_error_z, compose, flip_y, invert

# below this many target points a dense distance matrix beats tree queries
_BRUTE_TARGET_MAX = 512


@dataclass(frozen=True)
class VerificationThresholds:
    """Gate constants: distance in mm, z-axis angle and flip trigger in deg."""

    adi_mm: float = 2.0
    angle_deg: float = 15.0
    flip_trigger_deg: float = 90.0

    def __post_init__(self):
        if self.adi_mm <= 0 or self.angle_deg <= 0 or self.flip_trigger_deg <= 0:
            raise ValueError("verification thresholds must be strictly positive")
        if self.flip_trigger_deg < self.angle_deg:
            raise ValueError("flip_trigger_deg must be >= angle_deg")


@dataclass(frozen=True)
class VerificationResult:
    e_adi: float
    e_theta: float
    flipped: bool
    is_tp: bool


def nn_distances(query: PointCloud | np.ndarray, target: PointCloud | np.ndarray) -> np.ndarray:
    """Exact per-query-point minimum Euclidean distance to the target cloud.

    :param query: N x 3 points (or PointCloud).
    :param target: M x 3 points (or PointCloud), must be non-empty.
    :return: N distances in mm, matching the O(N*M) brute force exactly.
    """
    q = query.points if isinstance(query, PointCloud) else np.asarray(query, dtype=float)
    t = target.points if isinstance(target, PointCloud) else np.asarray(target, dtype=float)
    if t.size == 0:
        raise ValueError("nn_distances: empty target cloud")
    if t.shape[0] <= _BRUTE_TARGET_MAX:
        return cdist(q, t).min(axis=1)
    dist, _ = cKDTree(t).query(q, k=1)
    return dist


def _model_tree(model: ObjectModel) -> cKDTree:
    if model._nn_cache is None:
        model._nn_cache = cKDTree(model.surface_cloud.points)
    return model._nn_cache


def e_adi(model: ObjectModel, pose_a: Pose, pose_b: Pose) -> float:
    """Average minimum point distance of the model under two poses (mm).

    Computed in the model frame via the relative pose inv(b) * a, which
    leaves the metric invariant to any common rigid transform and lets a
    per-model spatial index be reused across calls.
    """
    if np.array_equal(pose_a.rotation, pose_b.rotation) and np.array_equal(
        pose_a.translation, pose_b.translation
    ):
        return 0.0
    pts = model.surface_cloud.points
    rel = compose(invert(pose_b), pose_a)
    moved = rel.apply(pts)
    if pts.shape[0] <= _BRUTE_TARGET_MAX:
        return float(cdist(moved, pts).min(axis=1).mean())
    dist, _ = _model_tree(model).query(moved, k=1)
    return float(dist.mean())


def normalize_flip(expected: Pose, found: Pose,
                   trigger_deg: float = 90.0) -> tuple[Pose, Pose, bool]:
    """Flip the expected pose 180 deg about its body y-axis on large z error.

    The expected pose is the one derived from the bin estimate, so when the
    z-axes disagree by more than the trigger the estimate is assumed flipped
    and that side is corrected; the measured pose is left untouched.
    """
    if angular_error_z(expected, found) > trigger_deg:
        return flip_y(expected), found, True
    return expected, found, False


def verify(model: ObjectModel, expected: Pose, found: Pose,
           thresholds: VerificationThresholds = VerificationThresholds()) -> VerificationResult:
    """Run the accept/discard gate on an (expected, found) pose pair.

    Flip normalization fires once, on the pre-flip z-axis error; the
    reported errors and the strict-inequality predicate use the
    (possibly flipped) pair.
    """
    exp, fnd, flipped = normalize_flip(expected, found, thresholds.flip_trigger_deg)
    adi = e_adi(model, exp, fnd)
    theta = angular_error_z(exp, fnd)
    is_tp = adi < thresholds.adi_mm and theta < thresholds.angle_deg
    return VerificationResult(e_adi=adi, e_theta=theta, flipped=flipped, is_tp=is_tp)
