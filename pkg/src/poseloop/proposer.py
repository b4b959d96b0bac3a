"""Pluggable pose-proposal sources standing in for a learned front-end.

The oracle proposer perturbs ground truth with a configurable error model:
isotropic translation noise, axis-uniform rotation noise, occasional
180-degree flips, occasional gross (uninformed) poses, and a fixed
systematic bias that is hidden from the labeling path and has to be
recovered by calibration.  The keypoint proposer emits noisy keypoint
correspondences to exercise the least-squares solver instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    ObjectModel,
    Pose,
    compose,
    flip_y,
    invert,
    random_rotation,
    rotation_about_axis,
)
from .pose_solver import Correspondence


@dataclass(frozen=True)
class ErrorModel:
    """Distribution of proposal errors around the true object pose.

    sigma_t: isotropic translation noise (mm)
    sigma_r: rotation noise half-normal angle (deg), axis uniform
    p_flip: probability of a 180-degree flip about the body y-axis
    p_gross: probability of an uninformed uniform pose in the bin volume
    bias: fixed object-side offset applied to every non-gross proposal
    """

    sigma_t: float = 0.0
    sigma_r: float = 0.0
    p_flip: float = 0.0
    p_gross: float = 0.0
    bias: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not (0.0 <= self.p_flip <= 1.0 and 0.0 <= self.p_gross <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.p_flip + self.p_gross > 1.0:
            raise ValueError("p_flip + p_gross must not exceed 1")


@dataclass(frozen=True)
class Proposal:
    """A proposed pose plus ground-truth bookkeeping for evaluation only."""

    pose: Pose
    target_object_id: int


def noise_pose(sigma_t: float, sigma_r: float, rng: np.random.Generator) -> Pose:
    """Small random transform: N(0, sigma_t) translation, |N(0, sigma_r)| angle."""
    t = rng.normal(0.0, sigma_t, size=3) if sigma_t > 0 else np.zeros(3)
    if sigma_r > 0:
        axis = rng.normal(size=3)
        while np.linalg.norm(axis) < 1e-12:
            axis = rng.normal(size=3)
        angle = abs(rng.normal(0.0, sigma_r))
        r = rotation_about_axis(axis, angle)
    else:
        r = np.eye(3)
    return Pose(r, t)


def _gross_pose(scene_truth, model: ObjectModel, rng: np.random.Generator) -> Pose:
    """Uninformed pose: uniform position in the inflated scene volume."""
    centers = np.array([p.translation for _, p in scene_truth])
    lo = centers.min(axis=0) - model.diameter
    hi = centers.max(axis=0) + model.diameter
    t = lo + rng.random(3) * (hi - lo)
    return Pose(random_rotation(rng), t)


def oracle_propose(scene_truth: list[tuple[int, Pose]], model: ObjectModel,
                   em: ErrorModel, rng: np.random.Generator) -> Proposal:
    """Draw one proposal for a uniformly chosen object in the scene.

    Draw order is fixed (object, gross?, noise, flip?) so runs with the
    same generator state reproduce exactly.
    """
    if not scene_truth:
        raise ValueError("oracle_propose: empty scene")
    obj_id, truth = scene_truth[int(rng.integers(len(scene_truth)))]
    if rng.random() < em.p_gross:
        return Proposal(pose=_gross_pose(scene_truth, model, rng),
                        target_object_id=obj_id)
    pose = compose(truth, compose(em.bias, noise_pose(em.sigma_t, em.sigma_r, rng)))
    # conditioned on not-gross, so the marginal flip probability is p_flip
    if em.p_flip > 0 and rng.random() < em.p_flip / (1.0 - em.p_gross):
        pose = flip_y(pose)
    return Proposal(pose=pose, target_object_id=obj_id)


def keypoint_propose(scene_truth: list[tuple[int, Pose]], model: ObjectModel,
                     kp_noise_mm: float, outlier_rate: float,
                     rng: np.random.Generator) -> list[Correspondence]:
    """Simulated keypoint front-end: model keypoints matched into the scene.

    Each correspondence maps a model keypoint to its true scene location
    plus isotropic noise; an outlier_rate fraction is replaced by random
    points in the scene volume.
    """
    if model.keypoints.shape[0] < 3:
        raise ValueError("keypoint_propose: model needs at least 3 keypoints")
    if not scene_truth:
        raise ValueError("keypoint_propose: empty scene")
    _, truth = scene_truth[int(rng.integers(len(scene_truth)))]
    kps = model.keypoints
    scene_pts = truth.apply(kps)
    if kp_noise_mm > 0:
        scene_pts = scene_pts + rng.normal(0.0, kp_noise_mm, size=scene_pts.shape)
    centers = np.array([p.translation for _, p in scene_truth])
    lo = centers.min(axis=0) - model.diameter
    hi = centers.max(axis=0) + model.diameter
    corrs = []
    for i in range(kps.shape[0]):
        if rng.random() < outlier_rate:
            corrs.append(Correspondence(kps[i], lo + rng.random(3) * (hi - lo)))
        else:
            corrs.append(Correspondence(kps[i], scene_pts[i]))
    return corrs


def apply_calibration(p: Proposal, cal) -> Proposal:
    """Remove the estimated systematic bias from a proposal (object side)."""
    return Proposal(pose=compose(p.pose, invert(cal.bias_estimate)),
                    target_object_id=p.target_object_id)
