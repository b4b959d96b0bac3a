"""Least-squares pose fitting and the multi-hypothesis estimation stack.

kabsch solves the closed-form rigid alignment of corresponded point sets,
ransac_pose makes it robust to outliers, depth_check validates hypotheses
against the observed cloud, and nms removes duplicate hypotheses.  Batch
estimation chains them: propose k poses, depth-check, deduplicate, rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import ObjectModel, PointCloud, Pose, translation_error
from .metrics import e_adi, nn_distances

# tie-break weight: keeps score ordered by overlap first, inliers second
_INLIER_TIEBREAK = 1e-6


class DegenerateCorrespondencesError(ValueError):
    """Model points are collinear or coincident; the rotation is not unique."""


class NoConsensusError(RuntimeError):
    """RANSAC found no model with at least 3 inliers."""


@dataclass(frozen=True)
class Correspondence:
    model_point: np.ndarray
    scene_point: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.model_point, dtype=float).reshape(3)
        s = np.asarray(self.scene_point, dtype=float).reshape(3)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise ValueError("correspondence coordinates must be finite")
        object.__setattr__(self, "model_point", m)
        object.__setattr__(self, "scene_point", s)


@dataclass(frozen=True)
class PoseHypothesis:
    pose: Pose
    inlier_count: int = 0
    depth_overlap: float = 0.0
    score: float = 0.0


def hypothesis_score(depth_overlap: float, inlier_count: int) -> float:
    """Ranking score: depth overlap, with inlier count as a small tie-break."""
    return depth_overlap + _INLIER_TIEBREAK * inlier_count


def _split(corrs: Sequence[Correspondence]) -> tuple[np.ndarray, np.ndarray]:
    m = np.array([c.model_point for c in corrs], dtype=float)
    s = np.array([c.scene_point for c in corrs], dtype=float)
    return m, s


def _kabsch_arrays(model: np.ndarray, scene: np.ndarray) -> Pose:
    mc = model.mean(axis=0)
    sc = scene.mean(axis=0)
    a = model - mc
    b = scene - sc
    u, s, vt = np.linalg.svd(a.T @ b)
    if s[1] <= max(1e-9, 1e-12 * s[0]):
        raise DegenerateCorrespondencesError(
            "model points are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(r, sc - r @ mc)


def kabsch(corrs: Sequence[Correspondence]) -> Pose:
    """Rigid transform minimizing sum ||pose * model_i - scene_i||^2.

    :raises DegenerateCorrespondencesError: fewer than 3 correspondences or
        collinear/coincident model points.
    """
    if len(corrs) < 3:
        raise DegenerateCorrespondencesError("need at least 3 correspondences")
    model, scene = _split(corrs)
    return _kabsch_arrays(model, scene)


def ransac_pose(corrs: Sequence[Correspondence], iterations: int = 256,
                inlier_mm: float = 3.0, seed: int = 0) -> PoseHypothesis:
    """Robust pose from correspondences by minimal-sample consensus.

    Samples 3 correspondences per iteration, keeps the largest consensus
    set, then refines with a final least-squares fit on the inliers.
    Deterministic for a fixed seed.

    :raises NoConsensusError: no hypothesis reached 3 inliers.
    """
    if len(corrs) < 3:
        raise NoConsensusError("need at least 3 correspondences")
    model, scene = _split(corrs)
    n = model.shape[0]
    rng = np.random.default_rng(seed)

    best_mask = None
    best_count = 0
    for _ in range(iterations):
        idx = rng.choice(n, size=3, replace=False)
        try:
            pose = _kabsch_arrays(model[idx], scene[idx])
        except DegenerateCorrespondencesError:
            continue
        residual = np.linalg.norm(pose.apply(model) - scene, axis=1)
        mask = residual < inlier_mm
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask

    if best_mask is None or best_count < 3:
        raise NoConsensusError("no pose hypothesis reached 3 inliers")
    refined = _kabsch_arrays(model[best_mask], scene[best_mask])
    # one re-count against the refined pose so the reported support is honest
    residual = np.linalg.norm(refined.apply(model) - scene, axis=1)
    count = int((residual < inlier_mm).sum())
    return PoseHypothesis(pose=refined, inlier_count=count,
                          depth_overlap=0.0,
                          score=hypothesis_score(0.0, count))


def depth_check(pose: Pose, model: ObjectModel, scene: PointCloud,
                tau_mm: float = 3.0, scene_index=None) -> float:
    """Fraction of posed model points whose nearest scene point is within tau.

    A prebuilt cKDTree over the scene can be passed to amortize the index
    across many hypotheses; it must index exactly scene.points.
    """
    if len(scene) == 0:
        raise ValueError("depth_check: empty scene cloud")
    posed = pose.apply(model.surface_cloud.points)
    if scene_index is not None:
        dist, _ = scene_index.query(posed, k=1)
    else:
        dist = nn_distances(posed, scene)
    return float((dist <= tau_mm).mean())


def nms(hypotheses: Sequence[PoseHypothesis], model: ObjectModel,
        radius_mm: float) -> list[PoseHypothesis]:
    """Greedy duplicate suppression by model distance.

    Hypotheses are visited by descending score; one is dropped when its
    average model distance to an already-kept hypothesis is below
    radius_mm.  Translation distance prunes pairs that cannot collide.
    """
    order = sorted(range(len(hypotheses)),
                   key=lambda i: (-hypotheses[i].score, i))
    kept: list[PoseHypothesis] = []
    for i in order:
        cand = hypotheses[i]
        duplicate = False
        for k in kept:
            if translation_error(cand.pose, k.pose) - model.diameter >= radius_mm:
                continue
            if e_adi(model, cand.pose, k.pose) < radius_mm:
                duplicate = True
                break
        if not duplicate:
            kept.append(cand)
    return kept


def estimate_batch(scene: PointCloud, model: ObjectModel,
                   propose: Callable[[int], Pose | None], k: int,
                   tau_mm: float = 3.0, min_overlap: float = 0.6,
                   nms_radius_mm: float = 5.0, seed: int = 0,
                   visible_subset: Callable[[Pose], ObjectModel] | None = None,
                   ) -> list[PoseHypothesis]:
    """Generate k proposals, depth-check them, deduplicate, and rank.

    propose receives a per-hypothesis seed (seed + index), so a parallel
    schedule would produce the same output as this serial one.  When a
    visible_subset callback is given, the depth check runs on the returned
    camera-facing portion of the model instead of the full surface.
    """
    if k < 1:
        raise ValueError("estimate_batch: k must be >= 1")
    if len(scene) == 0:
        return []
    scene_index = cKDTree(scene.points)
    survivors: list[PoseHypothesis] = []
    for i in range(k):
        pose = propose(seed + i)
        if pose is None:
            continue
        check_model = visible_subset(pose) if visible_subset is not None else model
        overlap = depth_check(pose, check_model, scene, tau_mm, scene_index)
        if overlap < min_overlap:
            continue
        survivors.append(PoseHypothesis(pose=pose, inlier_count=0,
                                        depth_overlap=overlap,
                                        score=hypothesis_score(overlap, 0)))
    deduped = nms(survivors, model, nms_radius_mm)
    return sorted(deduped, key=lambda h: -h.score)
