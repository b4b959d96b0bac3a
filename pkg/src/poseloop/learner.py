"""Desk-scale learner: bias calibration fitted from verified samples.

A fixed rigid transform stands in for network weights: it is the
minimal learner whose single-shot performance measurably improves as
verified samples accumulate, which is what the data engine exists to
provide.  Epoch mixing and randomized keypoint sampling are implemented
as dataset policies even though no network consumes them here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .episode_store import EpisodeStore
from .geometry import ObjectModel, Pose, compose, invert, rotation_geodesic
from .labeling import corrected_annotation, iter_episode_records, label_episode
from .metrics import VerificationThresholds, verify
from .proposer import ErrorModel, apply_calibration, oracle_propose
from .sim_workcell import spawn_scene


@dataclass(frozen=True)
class Calibration:
    bias_estimate: Pose
    n_samples: int
    residual_rms_t: float
    residual_rms_r: float

    @staticmethod
    def identity() -> "Calibration":
        return Calibration(Pose.identity(), 0, 0.0, 0.0)


@dataclass(frozen=True)
class EpochPlan:
    real_count: int = 1000
    base_count: int = 1000
    random_keypoint_fraction: float = 0.4

    def __post_init__(self):
        if self.real_count < 0 or self.base_count < 0:
            raise ValueError("epoch counts must be non-negative")
        if not 0.0 <= self.random_keypoint_fraction <= 1.0:
            raise ValueError("random_keypoint_fraction must lie in [0, 1]")


def _chordal_mean_rotation(mats: np.ndarray) -> np.ndarray:
    """Average rotation via the eigenvector of summed quaternion outer
    products; immune to the q/-q sign ambiguity."""
    quats = Rotation.from_matrix(mats).as_quat().reshape(-1, 4)
    acc = np.zeros((4, 4))
    for q in quats:
        acc += np.outer(q, q)
    w, v = np.linalg.eigh(acc)
    return Rotation.from_quat(v[:, np.argmax(w)]).as_matrix()


def fit_calibration(pairs: list[tuple[Pose, Pose]]) -> Calibration:
    """Fit the systematic object-side bias from (proposed, true) pose pairs.

    Each pair contributes the error transform inv(true) * proposed; the
    estimate averages translations arithmetically and rotations by the
    chordal mean.  An empty input yields the identity calibration.
    """
    if not pairs:
        return Calibration.identity()
    errors = [compose(invert(true), proposed) for proposed, true in pairs]
    t = np.mean([e.translation for e in errors], axis=0)
    r = _chordal_mean_rotation(np.array([e.rotation for e in errors]))
    bias = Pose(r, t)
    inv_bias = invert(bias)
    residuals = [compose(inv_bias, e) for e in errors]
    rms_t = float(np.sqrt(np.mean([np.dot(res.translation, res.translation)
                                   for res in residuals])))
    rms_r = float(np.sqrt(np.mean([rotation_geodesic(Pose.identity(), res) ** 2
                                   for res in residuals])))
    return Calibration(bias, len(pairs), rms_t, rms_r)


def epoch_sampler(real: list, base: list, plan: EpochPlan,
                  rng: np.random.Generator) -> list:
    """Draw one epoch with replacement, mixing new and base datasets.

    With no verified samples yet, the whole epoch comes from the base set
    so training can start immediately.
    """
    if not base:
        raise ValueError("epoch_sampler: base dataset must be non-empty")
    total = plan.real_count + plan.base_count
    if not real:
        idx = rng.integers(len(base), size=total)
        return [base[i] for i in idx]
    picks = [real[i] for i in rng.integers(len(real), size=plan.real_count)]
    picks += [base[i] for i in rng.integers(len(base), size=plan.base_count)]
    order = rng.permutation(total)
    return [picks[i] for i in order]


def keypoint_sampler(model: ObjectModel, rng: np.random.Generator,
                     plan: EpochPlan) -> np.ndarray:
    """Farthest-point keypoints, randomized for a fraction of draws."""
    k = model.keypoints.shape[0]
    surface = model.surface_cloud.points
    if surface.shape[0] < k:
        raise ValueError("model has fewer surface points than keypoints")
    if rng.random() < plan.random_keypoint_fraction:
        idx = rng.choice(surface.shape[0], size=k, replace=False)
        return surface[idx].copy()
    return model.keypoints.copy()


def evaluate_recall(em: ErrorModel, calibration: Calibration, model: ObjectModel,
                    test_episodes: int, thresholds: VerificationThresholds,
                    seed: int, n_objects: int = 6,
                    bin_extent: tuple[float, float] = (400.0, 300.0)) -> float:
    """Single-proposal recall on fresh simulated scenes.

    Each episode spawns a scene, draws one proposal, removes the
    calibration bias, and verifies against the target's ground truth.
    Identical seeds give identical episode sets, so recalls evaluated at
    different calibrations are directly comparable.
    """
    if test_episodes < 1:
        raise ValueError("evaluate_recall: test_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(test_episodes):
        scene = spawn_scene(n_objects, model, bin_extent, rng)
        truth_list = list(scene.objects)
        proposal = oracle_propose(truth_list, model, em, rng)
        calibrated = apply_calibration(proposal, calibration)
        true_pose = dict(truth_list)[proposal.target_object_id]
        if verify(model, true_pose, calibrated.pose, thresholds).is_tp:
            hits += 1
    return hits / test_episodes


def pairs_from_store(store: EpisodeStore, model: ObjectModel,
                     thresholds: VerificationThresholds = VerificationThresholds(),
                     task_id: int | None = None) -> list[tuple[Pose, Pose]]:
    """Calibration pairs from accepted episodes, ordered by episode id.

    The true pose is reconstructed from in-hand data alone:
    estimate * grasp * measured equals the grasped part's bin pose up to
    grasp disturbance and the unobservable spin, so no ground-truth
    bookkeeping is consulted.
    """
    pairs = []
    for inhand, grasp, pose_est, _, _ in iter_episode_records(store, task_id):
        decision = label_episode(inhand.expected_pose, inhand.measured_pose,
                                 model, thresholds)
        if not decision.accepted:
            continue
        proposed = corrected_annotation(pose_est.pose, decision.verification.flipped)
        reconstructed = compose(pose_est.pose,
                                compose(grasp.grasp_in_object_frame,
                                        inhand.measured_pose))
        pairs.append((proposed, reconstructed))
    return pairs


def learning_curve(store: EpisodeStore, checkpoints: list[int], em: ErrorModel,
                   model: ObjectModel,
                   thresholds: VerificationThresholds = VerificationThresholds(),
                   test_episodes: int = 500, seed: int = 0,
                   n_objects: int = 6,
                   task_id: int | None = None) -> list[tuple[int, float]]:
    """Recall after calibrating on the first n accepted samples, per n.

    Checkpoints beyond the number of available samples are dropped
    (curve truncation).  All checkpoints share the evaluation seed, so
    curve differences isolate the calibration quality.
    """
    pairs = pairs_from_store(store, model, thresholds, task_id)
    curve = []
    for n in checkpoints:
        if n > len(pairs):
            continue
        cal = fit_calibration(pairs[:n])
        recall = evaluate_recall(em, cal, model, test_episodes, thresholds,
                                 seed, n_objects)
        curve.append((n, recall))
    return curve


def export_curve_csv(rows: list[tuple[int, float, int]], path) -> None:
    """CSV with one row per (checkpoint, seed): n_samples,recall,seed."""
    with open(path, "w") as fh:
        fh.write("n_samples,recall,seed\n")
        for n, recall, seed in rows:
            fh.write(f"{n},{recall:.9g},{seed}\n")
