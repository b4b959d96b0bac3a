"""Auto-labeling: expected poses, the accept/discard gate, training sets.

Only verified positives become training data; every negative is discarded
because the front-end being trained needs positive samples only.  When an
episode is accepted through the flip normalization, the stored annotation
is the flip-corrected bin estimate so it is usable as supervision.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .episode_store import EpisodeStore, InHandRecord, StoreIntegrityError, TaskRecord
from .geometry import ObjectModel, Pose, compose, flip_y, invert
from .metrics import VerificationResult, VerificationThresholds, verify


class Verdict(Enum):
    ACCEPT_TRAINING_SAMPLE = "accept"
    DISCARD = "discard"


@dataclass(frozen=True)
class LabelDecision:
    verdict: Verdict
    verification: VerificationResult
    episode_id: int | None = None

    @property
    def accepted(self) -> bool:
        return self.verdict is Verdict.ACCEPT_TRAINING_SAMPLE


@dataclass(frozen=True)
class TrainingSample:
    scene_cloud_ref: int
    object_id: str
    annotated_pose: Pose
    episode_id: int
    cloud_file: str


def expected_inhand_pose(cam_t_tcp: Pose, tcp_t_obj: Pose) -> Pose:
    """Object pose in the camera frame at the in-hand inspection standoff."""
    return compose(cam_t_tcp, tcp_t_obj)


def expected_grasp_pose(bin_pose_estimate: Pose, grasp_in_object_frame: Pose) -> Pose:
    """Object pose in the TCP frame predicted by the grasp plan.

    The TCP is servoed to bin_pose_estimate * grasp, so when the estimate
    is exact the grasped object sits at the inverse of the object-frame
    grasp transform; the estimate itself cancels out of the prediction.
    """
    del bin_pose_estimate  # cancels algebraically; kept for the call shape
    return invert(grasp_in_object_frame)


def label_episode(expected: Pose, measured_inhand: Pose, model: ObjectModel,
                  thresholds: VerificationThresholds = VerificationThresholds(),
                  ) -> LabelDecision:
    """Accept iff the in-hand measurement verifies the expected grasp pose."""
    result = verify(model, expected, measured_inhand, thresholds)
    verdict = Verdict.ACCEPT_TRAINING_SAMPLE if result.is_tp else Verdict.DISCARD
    return LabelDecision(verdict=verdict, verification=result)


def corrected_annotation(bin_estimate: Pose, flipped: bool) -> Pose:
    """The pose stored as supervision: flip-corrected when the gate flipped."""
    return flip_y(bin_estimate) if flipped else bin_estimate


def iter_episode_records(store: EpisodeStore, task_id: int | None = None):
    """Yield (inhand, grasp, pose_est, cloud, task) per in-hand record."""
    for inhand in store.records_of(InHandRecord):
        chain = store.lineage(inhand.id)
        inhand, grasp, pose_est, cloud, task = chain
        if task_id is not None and task.id != task_id:
            continue
        yield inhand, grasp, pose_est, cloud, task


def build_training_set(store: EpisodeStore, task_id: int, model: ObjectModel,
                       thresholds: VerificationThresholds = VerificationThresholds(),
                       ) -> list[TrainingSample]:
    """Re-run the gate over stored episodes and keep the accepted ones.

    One sample per accepted in-hand record, ordered by record id, each
    linking the bin cloud to the (flip-corrected) verified bin estimate.
    """
    task = store.get(task_id)
    if not isinstance(task, TaskRecord):
        raise StoreIntegrityError(f"id {task_id} is not a task record")
    samples = []
    for inhand, grasp, pose_est, cloud, _ in iter_episode_records(store, task_id):
        decision = label_episode(inhand.expected_pose, inhand.measured_pose,
                                 model, thresholds)
        if not decision.accepted:
            continue
        annotated = corrected_annotation(pose_est.pose, decision.verification.flipped)
        samples.append(TrainingSample(scene_cloud_ref=cloud.id,
                                      object_id=task.object_id,
                                      annotated_pose=annotated,
                                      episode_id=inhand.id,
                                      cloud_file=cloud.cloud_file))
    return samples


def export_training_set(samples: list[TrainingSample], path) -> None:
    """One line per sample: episode id, object, cloud file, 12 pose numbers."""
    with open(path, "w") as fh:
        for s in samples:
            nums = " ".join(f"{v:.9g}" for v in s.annotated_pose.to_numbers())
            fh.write(f"{s.episode_id}\t{s.object_id}\t{s.cloud_file}\t{nums}\n")


def count_labels(store: EpisodeStore, model: ObjectModel,
                 thresholds: VerificationThresholds = VerificationThresholds(),
                 task_id: int | None = None) -> tuple[int, int]:
    """(accepted, discarded) counts over all in-hand records."""
    accepted = discarded = 0
    for inhand, *_ in iter_episode_records(store, task_id):
        decision = label_episode(inhand.expected_pose, inhand.measured_pose,
                                 model, thresholds)
        if decision.accepted:
            accepted += 1
        else:
            discarded += 1
    return accepted, discarded
