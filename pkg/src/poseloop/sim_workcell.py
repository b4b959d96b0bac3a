"""Desk-scale simulation of the bin-picking workcell.

The camera sits at the origin looking along +z; the bin floor is a plane
600 mm below it.  Parts are cylinders resting on their side.  Episodes
follow the physical flow: render a cloud of the source bin, run the
multi-hypothesis estimator, grasp the best feasible hypothesis, inspect
the grasped part at the in-hand station, gate the episode, and record
everything in the episode store.  Successfully grasped parts move to the
other bin; after a fixed number of transfers the bins swap roles, and
empty bins are refilled.

There is no rigid-body physics: stable lying poses plus rejection
sampling stand in for the pile, and grasp disturbances are drawn from an
explicit model.  The contribution under test is the data engine, not the
mechanics.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .episode_store import (
    CloudRecord,
    EpisodeStore,
    GraspRecord,
    InHandRecord,
    InsertionRecord,
    PoseEstRecord,
    TaskRecord,
)
from .geometry import (
    ObjectModel,
    PointCloud,
    Pose,
    angular_error_z,
    compose,
    invert,
    rotation_y,
    rotation_z,
    sample_cylinder_model,
    swing_about_z,
)
from .labeling import expected_grasp_pose, label_episode
from .metrics import VerificationThresholds, e_adi
from .pose_solver import estimate_batch
from .proposer import ErrorModel, noise_pose, oracle_propose

CAMERA_STANDOFF_MM = 600.0


class OverfullBinError(RuntimeError):
    """Rejection sampling could not place the requested number of parts."""


class CampaignConfigError(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field_name = field_name


@dataclass(frozen=True)
class SceneState:
    """Contents of the source bin plus per-bin bookkeeping counts.

    objects holds (id, pose-in-camera-frame) for the bin currently being
    picked; bin_a_count mirrors len(objects) and bin_b_count counts parts
    sitting in the destination bin (their poses are unknown until the
    bins swap and they are re-settled).
    """

    objects: tuple[tuple[int, Pose], ...]
    bin_extent: tuple[float, float]
    bin_a_count: int
    bin_b_count: int

    def __post_init__(self):
        if self.bin_a_count != len(self.objects):
            raise ValueError("bin_a_count must match the object list")


@dataclass(frozen=True)
class DisturbanceModel:
    p_move: float = 0.05
    move_sigma_t: float = 0.5
    move_sigma_r: float = 1.0
    p_drop: float = 0.05
    p_pushout: float = 0.02

    def __post_init__(self):
        for name in ("p_move", "p_drop", "p_pushout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class InHandObservationModel:
    obs_sigma_xy: float = 0.15
    obs_sigma_rz: float = 0.3

    def __post_init__(self):
        if self.obs_sigma_xy < 0 or self.obs_sigma_rz < 0:
            raise ValueError("observation sigmas must be non-negative")


@dataclass(frozen=True)
class GraspOutcome:
    actual_tcp_obj: Pose | None
    succeeded: bool
    target_id: int | None
    missed: bool = False
    dropped: bool = False
    pushed_out_id: int | None = None


def lying_pose(x: float, y: float, yaw_deg: float, spin_deg: float,
               rest_height: float) -> Pose:
    """Camera-frame pose of a part lying on the bin floor (axis horizontal)."""
    r = rotation_z(yaw_deg) @ rotation_y(90.0) @ rotation_z(spin_deg)
    return Pose(r, np.array([x, y, CAMERA_STANDOFF_MM - rest_height]))


def spawn_scene(n: int, model: ObjectModel, bin_extent: tuple[float, float],
                rng: np.random.Generator, start_id: int = 1,
                max_attempts_per_object: int = 400) -> SceneState:
    """Rejection-sample n non-overlapping lying parts inside the bin."""
    if n < 1:
        raise ValueError("spawn_scene: need n >= 1")
    ex, ey = bin_extent
    placed: list[tuple[float, float]] = []
    poses: list[tuple[int, Pose]] = []
    budget = max_attempts_per_object * n
    attempts = 0
    for i in range(n):
        while True:
            attempts += 1
            if attempts > budget:
                raise OverfullBinError(
                    f"could not place {n} parts of diameter {model.diameter:.1f} "
                    f"in a {ex:g} x {ey:g} bin")
            x = rng.random() * ex - ex / 2.0
            y = rng.random() * ey - ey / 2.0
            if all((x - px) ** 2 + (y - py) ** 2 >= model.diameter ** 2
                   for px, py in placed):
                break
        yaw = rng.random() * 360.0
        spin = rng.random() * 360.0
        placed.append((x, y))
        poses.append((start_id + i, lying_pose(x, y, yaw, spin,
                                               model.stable_rest_height)))
    return SceneState(objects=tuple(poses), bin_extent=(float(ex), float(ey)),
                      bin_a_count=n, bin_b_count=0)


def visible_mask(points: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Camera-facing test for a camera at the origin: n . p < 0."""
    return np.einsum("ij,ij->i", normals, points) < 0.0


def render_cloud(scene: SceneState, model: ObjectModel, sensor_sigma: float,
                 dropout: float, rng: np.random.Generator) -> PointCloud:
    """Depth-sensor surrogate: posed model clouds, visibility, noise, dropout."""
    pts_all = []
    ids_all = []
    for obj_id, pose in scene.objects:
        pts = pose.apply(model.surface_cloud.points)
        if model.normals is not None:
            world_normals = model.normals @ pose.rotation.T
            keep = visible_mask(pts, world_normals)
            pts = pts[keep]
        pts_all.append(pts)
        ids_all.append(np.full(pts.shape[0], obj_id, dtype=int))
    pts = np.concatenate(pts_all, axis=0)
    ids = np.concatenate(ids_all, axis=0)
    if sensor_sigma > 0:
        pts = pts + rng.normal(0.0, sensor_sigma, size=pts.shape)
    if dropout > 0:
        keep = rng.random(pts.shape[0]) >= dropout
        pts, ids = pts[keep], ids[keep]
    if pts.shape[0] == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=int))
    return PointCloud(pts, ids)


def visible_submodel(model: ObjectModel, pose: Pose) -> ObjectModel:
    """The camera-facing portion of the model under a pose hypothesis."""
    if model.normals is None:
        return model
    pts = pose.apply(model.surface_cloud.points)
    keep = visible_mask(pts, model.normals @ pose.rotation.T)
    if not keep.any():
        return model
    return ObjectModel(model.id, PointCloud(model.surface_cloud.points[keep]),
                       model.diameter, model.symmetry, model.keypoints,
                       model.stable_rest_height, model.normals[keep])


def resolve_target(scene: SceneState, model: ObjectModel,
                   estimate: Pose) -> tuple[int | None, Pose | None, float]:
    """Nearest true object to an estimate by average model distance."""
    best_id, best_pose, best = None, None, np.inf
    for obj_id, pose in scene.objects:
        # cheap lower bound first: clouds cannot be closer than this
        if np.linalg.norm(pose.translation - estimate.translation) - model.diameter > best:
            continue
        d = e_adi(model, estimate, pose)
        if d < best:
            best_id, best_pose, best = obj_id, pose, d
    return best_id, best_pose, best


def execute_grasp(scene: SceneState, model: ObjectModel, chosen_estimate: Pose,
                  grasp: Pose, dm: DisturbanceModel, rng: np.random.Generator,
                  miss_bound_mm: float | None = None,
                  ) -> tuple[GraspOutcome, SceneState]:
    """Attempt the planned grasp; returns the outcome and the updated scene.

    The grasped part's pose in the TCP frame follows from the plan being
    executed against the true (possibly disturbed) pose:
    inv(grasp) * inv(estimate) * truth * disturbance.  Draw order is
    move, move-noise, drop, pushout, pushout-victim.
    """
    bound = model.diameter / 2.0 if miss_bound_mm is None else miss_bound_mm
    target_id, truth, dist = resolve_target(scene, model, chosen_estimate)
    objects = list(scene.objects)
    dest = scene.bin_b_count

    if target_id is None or dist > bound:
        outcome = GraspOutcome(actual_tcp_obj=None, succeeded=False,
                               target_id=None, missed=True)
        grasped = False
    else:
        disturbance = (noise_pose(dm.move_sigma_t, dm.move_sigma_r, rng)
                       if rng.random() < dm.p_move else Pose.identity())
        actual = compose(invert(grasp),
                         compose(invert(chosen_estimate),
                                 compose(truth, disturbance)))
        dropped = rng.random() < dm.p_drop
        objects = [(i, p) for i, p in objects if i != target_id]
        if dropped:
            outcome = GraspOutcome(actual_tcp_obj=None, succeeded=False,
                                   target_id=target_id, dropped=True)
        else:
            dest += 1
            outcome = GraspOutcome(actual_tcp_obj=actual, succeeded=True,
                                   target_id=target_id)
        grasped = True

    if objects and rng.random() < dm.p_pushout:
        # grasp motion shoves a bystander out of the bin
        candidates = [i for i, _ in objects]
        if grasped and outcome.target_id in candidates:
            candidates.remove(outcome.target_id)
        if candidates:
            victim = candidates[int(rng.integers(len(candidates)))]
            objects = [(i, p) for i, p in objects if i != victim]
            outcome = replace(outcome, pushed_out_id=victim)

    new_scene = SceneState(objects=tuple(objects), bin_extent=scene.bin_extent,
                           bin_a_count=len(objects), bin_b_count=dest)
    return outcome, new_scene


def observe_inhand(actual_tcp_obj: Pose, om: InHandObservationModel,
                   rng: np.random.Generator) -> Pose:
    """Simulated in-hand measurement of the grasped part.

    The stable grasp constrains the observable error to x/y translation
    and rotation about the camera z-axis; the part's spin about its own
    axis is unobservable and reported as zero.
    """
    base = Pose(swing_about_z(actual_tcp_obj.rotation), actual_tcp_obj.translation)
    ex = rng.normal(0.0, om.obs_sigma_xy) if om.obs_sigma_xy > 0 else 0.0
    ey = rng.normal(0.0, om.obs_sigma_xy) if om.obs_sigma_xy > 0 else 0.0
    eth = rng.normal(0.0, om.obs_sigma_rz) if om.obs_sigma_rz > 0 else 0.0
    jitter = Pose(rotation_z(eth), np.array([ex, ey, 0.0]))
    return compose(jitter, base)


def insertion_attempt(model: ObjectModel, measured_inhand: Pose, expected: Pose,
                      tolerance_mm: float = 2.0, tolerance_deg: float = 15.0) -> bool:
    """Insertion succeeds when the raw in-hand error is inside tolerance.

    No flip normalization here: a part grasped the wrong way around
    cannot go into the fixture, and a zero tolerance admits exact poses
    only (hence the non-strict comparison).
    """
    if e_adi(model, measured_inhand, expected) > tolerance_mm:
        return False
    return angular_error_z(measured_inhand, expected) <= tolerance_deg


# --------------------------------------------------------------------------
# campaign


@dataclass(frozen=True)
class CampaignConfig:
    radius: float = 5.0
    height: float = 61.0
    model_points: int = 2048
    model_keypoints: int = 8
    model_seed: int = 0

    error_model: ErrorModel = field(default_factory=ErrorModel)
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)
    observation: InHandObservationModel = field(default_factory=InHandObservationModel)
    thresholds: VerificationThresholds = field(default_factory=VerificationThresholds)

    batch_k: int = 48
    tau_mm: float = 3.0
    min_overlap: float = 0.6
    nms_radius_mm: float = 5.0
    feasibility_p: float = 0.9

    bin_a: int = 30
    bin_b: int = 10
    transfer_batch: int = 20
    bin_extent: tuple[float, float] = (600.0, 400.0)

    points_per_object: int = 256
    sensor_sigma: float = 0.3
    dropout: float = 0.05

    grasp_offset_mm: float = 30.0
    insertion_tol_mm: float = 2.0
    insertion_tol_deg: float = 15.0

    train_target: int = 1000
    test_target: int = 200
    max_episode_factor: int = 50

    seed: int = 0
    network_type: str = "oracle-proposer"

    def validate(self) -> None:
        checks = [
            ("object.radius", self.radius > 0),
            ("object.height", self.height > 0),
            ("object.model_points", self.model_points >= 64),
            ("object.keypoints", 3 <= self.model_keypoints <= self.model_points),
            ("batch.k", self.batch_k >= 1),
            ("batch.tau_mm", self.tau_mm > 0),
            ("batch.min_overlap", 0.0 <= self.min_overlap <= 1.0),
            ("batch.nms_radius_mm", self.nms_radius_mm > 0),
            ("batch.feasibility_p", 0.0 < self.feasibility_p <= 1.0),
            ("bins.bin_a", self.bin_a >= 1),
            ("bins.bin_b", self.bin_b >= 0),
            ("bins.transfer_batch", self.transfer_batch >= 1),
            ("bins.extent_x_mm", self.bin_extent[0] > 0),
            ("bins.extent_y_mm", self.bin_extent[1] > 0),
            ("render.points_per_object", self.points_per_object >= 32),
            ("render.sensor_sigma_mm", self.sensor_sigma >= 0),
            ("render.dropout", 0.0 <= self.dropout < 1.0),
            ("targets.train", self.train_target >= 0),
            ("targets.test", self.test_target >= 0),
            ("targets.total", self.train_target + self.test_target >= 1),
            ("targets.max_episode_factor", self.max_episode_factor >= 1),
            ("grasp.offset_mm", np.isfinite(self.grasp_offset_mm)),
            ("insertion.tol_mm", self.insertion_tol_mm >= 0),
            ("insertion.tol_deg", self.insertion_tol_deg >= 0),
        ]
        for name, ok in checks:
            if not ok:
                raise CampaignConfigError(name, "invalid value")

    @property
    def grasp_in_object_frame(self) -> Pose:
        return Pose.from_translation([0.0, 0.0, self.grasp_offset_mm])

    @property
    def sample_target(self) -> int:
        return self.train_target + self.test_target

    @property
    def episode_cap(self) -> int:
        return self.max_episode_factor * self.sample_target


@dataclass(frozen=True)
class EpisodeTruth:
    """Evaluation-only ground truth; never consulted by the labeling path."""

    episode: int
    inhand_id: int
    pose_est_id: int
    target_id: int
    true_pose: Pose
    estimate: Pose
    accepted: bool
    flipped: bool


@dataclass
class CampaignResult:
    store: EpisodeStore
    task_id: int
    model: ObjectModel
    episodes: int = 0
    grasp_attempts: int = 0
    grasp_successes: int = 0
    accepted: int = 0
    discarded: int = 0
    insertion_attempts: int = 0
    insertion_successes: int = 0
    dropped: int = 0
    pushed_out: int = 0
    refilled: int = 0
    conservation_ok: bool = True
    truth: list[EpisodeTruth] = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        seen = self.accepted + self.discarded
        return self.accepted / seen if seen else 0.0


def run_campaign(config: CampaignConfig, out_dir: str | None = None,
                 store: EpisodeStore | None = None) -> CampaignResult:
    """Run the collection loop until the sample targets (or the cap) are hit."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    model = sample_cylinder_model(config.radius, config.height,
                                  config.model_points, seed=config.model_seed,
                                  n_keypoints=config.model_keypoints)
    render_model = model.decimated(config.points_per_object, seed=1)
    coarse_model = model.decimated(128, seed=2)
    grasp = config.grasp_in_object_frame

    next_id = 1
    scene = spawn_scene(config.bin_a, model, config.bin_extent, rng,
                        start_id=next_id)
    next_id += config.bin_a
    scene = replace(scene, bin_b_count=config.bin_b)
    initial_total = config.bin_a + config.bin_b

    if store is None:
        store = EpisodeStore()
    clouds_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        clouds_dir = os.path.join(out_dir, "clouds")
        os.makedirs(clouds_dir, exist_ok=True)

    result = CampaignResult(store=store, task_id=0, model=model)
    result.task_id = store.append(TaskRecord(object_id=model.id,
                                             network_type=config.network_type))
    transferred = 0

    def propose_fn_factory(truth_list):
        def propose(seed: int) -> Pose:
            prop_rng = np.random.default_rng(seed)
            return oracle_propose(truth_list, model, config.error_model,
                                  prop_rng).pose
        return propose

    while result.accepted < config.sample_target and result.episodes < config.episode_cap:
        # bin management: swap after a full transfer batch or when the
        # source runs dry; refill both bins when everything is lost
        if transferred >= config.transfer_batch or len(scene.objects) == 0:
            if len(scene.objects) == 0 and scene.bin_b_count == 0:
                scene = spawn_scene(config.bin_a, model, config.bin_extent, rng,
                                    start_id=next_id)
                next_id += config.bin_a
                scene = replace(scene, bin_b_count=config.bin_b)
                result.refilled += initial_total
            elif scene.bin_b_count > 0:
                old_source = len(scene.objects)
                fresh = spawn_scene(scene.bin_b_count, model, config.bin_extent,
                                    rng, start_id=next_id)
                next_id += scene.bin_b_count
                scene = replace(fresh, bin_b_count=old_source)
            transferred = 0

        result.episodes += 1
        episode = result.episodes

        cloud = render_cloud(scene, render_model, config.sensor_sigma,
                             config.dropout, rng)
        cloud_file = f"clouds/ep{episode:06d}.xyz"
        if clouds_dir is not None:
            np.savetxt(os.path.join(out_dir, cloud_file), cloud.points, fmt="%.9g")
        cloud_id = store.append(CloudRecord(task_id=result.task_id,
                                            cloud_file=cloud_file,
                                            timestamp=float(episode)))
        if len(cloud) == 0:
            continue

        scene_truth = list(scene.objects)
        batch_seed = int(rng.integers(2 ** 62))
        hypotheses = estimate_batch(
            cloud, coarse_model, propose_fn_factory(scene_truth),
            k=config.batch_k, tau_mm=config.tau_mm,
            min_overlap=config.min_overlap, nms_radius_mm=config.nms_radius_mm,
            seed=batch_seed,
            visible_subset=lambda pose: visible_submodel(coarse_model, pose))
        if not hypotheses:
            continue

        chosen = None
        for hyp in hypotheses:  # ranked: pure exploitation with a feasibility mask
            if rng.random() < config.feasibility_p:
                chosen = hyp
                break
        if chosen is None:
            continue

        pose_est_id = store.append(PoseEstRecord(cloud_id=cloud_id,
                                                 pose=chosen.pose,
                                                 score=chosen.score))
        result.grasp_attempts += 1
        outcome, scene = execute_grasp(scene, coarse_model, chosen.pose, grasp,
                                       config.disturbance, rng)
        grasp_id = store.append(GraspRecord(pose_est_id=pose_est_id,
                                            grasp_in_object_frame=grasp,
                                            succeeded=outcome.succeeded))
        if outcome.dropped:
            result.dropped += 1
        if outcome.pushed_out_id is not None:
            result.pushed_out += 1

        if outcome.succeeded:
            result.grasp_successes += 1
            transferred += 1
            measured = observe_inhand(outcome.actual_tcp_obj,
                                      config.observation, rng)
            expected = expected_grasp_pose(chosen.pose, grasp)
            inhand_id = store.append(InHandRecord(grasp_id=grasp_id,
                                                  measured_pose=measured,
                                                  expected_pose=expected))
            decision = label_episode(expected, measured, model, config.thresholds)
            if decision.accepted:
                result.accepted += 1
            else:
                result.discarded += 1
            inserted = insertion_attempt(model, measured, expected,
                                         config.insertion_tol_mm,
                                         config.insertion_tol_deg)
            result.insertion_attempts += 1
            if inserted:
                result.insertion_successes += 1
            store.append(InsertionRecord(inhand_id=inhand_id, succeeded=inserted))

            true_pose = dict(scene_truth)[outcome.target_id]
            result.truth.append(EpisodeTruth(
                episode=episode, inhand_id=inhand_id, pose_est_id=pose_est_id,
                target_id=outcome.target_id, true_pose=true_pose,
                estimate=chosen.pose, accepted=decision.accepted,
                flipped=decision.verification.flipped))

        in_bins = len(scene.objects) + scene.bin_b_count
        lost = result.dropped + result.pushed_out
        if in_bins + lost != initial_total + result.refilled:
            result.conservation_ok = False
            raise RuntimeError(
                f"object conservation violated at episode {episode}: "
                f"{in_bins} in bins + {lost} lost != "
                f"{initial_total} initial + {result.refilled} refilled")

    return result
