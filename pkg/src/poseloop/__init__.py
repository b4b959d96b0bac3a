"""Self-supervised pose-estimation data engine for bin picking.

The package closes the estimate -> grasp -> verify -> label -> calibrate
loop at desk scale: a simulated workcell generates episodes, an in-hand
check turns correct estimates into training samples, and a bias
calibration learner demonstrates that performance grows with the
verified data.
"""

from .geometry import (
    ObjectModel,
    PointCloud,
    Pose,
    angular_error_z,
    compose,
    flip_y,
    invert,
    load_model,
    rotation_geodesic,
    sample_cylinder_model,
    save_model,
    transform_points,
)
from .metrics import VerificationResult, VerificationThresholds, e_adi, nn_distances, verify
from .pose_solver import (
    Correspondence,
    PoseHypothesis,
    depth_check,
    estimate_batch,
    kabsch,
    nms,
    ransac_pose,
)
from .proposer import ErrorModel, Proposal, apply_calibration, keypoint_propose, oracle_propose
from .labeling import (
    LabelDecision,
    TrainingSample,
    Verdict,
    build_training_set,
    expected_grasp_pose,
    expected_inhand_pose,
    label_episode,
)
from .episode_store import (
    CloudRecord,
    EpisodeStore,
    GraspRecord,
    InHandRecord,
    InsertionRecord,
    PoseEstRecord,
    TaskRecord,
)
from .sim_workcell import (
    CampaignConfig,
    CampaignResult,
    DisturbanceModel,
    InHandObservationModel,
    SceneState,
    execute_grasp,
    insertion_attempt,
    observe_inhand,
    render_cloud,
    run_campaign,
    spawn_scene,
)
from .learner import (
    Calibration,
    EpochPlan,
    epoch_sampler,
    evaluate_recall,
    fit_calibration,
    keypoint_sampler,
    learning_curve,
    pairs_from_store,
)

__version__ = "0.1.0"
