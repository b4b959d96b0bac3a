"""Operator-facing command line: run campaigns, relabel, curve, inspect.

Exit codes: 0 ok, 2 bad config, 3 store integrity, 4 not found,
5 would overwrite.  Summary output is machine-parseable key=value lines
on stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from . import episode_store as es
from .geometry import Pose, load_model, rotation_about_axis, sample_cylinder_model, save_model
from .labeling import count_labels
from .learner import export_curve_csv, learning_curve
from .metrics import VerificationThresholds
from .proposer import ErrorModel
from .sim_workcell import (
    CampaignConfig,
    CampaignConfigError,
    DisturbanceModel,
    InHandObservationModel,
    run_campaign,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRITY = 3
EXIT_NOT_FOUND = 4
EXIT_OVERWRITE = 5

CONFIG_VERSION = "1"

# section -> {key: (parser, CampaignConfig attribute or special handler)}
_SCHEMA = {
    "campaign": {"version": None, "seed": None, "out": None},
    "object": {"radius_mm": "radius", "height_mm": "height",
               "model_points": "model_points", "keypoints": "model_keypoints",
               "model_seed": "model_seed"},
    "error_model": {"sigma_t_mm": None, "sigma_r_deg": None, "p_flip": None,
                    "p_gross": None, "bias_t_mm": None, "bias_axis": None,
                    "bias_angle_deg": None},
    "disturbance": {"p_move": None, "move_sigma_t_mm": None,
                    "move_sigma_r_deg": None, "p_drop": None, "p_pushout": None},
    "observation": {"sigma_xy_mm": None, "sigma_rz_deg": None},
    "batch": {"k": "batch_k", "tau_mm": "tau_mm", "min_overlap": "min_overlap",
              "nms_radius_mm": "nms_radius_mm", "feasibility_p": "feasibility_p"},
    "thresholds": {"adi_mm": None, "angle_deg": None, "flip_trigger_deg": None},
    "targets": {"train": "train_target", "test": "test_target",
                "max_episode_factor": "max_episode_factor"},
    "bins": {"bin_a": "bin_a", "bin_b": "bin_b", "transfer_batch": "transfer_batch",
             "extent_x_mm": None, "extent_y_mm": None},
    "render": {"points_per_object": "points_per_object",
               "sensor_sigma_mm": "sensor_sigma", "dropout": "dropout"},
    "grasp": {"offset_mm": "grasp_offset_mm"},
    "insertion": {"tol_mm": "insertion_tol_mm", "tol_deg": "insertion_tol_deg"},
}

_INT_KEYS = {"seed", "model_points", "keypoints", "model_seed", "k", "train",
             "test", "max_episode_factor", "bin_a", "bin_b", "transfer_batch",
             "points_per_object"}
_STR_KEYS = {"version", "out"}


class ConfigFileError(ValueError):
    pass


def _getfloats(raw: str, n: int, where: str) -> list[float]:
    parts = raw.split()
    if len(parts) != n:
        raise ConfigFileError(f"{where}: expected {n} numbers")
    return [float(p) for p in parts]


def parse_campaign_config(path: str) -> tuple[CampaignConfig, str | None]:
    """Read and validate the INI campaign file; returns (config, out dir)."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(path)

    values: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigFileError(f"unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigFileError(f"unknown key {section}.{key}")
            values[section][key] = raw

    campaign = values.get("campaign", {})
    if campaign.get("version") != CONFIG_VERSION:
        raise ConfigFileError(
            f"campaign.version: expected {CONFIG_VERSION}, "
            f"got {campaign.get('version')!r}")

    def pick(section: str, key: str, default):
        raw = values.get(section, {}).get(key)
        if raw is None:
            return default
        where = f"{section}.{key}"
        try:
            if key in _STR_KEYS:
                return raw
            if key in _INT_KEYS:
                return int(raw)
            return float(raw)
        except ValueError as exc:
            raise ConfigFileError(f"{where}: {exc}") from exc

    defaults = CampaignConfig()

    bias_t = values.get("error_model", {}).get("bias_t_mm")
    bias_axis = values.get("error_model", {}).get("bias_axis")
    t = _getfloats(bias_t, 3, "error_model.bias_t_mm") if bias_t else [0.0, 0.0, 0.0]
    axis = _getfloats(bias_axis, 3, "error_model.bias_axis") if bias_axis else [0.0, 0.0, 1.0]
    angle = pick("error_model", "bias_angle_deg", 0.0)
    bias = Pose(rotation_about_axis(axis, angle), t) if angle or any(t) else Pose.identity()

    try:
        error_model = ErrorModel(
            sigma_t=pick("error_model", "sigma_t_mm", 0.0),
            sigma_r=pick("error_model", "sigma_r_deg", 0.0),
            p_flip=pick("error_model", "p_flip", 0.0),
            p_gross=pick("error_model", "p_gross", 0.0),
            bias=bias)
        disturbance = DisturbanceModel(
            p_move=pick("disturbance", "p_move", 0.0),
            move_sigma_t=pick("disturbance", "move_sigma_t_mm", 0.5),
            move_sigma_r=pick("disturbance", "move_sigma_r_deg", 1.0),
            p_drop=pick("disturbance", "p_drop", 0.0),
            p_pushout=pick("disturbance", "p_pushout", 0.0))
        observation = InHandObservationModel(
            obs_sigma_xy=pick("observation", "sigma_xy_mm", 0.0),
            obs_sigma_rz=pick("observation", "sigma_rz_deg", 0.0))
        thresholds = VerificationThresholds(
            adi_mm=pick("thresholds", "adi_mm", 2.0),
            angle_deg=pick("thresholds", "angle_deg", 15.0),
            flip_trigger_deg=pick("thresholds", "flip_trigger_deg", 90.0))
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from exc

    kwargs = {}
    for section, keys in _SCHEMA.items():
        for key, attr in keys.items():
            if attr is None:
                continue
            kwargs[attr] = pick(section, key, getattr(defaults, attr))
    kwargs["bin_extent"] = (pick("bins", "extent_x_mm", defaults.bin_extent[0]),
                            pick("bins", "extent_y_mm", defaults.bin_extent[1]))
    kwargs["seed"] = pick("campaign", "seed", 0)
    config = CampaignConfig(error_model=error_model, disturbance=disturbance,
                            observation=observation, thresholds=thresholds,
                            **kwargs)
    return config, values.get("campaign", {}).get("out")


def write_campaign_config(config: CampaignConfig, out: str | None, path: str) -> None:
    """Canonical re-serialization of the parsed config (all keys explicit)."""
    em, dm, om, th = (config.error_model, config.disturbance,
                      config.observation, config.thresholds)
    bias_t = " ".join(f"{v:.9g}" for v in em.bias.translation)
    # recover an axis-angle form for the bias rotation
    from scipy.spatial.transform import Rotation

    rotvec = Rotation.from_matrix(em.bias.rotation).as_rotvec()
    angle = float(np.degrees(np.linalg.norm(rotvec)))
    axis = rotvec / np.linalg.norm(rotvec) if angle > 0 else np.array([0.0, 0.0, 1.0])
    lines = [
        "[campaign]", f"version = {CONFIG_VERSION}", f"seed = {config.seed}",
        *([f"out = {out}"] if out else []),
        "", "[object]", f"radius_mm = {config.radius:.9g}",
        f"height_mm = {config.height:.9g}",
        f"model_points = {config.model_points}",
        f"keypoints = {config.model_keypoints}",
        f"model_seed = {config.model_seed}",
        "", "[error_model]", f"sigma_t_mm = {em.sigma_t:.9g}",
        f"sigma_r_deg = {em.sigma_r:.9g}", f"p_flip = {em.p_flip:.9g}",
        f"p_gross = {em.p_gross:.9g}", f"bias_t_mm = {bias_t}",
        f"bias_axis = {axis[0]:.9g} {axis[1]:.9g} {axis[2]:.9g}",
        f"bias_angle_deg = {angle:.9g}",
        "", "[disturbance]", f"p_move = {dm.p_move:.9g}",
        f"move_sigma_t_mm = {dm.move_sigma_t:.9g}",
        f"move_sigma_r_deg = {dm.move_sigma_r:.9g}",
        f"p_drop = {dm.p_drop:.9g}", f"p_pushout = {dm.p_pushout:.9g}",
        "", "[observation]", f"sigma_xy_mm = {om.obs_sigma_xy:.9g}",
        f"sigma_rz_deg = {om.obs_sigma_rz:.9g}",
        "", "[batch]", f"k = {config.batch_k}", f"tau_mm = {config.tau_mm:.9g}",
        f"min_overlap = {config.min_overlap:.9g}",
        f"nms_radius_mm = {config.nms_radius_mm:.9g}",
        f"feasibility_p = {config.feasibility_p:.9g}",
        "", "[thresholds]", f"adi_mm = {th.adi_mm:.9g}",
        f"angle_deg = {th.angle_deg:.9g}",
        f"flip_trigger_deg = {th.flip_trigger_deg:.9g}",
        "", "[targets]", f"train = {config.train_target}",
        f"test = {config.test_target}",
        f"max_episode_factor = {config.max_episode_factor}",
        "", "[bins]", f"bin_a = {config.bin_a}", f"bin_b = {config.bin_b}",
        f"transfer_batch = {config.transfer_batch}",
        f"extent_x_mm = {config.bin_extent[0]:.9g}",
        f"extent_y_mm = {config.bin_extent[1]:.9g}",
        "", "[render]", f"points_per_object = {config.points_per_object}",
        f"sensor_sigma_mm = {config.sensor_sigma:.9g}",
        f"dropout = {config.dropout:.9g}",
        "", "[grasp]", f"offset_mm = {config.grasp_offset_mm:.9g}",
        "", "[insertion]", f"tol_mm = {config.insertion_tol_mm:.9g}",
        f"tol_deg = {config.insertion_tol_deg:.9g}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _load_store_context(store_path: str):
    """Load store plus the sibling model and config written by `run`."""
    if not os.path.exists(store_path):
        raise FileNotFoundError(store_path)
    store = es.EpisodeStore.load(store_path)
    base = os.path.dirname(os.path.abspath(store_path))
    model_path = os.path.join(base, "model.txt")
    cfg_path = os.path.join(base, "campaign.cfg")
    model = load_model(model_path) if os.path.exists(model_path) else None
    config = parse_campaign_config(cfg_path)[0] if os.path.exists(cfg_path) else None
    return store, model, config


def cmd_run(args) -> int:
    try:
        config, cfg_out = parse_campaign_config(args.config)
    except FileNotFoundError:
        return _fail(EXIT_CONFIG, f"config not found: {args.config}")
    except ConfigFileError as exc:
        return _fail(EXIT_CONFIG, f"bad config: {exc}")

    if args.seed is not None:
        from dataclasses import replace as dc_replace

        config = dc_replace(config, seed=args.seed)
    out = args.out or cfg_out
    if not out:
        return _fail(EXIT_CONFIG, "bad config: campaign.out missing (or pass --out)")
    try:
        config.validate()
    except CampaignConfigError as exc:
        return _fail(EXIT_CONFIG, f"bad config: {exc}")

    store_path = os.path.join(out, "store.log")
    if os.path.exists(store_path):
        return _fail(EXIT_OVERWRITE, f"refusing to overwrite {store_path}")
    os.makedirs(out, exist_ok=True)

    store = es.EpisodeStore()
    store.attach(store_path)
    try:
        result = run_campaign(config, out_dir=out, store=store)
    finally:
        store.close()
    save_model(result.model, os.path.join(out, "model.txt"))
    write_campaign_config(config, None, os.path.join(out, "campaign.cfg"))

    insertion_rate = (result.insertion_successes / result.insertion_attempts
                      if result.insertion_attempts else 0.0)
    print(f"episodes={result.episodes} accepted={result.accepted} "
          f"discarded={result.discarded} acceptance_rate={result.acceptance_rate:.4f} "
          f"grasp_attempts={result.grasp_attempts} grasp_successes={result.grasp_successes} "
          f"insertion_rate={insertion_rate:.4f} store={store_path}")
    return EXIT_OK


def cmd_label(args) -> int:
    try:
        store, model, config = _load_store_context(args.store)
    except FileNotFoundError as exc:
        return _fail(EXIT_NOT_FOUND, f"not found: {exc}")
    except (es.StoreParseError, es.StoreIntegrityError, es.StoreSchemaError) as exc:
        return _fail(EXIT_INTEGRITY, f"store integrity: {exc}")
    if model is None:
        return _fail(EXIT_NOT_FOUND, "not found: model.txt next to the store")
    thresholds = config.thresholds if config else VerificationThresholds()
    accepted, discarded = count_labels(store, model, thresholds)
    print(f"accepted={accepted} discarded={discarded}")
    return EXIT_OK


def cmd_curve(args) -> int:
    try:
        store, model, config = _load_store_context(args.store)
    except FileNotFoundError as exc:
        return _fail(EXIT_NOT_FOUND, f"not found: {exc}")
    except (es.StoreParseError, es.StoreIntegrityError, es.StoreSchemaError) as exc:
        return _fail(EXIT_INTEGRITY, f"store integrity: {exc}")
    if model is None or config is None:
        return _fail(EXIT_NOT_FOUND, "not found: model.txt/campaign.cfg next to the store")
    try:
        checkpoints = [int(v) for v in args.checkpoints.split(",") if v != ""]
        seeds = [int(v) for v in args.seeds.split(",") if v != ""]
    except ValueError as exc:
        return _fail(EXIT_CONFIG, f"bad config: {exc}")
    if not checkpoints or not seeds:
        return _fail(EXIT_CONFIG, "bad config: empty checkpoints or seeds")

    rows = []
    for seed in seeds:
        curve = learning_curve(store, checkpoints, config.error_model, model,
                               config.thresholds, test_episodes=args.episodes,
                               seed=seed)
        rows.extend((n, recall, seed) for n, recall in curve)
    export_curve_csv(rows, args.out)
    print(f"rows={len(rows)} csv={args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        store, _, _ = _load_store_context(args.store)
    except FileNotFoundError as exc:
        return _fail(EXIT_NOT_FOUND, f"not found: {exc}")
    except (es.StoreParseError, es.StoreIntegrityError, es.StoreSchemaError) as exc:
        return _fail(EXIT_INTEGRITY, f"store integrity: {exc}")
    try:
        record = store.get(args.id)
    except KeyError:
        return _fail(EXIT_NOT_FOUND, f"not found: record {args.id}")

    if isinstance(record, es.TaskRecord):
        kids = store.children(record.id)
        print(f"task id={record.id} object={record.object_id} "
              f"network={record.network_type} clouds={len(kids)}")
        return EXIT_OK
    if isinstance(record, es.InHandRecord):
        chain = store.lineage(record.id)
    else:
        chain = [record]
        node = record
        while es.parent_id(node) is not None:
            node = store.get(es.parent_id(node))
            chain.append(node)
    for node in chain:
        print(_describe(node))
    return EXIT_OK


def _describe(record) -> str:
    if isinstance(record, es.TaskRecord):
        return f"task id={record.id} object={record.object_id} network={record.network_type}"
    if isinstance(record, es.CloudRecord):
        return (f"cloud id={record.id} task={record.task_id} "
                f"file={record.cloud_file} t={record.timestamp:g}")
    if isinstance(record, es.PoseEstRecord):
        t = record.pose.translation
        return (f"pose_est id={record.id} cloud={record.cloud_id} "
                f"t=({t[0]:.2f},{t[1]:.2f},{t[2]:.2f}) score={record.score:.4f}")
    if isinstance(record, es.GraspRecord):
        return (f"grasp id={record.id} pose_est={record.pose_est_id} "
                f"succeeded={record.succeeded}")
    if isinstance(record, es.InHandRecord):
        return f"inhand id={record.id} grasp={record.grasp_id}"
    return f"insertion id={record.id} inhand={record.inhand_id} succeeded={record.succeeded}"


def cmd_gen_model(args) -> int:
    if os.path.exists(args.out):
        return _fail(EXIT_OVERWRITE, f"refusing to overwrite {args.out}")
    try:
        model = sample_cylinder_model(args.radius, args.height, args.points,
                                      seed=args.seed, n_keypoints=args.keypoints,
                                      model_id=args.id)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, f"bad config: {exc}")
    save_model(model, args.out)
    print(f"model={model.id} points={len(model.surface_cloud)} "
          f"diameter={model.diameter:.3f} file={args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poseloop",
                                     description="bin-picking pose data engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a collection campaign from a config file")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override campaign seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("label", help="re-run labeling over a stored campaign")
    p.add_argument("store")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("curve", help="recall vs number of training samples")
    p.add_argument("store")
    p.add_argument("--checkpoints", default="0,1,10,20,200,500,1000")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--out", default="curve.csv")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("inspect", help="print a record's lineage")
    p.add_argument("store")
    p.add_argument("id", type=int)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gen-model", help="write a cylinder model file")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--height", type=float, required=True)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--keypoints", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_model)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
