"""``calibcube`` command line: simulate, calibrate, evaluate, report.

Exit codes: 0 ok, 2 config/schema error, 3 I/O error, 4 a pipeline branch
failed (outputs of the branches that succeeded are still written).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import dump_json, load_json
from .errors import CalibError, ConfigError, InvalidSpec, ParseError
from .events import read_events
from .geometry import CameraIntrinsics, Pose, load_intrinsics, pose_errors
from .lidar import read_cloud
from .markers import read_image
from .pipeline import PipelineConfig, run_calibration, write_outputs
from .pnp import CorrespondenceSet, reprojection_stats
from .report import event_frame, write_overlay
from .simulator import SceneConfig, write_scene

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_BRANCH = 0, 2, 3, 4


def _config_error(msg) -> int:
    print(f"config error: {msg}", file=sys.stderr)
    return EXIT_CONFIG


def _io_error(msg) -> int:
    print(f"i/o error: {msg}", file=sys.stderr)
    return EXIT_IO


# ---------------------------------------------------------------------------


def cmd_simulate(config_path, out_dir, seed=None) -> int:
    try:
        cfg = SceneConfig.from_toml(config_path)
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
    except (ConfigError, InvalidSpec) as exc:
        return _config_error(exc)
    try:
        manifest = write_scene(cfg, out_dir)
    except OSError as exc:
        return _io_error(exc)
    except CalibError as exc:
        return _config_error(exc)
    print(f"wrote {len(manifest['files'])} files + manifest to {out_dir} (digest {manifest['config_digest'][:12]})")
    return EXIT_OK


def _overlays(run, out: Path) -> dict:
    cfg = run.config
    cube = run.features.get("lidar")
    if cube is None:
        return {}
    cloud = read_cloud(cfg.cloud).points
    written = {}
    if "event_lidar" in run.results:
        ext = run.results["event_lidar"][0]
        K = cfg.event_K
        raster = event_frame(read_events(cfg.events), K.width, K.height)
        written["event_lidar"] = out / "event_lidar.svg"
        write_overlay(written["event_lidar"], raster, cloud, ext.pose, K, "event-lidar")
    if "rgb_lidar" in run.results:
        ext = run.results["rgb_lidar"][0]
        K = cfg.rgb_K
        raster = read_image(cfg.image) if cfg.image is not None else np.full((K.height, K.width), 255, np.uint8)
        written["rgb_lidar"] = out / "rgb_lidar.svg"
        write_overlay(written["rgb_lidar"], raster, cloud, ext.pose, K, "rgb-lidar")
    return written


def cmd_calibrate(config_path, out_dir=None, seed=None) -> int:
    try:
        cfg = PipelineConfig.from_toml(config_path, seed=seed)
    except (ConfigError, InvalidSpec) as exc:
        return _config_error(exc)
    run = run_calibration(cfg)
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    try:
        paths = write_outputs(run, out)
        paths.update(_overlays(run, out))
    except OSError as exc:
        return _io_error(exc)
    for calib, (_, stats, _) in sorted(run.results.items()):
        print(f"{calib}: E_mean {stats.mean:.4f} px over {stats.n} points")
    for name, msg in sorted(run.errors.items()):
        print(f"branch {name} failed: {msg}", file=sys.stderr)
    return EXIT_OK if run.ok else EXIT_BRANCH


_GT_KEYS = {"event": "gt_pose_lidar_to_event", "rgb": "gt_pose_lidar_to_rgb"}


def evaluate(calib: dict, gt: dict) -> dict:
    """Pose and reprojection errors of one calibration JSON against ground truth."""
    for key in ("source", "target", "rotation_quaternion_wxyz", "translation_m", "reprojection"):
        if key not in calib:
            raise ConfigError(f"calibration JSON lacks '{key}'")
    if calib["source"] != "lidar" or calib["target"] not in _GT_KEYS:
        raise ConfigError(f"unknown sensor pair {calib['source']!r} -> {calib['target']!r}")
    key = _GT_KEYS[calib["target"]]
    if key not in gt:
        raise ConfigError(f"ground truth has no '{key}' for sensor pair lidar -> {calib['target']}")
    est = Pose.from_dict(calib)
    ref = Pose.from_dict(gt[key])
    rot, trans = pose_errors(est, ref)
    out = {
        "source": calib["source"],
        "target": calib["target"],
        "rotation_error_deg": float(np.degrees(rot)),
        "translation_error_m": trans,
        "E_mean_px": float(calib["reprojection"]["mean_px"]),
    }
    corr = calib.get("correspondences")
    cam = calib.get("camera")
    if corr and cam:
        cs = CorrespondenceSet([c["point3d_m"] for c in corr], [c["pixel"] for c in corr],
                               [c["label"] for c in corr], CameraIntrinsics.from_dict(cam))
        gt_mean = reprojection_stats(cs, ref).mean
        out["E_mean_gt_pose_px"] = gt_mean
        out["E_mean_delta_px"] = out["E_mean_px"] - gt_mean
    return out


def cmd_evaluate(calib_json, groundtruth_json, out_path=None) -> int:
    try:
        result = evaluate(load_json(calib_json), load_json(groundtruth_json))
    except (ConfigError, TypeError, ValueError, KeyError) as exc:
        return _config_error(exc)
    for k, v in result.items():
        print(f"{k}: {v}")
    out = Path(out_path) if out_path else Path(calib_json).with_name(Path(calib_json).stem + "_eval.json")
    try:
        dump_json(out, result)
    except OSError as exc:
        return _io_error(exc)
    return EXIT_OK


def cmd_report(calib_json, cloud_path, image_or_events, out_svg, intrinsics=None) -> int:
    try:
        calib = load_json(calib_json)
        pose = Pose.from_dict(calib)
        if intrinsics is not None:
            K = load_intrinsics(intrinsics)
        elif "camera" in calib:
            K = CameraIntrinsics.from_dict(calib["camera"])
        else:
            raise ConfigError("no camera intrinsics in calibration JSON; pass --intrinsics")
    except (ConfigError, KeyError, TypeError) as exc:
        return _config_error(exc)
    try:
        cloud = read_cloud(cloud_path).points
        src = Path(image_or_events)
        if src.suffix.lower() in (".evb", ".csv"):
            raster = event_frame(read_events(src), K.width, K.height)
        else:
            raster = read_image(src)
        if len(cloud) == 0:
            print("warning: empty cloud, writing image only", file=sys.stderr)
        n = write_overlay(out_svg, raster, cloud, pose, K, f"{calib.get('source')}-{calib.get('target')}")
    except (OSError, ParseError) as exc:
        return _io_error(exc)
    print(f"wrote {out_svg} ({n} points)")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calibcube", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic scene")
    s.add_argument("--config", required=True, help="scene TOML")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)

    c = sub.add_parser("calibrate", help="run both calibrations")
    c.add_argument("--config", required=True, help="pipeline TOML")
    c.add_argument("--out", help="output directory (default: output_dir from the config)")
    c.add_argument("--seed", type=int)

    e = sub.add_parser("evaluate", help="compare a calibration with ground truth")
    e.add_argument("--calib", required=True)
    e.add_argument("--groundtruth", required=True)
    e.add_argument("--out")

    r = sub.add_parser("report", help="SVG overlay of the projected cloud")
    r.add_argument("--calib", required=True)
    r.add_argument("--cloud", required=True)
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--events")
    r.add_argument("--intrinsics", help="camera TOML (default: taken from the calibration JSON)")
    r.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.seed)
    if args.command == "calibrate":
        return cmd_calibrate(args.config, args.out, args.seed)
    if args.command == "evaluate":
        return cmd_evaluate(args.calib, args.groundtruth, args.out)
    return cmd_report(args.calib, args.cloud, args.image or args.events, args.out, args.intrinsics)


if __name__ == "__main__":
    sys.exit(main())
