"""Calibration run: three feature branches, two PnP solves, JSON outputs.

A branch failure never suppresses the other calibration; failures are
collected per branch and the caller decides the exit status.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import digest, dump_json, read_toml, resolve_table
from .errors import CalibError, ConfigError
from .events import FrequencyConfig, detect_led_keypoints, read_events
from .geometry import CameraIntrinsics
from .lidar import RansacParams, detect_cube, read_cloud
from .markers import detect_markers, get_dictionary, load_external_detections, read_image, match_to_target
from .pnp import aggregate_by_type, calibrate_event_lidar, calibrate_rgb_lidar, extrinsics_to_dict
from .target import FACES, TargetSpec, build_geometry

BRANCHES = ("event", "lidar", "rgb")
CALIBRATIONS = {"event_lidar": ("event", "lidar"), "rgb_lidar": ("rgb", "lidar")}
_KEYS = {"seed", "events", "cloud", "image", "detections", "output_dir", "target", "event_camera",
         "rgb_camera", "frequency", "ransac", "roi", "robust", "lidar_refine_band"}


@dataclass(frozen=True)
class PipelineConfig:
    cloud: Path
    target: TargetSpec
    event_K: CameraIntrinsics | None
    rgb_K: CameraIntrinsics | None
    events: Path | None = None
    image: Path | None = None
    detections: Path | None = None
    output_dir: Path = Path("calib")
    frequency: FrequencyConfig = FrequencyConfig()
    ransac: RansacParams = RansacParams()
    roi: tuple | None = None
    robust: bool = False
    lidar_refine_band: float = 3.0
    seed: int = 0
    source: dict = field(default_factory=dict, compare=False)

    def digest(self) -> str:
        return digest(self.to_dict())

    def to_dict(self) -> dict:
        def rel(p):
            return None if p is None else p.name

        return {
            "seed": self.seed,
            "events": rel(self.events),
            "cloud": rel(self.cloud),
            "image": rel(self.image),
            "detections": rel(self.detections),
            "target": self.target.to_dict(),
            "event_camera": None if self.event_K is None else self.event_K.to_dict(),
            "rgb_camera": None if self.rgb_K is None else self.rgb_K.to_dict(),
            "frequency": self.frequency.to_dict(),
            "ransac": self.ransac.to_dict(),
            "roi": None if self.roi is None else [list(map(float, self.roi[0])), list(map(float, self.roi[1]))],
            "robust": self.robust,
            "lidar_refine_band": self.lidar_refine_band,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=".", seed=None) -> "PipelineConfig":
        base = Path(base_dir)
        unknown = set(d) - _KEYS
        if unknown:
            raise ConfigError(f"pipeline: unknown keys {sorted(unknown)}")

        def path_of(key, required=False):
            if key not in d:
                if required:
                    raise ConfigError(f"pipeline: missing key '{key}'")
                return None
            p = Path(d[key])
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ConfigError(f"'{key}': file not found: {p}")
            return p

        seed = int(d.get("seed", 0)) if seed is None else int(seed)
        if "target" not in d:
            raise ConfigError("pipeline: missing key 'target'")
        target = TargetSpec.from_dict(resolve_table(d["target"], base, "target"))
        event_K = rgb_K = None
        if "event_camera" in d:
            event_K = CameraIntrinsics.from_dict(resolve_table(d["event_camera"], base, "event_camera"))
        if "rgb_camera" in d:
            rgb_K = CameraIntrinsics.from_dict(resolve_table(d["rgb_camera"], base, "rgb_camera"))
        roi = None
        if "roi" in d:
            try:
                roi = (tuple(map(float, d["roi"]["min"])), tuple(map(float, d["roi"]["max"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError("'roi' needs min = [x, y, z] and max = [x, y, z]") from exc
        out = Path(d.get("output_dir", "calib"))
        return cls(
            cloud=path_of("cloud", required=True),
            target=target,
            event_K=event_K,
            rgb_K=rgb_K,
            events=path_of("events"),
            image=path_of("image"),
            detections=path_of("detections"),
            output_dir=out if out.is_absolute() else base / out,
            frequency=FrequencyConfig.from_dict(d.get("frequency", {})),
            ransac=RansacParams.from_dict(d.get("ransac", {}), seed=seed),
            roi=roi,
            robust=bool(d.get("robust", False)),
            lidar_refine_band=float(d.get("lidar_refine_band", 3.0)),
            seed=seed,
            source=d,
        )

    @classmethod
    def from_toml(cls, path, seed=None) -> "PipelineConfig":
        path = Path(path)
        return cls.from_dict(read_toml(path), path.parent, seed)


@dataclass
class CalibrationRun:
    config: PipelineConfig
    features: dict = field(default_factory=dict)  # branch -> detection object
    diagnostics: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)  # calibration name -> (Extrinsics, stats, corrs)
    errors: dict = field(default_factory=dict)  # branch or calibration name -> message

    @property
    def ok(self) -> bool:
        return not self.errors


def _describe(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def _round(a, nd=9):
    return np.round(np.asarray(a, dtype=float), nd).tolist()


def _event_branch(cfg: PipelineConfig):
    if cfg.events is None:
        raise ConfigError("no events file configured")
    if cfg.event_K is None:
        raise ConfigError("no event_camera intrinsics configured")
    events = read_events(cfg.events)
    det = detect_led_keypoints(events, cfg.event_K.width, cfg.event_K.height, cfg.target, cfg.frequency)
    sel = det.selection
    diag = {
        "n_events": int(len(events)),
        "selected_map": sel.index,
        "kept_maps": list(sel.kept),
        "bbox": sel.boxes[sel.index].to_list(),
        "leds": [
            {"corner": k.corner_index, "frequency_hz": round(k.frequency, 6), "center_px": _round(k.center, 6),
             "n_pixels": k.n_pixels, "degraded": k.degraded}
            for k in det.keypoints
        ],
        "missing_leds": list(det.missing),
    }
    return det, diag


def _lidar_branch(cfg: PipelineConfig):
    cloud = read_cloud(cfg.cloud)
    cube = detect_cube(cloud, build_geometry(cfg.target), cfg.ransac, cfg.roi, cfg.lidar_refine_band)
    diag = {
        "n_points": len(cloud),
        "planes": {name: {"normal": _round(p.normal), "offset_m": round(float(p.offset), 9)}
                   for name, p in zip(FACES, cube.planes)},
        "inlier_counts": dict(zip(FACES, (int(c) for c in cube.inlier_counts))),
        "face_assignment": dict(cube.face_assignment),
        "E0_m": _round(cube.corners[0]),
    }
    return cube, diag


def _rgb_branch(cfg: PipelineConfig):
    if cfg.rgb_K is None:
        raise ConfigError("no rgb_camera intrinsics configured")
    dictionary = get_dictionary(cfg.target.dictionary_name)
    if cfg.detections is not None:
        dets, source = load_external_detections(cfg.detections, dictionary), "detections"
    elif cfg.image is not None:
        dets, source = detect_markers(read_image(cfg.image), dictionary), "image"
    else:
        raise ConfigError("neither image nor detections configured")
    matched = match_to_target(dets, cfg.target)
    diag = {"source": source, "marker_ids": sorted(int(d.id) for d in dets), "n_corners": len(matched)}
    return matched, diag


_BRANCH_FUNCS = {"event": _event_branch, "lidar": _lidar_branch, "rgb": _rgb_branch}


def run_calibration(cfg: PipelineConfig) -> CalibrationRun:
    run = CalibrationRun(cfg)
    for name in BRANCHES:
        try:
            run.features[name], run.diagnostics[name] = _BRANCH_FUNCS[name](cfg)
        except (CalibError, OSError, ValueError) as exc:
            run.errors[name] = _describe(exc)

    for calib, (cam, _) in CALIBRATIONS.items():
        if cam not in run.features or "lidar" not in run.features:
            continue
        cube = run.features["lidar"]
        try:
            if calib == "event_lidar":
                ext, stats = calibrate_event_lidar(cube.corners, run.features["event"].keypoints,
                                                   cfg.event_K, cfg.robust)
                labels = {f"E{k.corner_index}": (cube.corners[k.corner_index], k.center)
                          for k in run.features["event"].keypoints}
            else:
                matched = run.features["rgb"]
                ext, stats = calibrate_rgb_lidar(cube.aruco_corners, matched, cfg.rgb_K, cfg.robust)
                labels = {f"A{i}": (cube.aruco_corners[i], p) for i, p in matched.items()}
            run.results[calib] = (ext, stats, labels)
        except CalibError as exc:
            run.errors[calib] = _describe(exc)
    return run


def calibration_json(run: CalibrationRun, calib: str) -> dict:
    ext, stats, labels = run.results[calib]
    cfg = run.config
    out = extrinsics_to_dict(ext, stats, cfg.digest(), cfg.seed)
    K = cfg.event_K if calib == "event_lidar" else cfg.rgb_K
    out["camera"] = K.to_dict()
    out["correspondences"] = [
        {"label": lbl, "point3d_m": _round(labels[lbl][0]), "pixel": _round(labels[lbl][1])}
        for lbl, _ in stats.per_point
    ]
    return out


def report_json(run: CalibrationRun) -> dict:
    cfg = run.config
    entries = [(calib.split("_")[0], stats) for calib, (_, stats, _) in sorted(run.results.items())]
    return {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "branches": {b: run.diagnostics.get(b) for b in BRANCHES},
        "calibrations": {
            calib: {"E_mean_px": run.results[calib][1].mean, "E_max_px": run.results[calib][1].max,
                    "n": run.results[calib][1].n} if calib in run.results else None
            for calib in CALIBRATIONS
        },
        "E_mean_by_type": aggregate_by_type(entries),
        "errors": dict(sorted(run.errors.items())),
    }


def write_outputs(run: CalibrationRun, out_dir=None) -> dict:
    """Write per-calibration JSON plus the combined report; returns paths."""
    out = Path(out_dir) if out_dir is not None else run.config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for calib in CALIBRATIONS:
        if calib in run.results:
            paths[calib] = out / f"{calib}.json"
            dump_json(paths[calib], calibration_json(run, calib))
    paths["report"] = out / "report.json"
    dump_json(paths["report"], report_json(run))
    return paths
