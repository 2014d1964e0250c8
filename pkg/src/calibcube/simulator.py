"""Synthetic scenes with known sensor poses.

Frames: the LiDAR frame is the rig reference (x forward, y left, z up).
``gt_pose_lidar_to_event`` / ``gt_pose_lidar_to_rgb`` map LiDAR points into
the camera frames (x right, y down, z forward) and ``target_pose`` maps
target points into the LiDAR frame.

Each sensor draws from its own RNG stream ``default_rng([seed, tag])`` so
the three generators are independent of each other and of call order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import digest, dump_json, file_sha256, read_toml, resolve_table, to_plain, write_toml
from .errors import ConfigError, LedOutOfFrame, MarkerOutOfFrame
from .events import make_events, sort_events, write_events
from .geometry import CameraIntrinsics, Pose, compose, pixels_to_normalized, project, undistort_normalized
from .lidar import PointCloud, write_ply
from .markers import GRID, MarkerDetection, detections_to_json, get_dictionary, write_pgm
from .target import FACES, TargetSpec, build_geometry

TAG_EVENTS, TAG_LIDAR, TAG_RGB = 1, 2, 3

SCENE_FILES = {
    "events": "events.evb",
    "cloud": "cloud.ply",
    "image": "image.pgm",
    "detections": "detections.json",
    "groundtruth": "groundtruth.json",
    "pipeline": "pipeline.toml",
}

# camera axes expressed in the LiDAR frame: x_cam = -y_lidar, y_cam = -z_lidar, z_cam = x_lidar
LIDAR_TO_CAMERA_AXES = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def look_at_target_pose(position, roll_deg: float = 0.0) -> Pose:
    """Target -> LiDAR pose with corner E0 at ``position`` facing the origin.

    The cube's body diagonal points away from the sensor and the "top" face
    looks up, so all three instrumented faces are visible from the origin.
    """
    c = np.asarray(position, dtype=float)
    w = c / np.linalg.norm(c)
    up = np.array([0.0, 0.0, 1.0])
    e2 = up - (up @ w) * w
    e2 /= np.linalg.norm(e2)
    e1 = np.cross(e2, w)
    r = np.radians(roll_deg)
    axes = []
    for theta in (np.pi / 6, 5 * np.pi / 6, -np.pi / 2):
        a = theta + r
        axes.append(w / np.sqrt(3) + np.sqrt(2.0 / 3.0) * (np.cos(a) * e1 + np.sin(a) * e2))
    R = np.column_stack(axes)
    if np.linalg.det(R) < 0:
        R = R[:, [1, 0, 2]]
    return Pose.from_matrix(R, c)


def camera_pose(offset, rotvec_deg=(0.0, 0.0, 0.0)) -> Pose:
    """LiDAR -> camera pose for a camera at ``offset`` (LiDAR frame), small tilt."""
    tilt = Pose.from_rotvec(np.radians(rotvec_deg)).R
    R = tilt @ LIDAR_TO_CAMERA_AXES
    return Pose.from_matrix(R, -R @ np.asarray(offset, dtype=float))


@dataclass(frozen=True)
class LedRenderModel:
    footprint_radius: float = 4.0  # px
    contrast_threshold: float = 0.5  # log-intensity units
    on_level: float = 1.0
    off_level: float = 0.3

    def __post_init__(self):
        if not self.footprint_radius > 0:
            raise ConfigError("footprint_radius must be positive")
        if not self.contrast_threshold > 0:
            raise ConfigError("contrast_threshold must be positive")
        if not self.on_level - self.off_level > self.contrast_threshold:
            raise ConfigError("on_level - off_level must exceed the contrast threshold")

    @property
    def events_per_edge(self) -> int:
        return int((self.on_level - self.off_level) // self.contrast_threshold)

    def to_dict(self) -> dict:
        return {
            "footprint_radius_px": self.footprint_radius,
            "contrast_threshold": self.contrast_threshold,
            "on_level": self.on_level,
            "off_level": self.off_level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LedRenderModel":
        keys = {"footprint_radius_px": "footprint_radius", "contrast_threshold": "contrast_threshold",
                "on_level": "on_level", "off_level": "off_level"}
        unknown = set(d) - set(keys)
        if unknown:
            raise ConfigError(f"led: unknown keys {sorted(unknown)}")
        return cls(**{keys[k]: float(v) for k, v in d.items()})


DEFAULT_EVENT_K = CameraIntrinsics(fx=500.0, fy=500.0, cx=319.5, cy=239.5, width=640, height=480)
DEFAULT_RGB_K = CameraIntrinsics(fx=1400.0, fy=1400.0, cx=799.5, cy=599.5, width=1600, height=1200)


@dataclass(frozen=True)
class SceneConfig:
    target: TargetSpec = field(default_factory=TargetSpec)
    target_pose: Pose = field(default_factory=lambda: look_at_target_pose((2.0, 0.0, 0.1)))
    gt_pose_lidar_to_event: Pose = field(
        default_factory=lambda: camera_pose((0.05, 0.10, -0.08), (1.0, -2.0, 0.5)))
    gt_pose_lidar_to_rgb: Pose = field(
        default_factory=lambda: camera_pose((0.05, -0.12, -0.06), (-1.5, 1.0, -0.5)))
    event_K: CameraIntrinsics = DEFAULT_EVENT_K
    rgb_K: CameraIntrinsics = DEFAULT_RGB_K
    led: LedRenderModel = field(default_factory=LedRenderModel)
    duration: float = 4.0  # s; 10 segments then hold 10 periods of a 25 Hz LED
    lidar_noise_sigma: float = 0.0  # m
    lidar_outlier_fraction: float = 0.0
    pixel_noise_sigma: float = 0.0  # px, ground-truth detections only
    event_jitter_sigma: float = 0.0  # us
    noise_event_rate: float = 0.0  # events/s over the whole frame
    points_per_face: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not 0.0 <= self.lidar_outlier_fraction <= 1.0:
            raise ConfigError("lidar_outlier_fraction must lie in [0, 1]")
        for name in ("lidar_noise_sigma", "pixel_noise_sigma", "event_jitter_sigma", "noise_event_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.points_per_face < 3:
            raise ConfigError("points_per_face must be at least 3")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def rng(self, tag: int) -> np.random.Generator:
        return np.random.default_rng([int(self.seed), tag])

    @property
    def target_to_event(self) -> Pose:
        return compose(self.gt_pose_lidar_to_event, self.target_pose)

    @property
    def target_to_rgb(self) -> Pose:
        return compose(self.gt_pose_lidar_to_rgb, self.target_pose)

    def to_dict(self) -> dict:
        return {
            "target": self.target.to_dict(),
            "target_pose": self.target_pose.to_dict(),
            "gt_pose_lidar_to_event": self.gt_pose_lidar_to_event.to_dict(),
            "gt_pose_lidar_to_rgb": self.gt_pose_lidar_to_rgb.to_dict(),
            "event_camera": self.event_K.to_dict(),
            "rgb_camera": self.rgb_K.to_dict(),
            "led": self.led.to_dict(),
            "duration_s": self.duration,
            "lidar_noise_sigma_m": self.lidar_noise_sigma,
            "lidar_outlier_fraction": self.lidar_outlier_fraction,
            "pixel_noise_sigma_px": self.pixel_noise_sigma,
            "event_jitter_sigma_us": self.event_jitter_sigma,
            "noise_event_rate_hz": self.noise_event_rate,
            "points_per_face": self.points_per_face,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "SceneConfig":
        base = Path(base_dir)
        scalars = {
            "duration_s": ("duration", float),
            "lidar_noise_sigma_m": ("lidar_noise_sigma", float),
            "lidar_outlier_fraction": ("lidar_outlier_fraction", float),
            "pixel_noise_sigma_px": ("pixel_noise_sigma", float),
            "event_jitter_sigma_us": ("event_jitter_sigma", float),
            "noise_event_rate_hz": ("noise_event_rate", float),
            "points_per_face": ("points_per_face", int),
            "seed": ("seed", int),
        }
        tables = ("target", "target_pose", "gt_pose_lidar_to_event", "gt_pose_lidar_to_rgb",
                  "event_camera", "rgb_camera", "led")
        unknown = set(d) - set(scalars) - set(tables)
        if unknown:
            raise ConfigError(f"scene: unknown keys {sorted(unknown)}")
        kw = {}
        for key, (attr, conv) in scalars.items():
            if key in d:
                try:
                    kw[attr] = conv(d[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"scene: bad value for '{key}': {d[key]!r}") from exc
        if "target" in d:
            kw["target"] = TargetSpec.from_dict(resolve_table(d["target"], base, "target"))
        for key in ("target_pose", "gt_pose_lidar_to_event", "gt_pose_lidar_to_rgb"):
            if key in d:
                kw[key] = Pose.from_dict(resolve_table(d[key], base, key))
        if "event_camera" in d:
            kw["event_K"] = CameraIntrinsics.from_dict(resolve_table(d["event_camera"], base, "event_camera"))
        if "rgb_camera" in d:
            kw["rgb_K"] = CameraIntrinsics.from_dict(resolve_table(d["rgb_camera"], base, "rgb_camera"))
        if "led" in d:
            kw["led"] = LedRenderModel.from_dict(resolve_table(d["led"], base, "led"))
        return cls(**kw)

    @classmethod
    def from_toml(cls, path) -> "SceneConfig":
        path = Path(path)
        return cls.from_dict(read_toml(path), path.parent)

    def digest(self) -> str:
        return digest(self.to_dict())


def realistic_scene(seed: int, **overrides) -> SceneConfig:
    """Randomised rig and target placement with moderate sensor noise."""
    rng = np.random.default_rng([int(seed), 0])
    position = np.array([rng.uniform(1.7, 2.4), rng.uniform(-0.25, 0.25), rng.uniform(-0.05, 0.25)])
    target_pose = look_at_target_pose(position, rng.uniform(-8.0, 8.0))
    ev = camera_pose(rng.uniform([-0.05, 0.05, -0.12], [0.10, 0.15, -0.04]), rng.uniform(-3.0, 3.0, 3))
    rgb = camera_pose(rng.uniform([-0.05, -0.15, -0.12], [0.10, -0.05, -0.04]), rng.uniform(-3.0, 3.0, 3))
    params = dict(
        target_pose=target_pose,
        gt_pose_lidar_to_event=ev,
        gt_pose_lidar_to_rgb=rgb,
        event_jitter_sigma=100.0,
        noise_event_rate=20000.0,
        lidar_noise_sigma=0.01,
        lidar_outlier_fraction=0.10,
        pixel_noise_sigma=0.5,
        seed=int(seed),
    )
    params.update(overrides)
    return SceneConfig(**params)


# ---------------------------------------------------------------------------
# event camera


def led_footprints(cfg: SceneConfig, led: LedRenderModel | None = None) -> list:
    """Projected LED centres and the integer pixels inside each footprint."""
    led = led or cfg.led
    geo = build_geometry(cfg.target)
    centers = project(geo.corners, cfg.target_to_event, cfg.event_K)
    K = cfg.event_K
    r = led.footprint_radius
    out = []
    for i, c in enumerate(centers):
        if not K.contains(c, margin=r):
            raise LedOutOfFrame(i)
        x0, x1 = int(np.ceil(c[0] - r)), int(np.floor(c[0] + r))
        y0, y1 = int(np.ceil(c[1] - r)), int(np.floor(c[1] + r))
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        inside = (xs - c[0]) ** 2 + (ys - c[1]) ** 2 <= r * r
        out.append((c, np.column_stack([xs[inside], ys[inside]])))
    return out


def led_edges(frequency: float, phase: float, duration: float):
    """Times (s) and polarities of a 50% duty square wave in [0, duration).

    The LED is on while ``frac(f t + phase) < 0.5``.
    """
    k0 = int(np.floor(phase * 2.0)) + 1
    k1 = int(np.ceil((frequency * duration + phase) * 2.0))
    k = np.arange(k0, k1)
    t = (k / 2.0 - phase) / frequency
    keep = (t >= 0.0) & (t < duration)
    k, t = k[keep], t[keep]
    pol = np.where(k % 2 == 0, 1, -1).astype(np.int8)  # integer crossing: off -> on
    return t, pol


def simulate_events(cfg: SceneConfig, led: LedRenderModel | None = None, frequencies=None) -> np.ndarray:
    """Event stream of the blinking LEDs plus background noise, sorted by time.

    ``frequencies`` overrides the target's nominal LED frequencies (entries
    may be ``None`` to leave that LED dark).
    """
    led = led or cfg.led
    rng = cfg.rng(TAG_EVENTS)
    freqs = list(cfg.target.led_frequencies) if frequencies is None else list(frequencies)
    phases = rng.random(len(freqs))
    footprints = led_footprints(cfg, led)
    per_edge = led.events_per_edge
    xs, ys, ts, ps = [], [], [], []
    for (_, pix), f, phase in zip(footprints, freqs, phases):
        if f is None or f <= 0:
            continue
        t_edge, p_edge = led_edges(float(f), float(phase), cfg.duration)
        t_us = np.repeat(t_edge * 1e6, per_edge)
        p = np.repeat(p_edge, per_edge)
        n = len(t_us)
        for x, y in pix:
            xs.append(np.full(n, x))
            ys.append(np.full(n, y))
            ts.append(t_us)
            ps.append(p)
    t = np.concatenate(ts) if ts else np.zeros(0)
    x = np.concatenate(xs) if xs else np.zeros(0, dtype=int)
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=int)
    p = np.concatenate(ps) if ps else np.zeros(0, dtype=np.int8)
    if cfg.event_jitter_sigma > 0:
        t = t + rng.normal(0.0, cfg.event_jitter_sigma, len(t))

    n_noise = int(rng.poisson(cfg.noise_event_rate * cfg.duration)) if cfg.noise_event_rate > 0 else 0
    if n_noise:
        K = cfg.event_K
        x = np.concatenate([x, rng.integers(0, K.width, n_noise)])
        y = np.concatenate([y, rng.integers(0, K.height, n_noise)])
        t = np.concatenate([t, rng.random(n_noise) * cfg.duration * 1e6])
        p = np.concatenate([p, np.where(rng.random(n_noise) < 0.5, 1, -1).astype(np.int8)])

    t_int = np.clip(np.rint(t), 0, cfg.duration * 1e6 - 1).astype(np.uint64)
    return sort_events(make_events(x, y, t_int, p))


# ---------------------------------------------------------------------------
# LiDAR


def face_points(cfg: SceneConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform samples on the visible faces (target frame) and their face index."""
    geo = build_geometry(cfg.target)
    L = cfg.target.edge_length
    pts, labels = [], []
    for f, frame in enumerate(geo.face_frames):
        ab = rng.random((cfg.points_per_face, 2)) * L
        pts.append(frame.origin + ab[:, :1] * frame.u + ab[:, 1:] * frame.v)
        labels.append(np.full(cfg.points_per_face, f))
    return np.concatenate(pts), np.concatenate(labels)


def simulate_cloud(cfg: SceneConfig, return_labels: bool = False):
    """LiDAR-frame cloud: noisy face samples followed by uniform outliers.

    Outliers number ``round(fraction * face points)`` and are drawn in the
    face points' bounding box scaled 2x about its centre.  With
    ``return_labels`` the face index per point is returned too (-1 for
    outliers).
    """
    rng = cfg.rng(TAG_LIDAR)
    pts_t, labels = face_points(cfg, rng)
    pts = cfg.target_pose.transform(pts_t)
    if cfg.lidar_noise_sigma > 0:
        pts = pts + rng.normal(0.0, cfg.lidar_noise_sigma, pts.shape)
    n_out = int(round(cfg.lidar_outlier_fraction * len(pts)))
    if n_out:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        mid, half = (lo + hi) / 2.0, (hi - lo)
        out = mid + (rng.random((n_out, 3)) - 0.5) * 2.0 * half
        pts = np.concatenate([pts, out])
        labels = np.concatenate([labels, np.full(n_out, -1)])
    cloud = PointCloud(pts)
    return (cloud, labels) if return_labels else cloud


# ---------------------------------------------------------------------------
# RGB camera


def _render_marker(img, marker_id, pose: Pose, K: CameraIntrinsics, frame, tl, side, dictionary, bbox):
    """Ray-cast one marker of a face into ``img`` (nearest-neighbour)."""
    x0, y0, x1, y1 = bbox
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    uv = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
    xy = pixels_to_normalized(uv, K)
    if K.has_distortion:
        xy = undistort_normalized(xy, K.dist)
    d = np.column_stack([xy, np.ones(len(xy))])
    R = pose.R
    o = pose.transform(tl)
    u, v = R @ frame.u, R @ frame.v
    n = np.cross(u, v)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (o @ n) / denom
    X = s[:, None] * d - o
    cell = GRID / side
    gx = (X @ u) * cell
    gy = (X @ v) * cell
    inside = (s > 0) & (gx >= 0) & (gx < GRID) & (gy >= 0) & (gy < GRID)
    grid = dictionary.grid(marker_id)
    gxi = np.clip(np.floor(gx[inside]).astype(int), 0, GRID - 1)
    gyi = np.clip(np.floor(gy[inside]).astype(int), 0, GRID - 1)
    vals = np.where(grid[gyi, gxi] == 1, 255, 0).astype(np.uint8)
    img[ys.ravel()[inside], xs.ravel()[inside]] = vals


def simulate_rgb(cfg: SceneConfig):
    """Clean rendered image plus ground-truth detections (optionally noisy)."""
    spec = cfg.target
    geo = build_geometry(spec)
    K = cfg.rgb_K
    pose = cfg.target_to_rgb
    dictionary = get_dictionary(spec.dictionary_name)
    uv = project(geo.aruco_corners, pose, K)
    img = np.full((K.height, K.width), 255, dtype=np.uint8)
    rng = cfg.rng(TAG_RGB)
    truth = []
    for f, face in enumerate(FACES):
        frame = geo.face_frames[f]
        for k, marker_id in enumerate(spec.marker_ids[face]):
            idx = spec.corner_indices(marker_id)
            quad = uv[idx]
            if not np.all(K.contains(quad)):
                raise MarkerOutOfFrame(marker_id)
            x0, y0 = np.floor(quad.min(axis=0)).astype(int) - 1
            x1, y1 = np.ceil(quad.max(axis=0)).astype(int) + 1
            bbox = (max(x0, 0), max(y0, 0), min(x1, K.width - 1), min(y1, K.height - 1))
            _render_marker(img, marker_id, pose, K, frame, geo.aruco_corners[idx[0]], spec.marker_side,
                           dictionary, bbox)
            truth.append((marker_id, quad))
    noisy = []
    for marker_id, quad in truth:
        if cfg.pixel_noise_sigma > 0:
            quad = quad + rng.normal(0.0, cfg.pixel_noise_sigma, quad.shape)
        noisy.append(MarkerDetection(int(marker_id), np.array(quad)))
    return img, noisy


# ---------------------------------------------------------------------------
# scene files


def groundtruth(cfg: SceneConfig) -> dict:
    geo = build_geometry(cfg.target)
    return {
        "gt_pose_lidar_to_event": cfg.gt_pose_lidar_to_event.to_dict(),
        "gt_pose_lidar_to_rgb": cfg.gt_pose_lidar_to_rgb.to_dict(),
        "target_pose_in_lidar": cfg.target_pose.to_dict(),
        "led_corners_lidar_m": cfg.target_pose.transform(geo.corners),
        "led_pixels_event": project(geo.corners, cfg.target_to_event, cfg.event_K),
        "led_frequencies_hz": list(cfg.target.led_frequencies),
        "aruco_corners_lidar_m": cfg.target_pose.transform(geo.aruco_corners),
        "aruco_pixels_rgb": project(geo.aruco_corners, cfg.target_to_rgb, cfg.rgb_K),
        "event_camera": cfg.event_K.to_dict(),
        "rgb_camera": cfg.rgb_K.to_dict(),
        "config_digest": cfg.digest(),
        "seed": int(cfg.seed),
    }


def pipeline_table(cfg: SceneConfig) -> dict:
    """Calibration config pointing at the files written by :func:`write_scene`."""
    return {
        "seed": int(cfg.seed),
        "events": SCENE_FILES["events"],
        "cloud": SCENE_FILES["cloud"],
        "image": SCENE_FILES["image"],
        "output_dir": "calib",
        "target": cfg.target.to_dict(),
        "event_camera": cfg.event_K.to_dict(),
        "rgb_camera": cfg.rgb_K.to_dict(),
    }


def write_scene(cfg: SceneConfig, out_dir) -> dict:
    """Write every sensor stream plus ground truth; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in SCENE_FILES.items()}
    write_events(paths["events"], simulate_events(cfg))
    write_ply(paths["cloud"], simulate_cloud(cfg))
    img, dets = simulate_rgb(cfg)
    write_pgm(paths["image"], img)
    dump_json(paths["detections"], detections_to_json(dets))
    dump_json(paths["groundtruth"], groundtruth(cfg))
    write_toml(paths["pipeline"], pipeline_table(cfg))
    manifest = {
        "config_digest": cfg.digest(),
        "seed": int(cfg.seed),
        "config": to_plain(cfg.to_dict()),
        "files": {k: {"path": SCENE_FILES[k], "sha256": file_sha256(p)} for k, p in paths.items()},
    }
    dump_json(out / "manifest.json", manifest)
    return manifest

