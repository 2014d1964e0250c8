"""SVG overlays of the LiDAR cloud projected into a camera view.

The raster layer is the camera image or a cumulative event frame embedded as
a PNG data URI; the point layer holds one depth-coloured circle per projected
point.  Output bytes depend only on the inputs.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

from .geometry import MIN_DEPTH, CameraIntrinsics, Pose, distort_normalized, normalized_to_pixels

EVENT_WINDOW_US = 33_333.0


def event_frame(events, width: int, height: int, t_start=None, window_us: float = EVENT_WINDOW_US) -> np.ndarray:
    """Grey frame with ON events white and OFF events black over one window."""
    frame = np.full((height, width), 128, dtype=np.uint8)
    if len(events) == 0:
        return frame
    t0 = float(events["t"][0]) if t_start is None else float(t_start)
    t = events["t"].astype(np.float64)
    sel = (t >= t0) & (t < t0 + window_us)
    ev = events[sel]
    acc = np.zeros((height, width), dtype=np.int64)
    np.add.at(acc, (ev["y"].astype(np.int64), ev["x"].astype(np.int64)), ev["p"].astype(np.int64))
    frame[acc > 0] = 255
    frame[acc < 0] = 0
    return frame


def project_points(points, pose: Pose, K: CameraIntrinsics):
    """Pixels and depths of the points in front of the camera and inside the frame."""
    Xc = pose.transform(np.asarray(points, dtype=float).reshape(-1, 3))
    front = Xc[:, 2] > MIN_DEPTH
    Xc = Xc[front]
    xy = Xc[:, :2] / Xc[:, 2:3]
    if K.has_distortion:
        xy = distort_normalized(xy, K.dist)
    uv = normalized_to_pixels(xy, K)
    inside = K.contains(uv) if len(uv) else np.zeros(0, dtype=bool)
    return uv[inside], Xc[inside, 2]


def depth_colors(depth) -> list:
    """Near points red, far points blue (linear over the depth range)."""
    depth = np.asarray(depth, dtype=float)
    if depth.size == 0:
        return []
    lo, hi = depth.min(), depth.max()
    s = np.zeros_like(depth) if hi - lo < 1e-12 else (depth - lo) / (hi - lo)
    r = np.round(255 * (1 - s)).astype(int)
    b = np.round(255 * s).astype(int)
    g = np.round(255 * (1 - np.abs(2 * s - 1)) * 0.6).astype(int)
    return [f"#{ri:02x}{gi:02x}{bi:02x}" for ri, gi, bi in zip(r, g, b)]


def _png_data_uri(img) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(buf, format="PNG", optimize=False)
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def overlay_svg(raster, uv=None, depth=None, title: str = "", radius: float = 1.5) -> str:
    h, w = np.asarray(raster).shape
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
    ]
    if title:
        lines.append(f"<title>{title}</title>")
    lines.append(f'<g id="raster"><image x="0" y="0" width="{w}" height="{h}" href="{_png_data_uri(raster)}"/></g>')
    if uv is not None and len(uv):
        lines.append(f'<g id="points" stroke="none" fill-opacity="0.8">')
        for (x, y), c in zip(uv, depth_colors(depth)):
            lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius:g}" fill="{c}"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_overlay(path, raster, points, pose: Pose, K: CameraIntrinsics, title: str = "") -> int:
    """Write the overlay; returns the number of points drawn."""
    if points is None or len(points) == 0:
        uv, depth = None, None
    else:
        uv, depth = project_points(points, pose, K)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(overlay_svg(raster, uv, depth, title))
    return 0 if uv is None else len(uv)
