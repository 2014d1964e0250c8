"""ArUco-style square marker detection, sub-pixel corners, target matching.

Markers are 6x6 cell grids: a one-cell black border around a 4x4 payload
from :mod:`calibcube._dictionary`.  Bit value 1 is white.  Corner order is
top-left, top-right, bottom-right, bottom-left of the upright marker, which
is clockwise on screen (image y axis points down).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

from . import _dictionary
from .errors import InvariantViolation, ParseError, UnknownMarkerId
from .target import TargetSpec

GRID = 6
ADAPTIVE_BLOCK = 15
ADAPTIVE_C = 7
MAX_HAMMING = 1


@dataclass(frozen=True, eq=False)
class Dictionary:
    name: str
    codes: np.ndarray  # (n, 4, 4) uint8 bits

    def __len__(self):
        return len(self.codes)

    def bits(self, marker_id: int) -> np.ndarray:
        return self.codes[marker_id]

    def grid(self, marker_id: int) -> np.ndarray:
        """6x6 cell grid including the black border."""
        g = np.zeros((GRID, GRID), dtype=np.uint8)
        g[1:-1, 1:-1] = self.codes[marker_id]
        return g

    def lookup(self, bits: np.ndarray, max_hamming: int = MAX_HAMMING):
        """Return ``(id, rotation, distance)`` or ``None``.

        ``rotation`` is k such that ``np.rot90(bits, k)`` is the canonical
        pattern.
        """
        best = None
        for k in range(4):
            rot = np.rot90(bits, k)
            d = np.sum(self.codes != rot[None], axis=(1, 2))
            i = int(np.argmin(d))
            if d[i] <= max_hamming and (best is None or d[i] < best[2]):
                best = (i, k, int(d[i]))
        return best


def _unpack(code):
    return np.array([(code >> (15 - i)) & 1 for i in range(16)], dtype=np.uint8).reshape(4, 4)


DEFAULT_DICTIONARY = Dictionary("CUBE_4X4_50", np.stack([_unpack(c) for c in _dictionary.CODES]))


def get_dictionary(name: str = "CUBE_4X4_50") -> Dictionary:
    if name != DEFAULT_DICTIONARY.name:
        raise KeyError(f"unknown marker dictionary {name!r}")
    return DEFAULT_DICTIONARY


@dataclass(frozen=True, eq=False)
class MarkerDetection:
    id: int
    corners: np.ndarray  # (4, 2)

    @property
    def area(self) -> float:
        return quad_area(self.corners)


# ---------------------------------------------------------------------------
# quad helpers


def quad_area(q) -> float:
    q = np.asarray(q, dtype=float)
    x, y = q[:, 0], q[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _turns(q):
    q = np.asarray(q, dtype=float)
    e = np.roll(q, -1, axis=0) - q
    f = np.roll(e, -1, axis=0)
    return e[:, 0] * f[:, 1] - e[:, 1] * f[:, 0]


def is_convex_clockwise(q) -> bool:
    """Strictly convex, simple and clockwise on screen (y down)."""
    return bool(np.all(_turns(q) > 0))


def homography_from_quad(src, dst) -> np.ndarray:
    """3x3 homography mapping 4 ``src`` points onto 4 ``dst`` points."""
    A = []
    for (x, y), (u, v) in zip(np.asarray(src, float), np.asarray(dst, float)):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, Vt = np.linalg.svd(np.array(A))
    H = Vt[-1].reshape(3, 3)
    return H / H[2, 2]


def apply_homography(H, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    ph = np.column_stack([pts, np.ones(len(pts))]) @ H.T
    return ph[:, :2] / ph[:, 2:3]


_UNIT_SQUARE = np.array([[0.0, 0.0], [GRID, 0.0], [GRID, GRID], [0.0, GRID]])


# ---------------------------------------------------------------------------
# corner refinement


def refine_corners(img, corners, window: int = 5, max_iter: int = 40, eps: float = 0.01):
    """Gradient-based sub-pixel corner refinement.

    Each corner ``q`` is moved to the least-squares point where the image
    gradient at every neighbour ``p`` is orthogonal to ``p - q``.  Returns
    ``(refined, ok)``; corners that do not converge, leave the window or lie
    too close to the border come back unchanged with ``ok`` False.
    """
    img = np.asarray(img, dtype=np.float64)
    gy, gx = np.gradient(img)
    h, w = img.shape
    corners = np.asarray(corners, dtype=float).reshape(-1, 2)
    out = corners.copy()
    ok = np.zeros(len(corners), dtype=bool)

    off = np.arange(-window, window + 1, dtype=float)
    ox, oy = np.meshgrid(off, off)
    ox, oy = ox.ravel(), oy.ravel()
    sigma = max(window / 2.0, 0.5)
    weight = np.exp(-(ox * ox + oy * oy) / (2 * sigma * sigma))

    for i, q0 in enumerate(corners):
        if not (window + 1 <= q0[0] <= w - window - 2 and window + 1 <= q0[1] <= h - window - 2):
            continue
        q = q0.copy()
        converged = False
        for _ in range(max_iter):
            px, py = q[0] + ox, q[1] + oy
            coords = np.vstack([py, px])
            gxs = ndimage.map_coordinates(gx, coords, order=1, mode="nearest")
            gys = ndimage.map_coordinates(gy, coords, order=1, mode="nearest")
            a = np.sum(weight * gxs * gxs)
            b = np.sum(weight * gxs * gys)
            c = np.sum(weight * gys * gys)
            G = np.array([[a, b], [b, c]])
            if np.linalg.cond(G) > 1e8 or a + c < 1e-6:
                break
            rhs = np.array([
                np.sum(weight * (gxs * gxs * px + gxs * gys * py)),
                np.sum(weight * (gxs * gys * px + gys * gys * py)),
            ])
            q_new = np.linalg.solve(G, rhs)
            step = np.linalg.norm(q_new - q)
            q = q_new
            if np.linalg.norm(q - q0) > window:
                break
            if step < eps:
                converged = True
                break
        if converged and np.linalg.norm(q - q0) <= window:
            out[i] = q
            ok[i] = True
    return out, ok


def refine_quad_edges(img, quad, half_width: float = 3.0, trim: float = 0.12):
    """Re-estimate quad corners by fitting a line to each side.

    Along each side, the intensity profile across the edge is sampled and
    the mid-level crossing located to sub-pixel precision; the four fitted
    lines are intersected pairwise.  Returns ``None`` if any side yields too
    few edge samples.
    """
    img = np.asarray(img, dtype=np.float64)
    quad = np.asarray(quad, dtype=float)
    lines = []
    steps = np.linspace(-half_width, half_width, int(8 * half_width) + 1)
    for i in range(4):
        a, b = quad[i], quad[(i + 1) % 4]
        d = b - a
        length = np.linalg.norm(d)
        d = d / length
        n = np.array([d[1], -d[0]])  # points out of a clockwise (y-down) quad
        ts = np.arange(trim * length, (1 - trim) * length, 0.5)
        if len(ts) < 4:
            return None
        base = a[None, :] + ts[:, None] * d[None, :]
        pts = base[:, None, :] + steps[None, :, None] * n[None, None, :]
        prof = ndimage.map_coordinates(img, [pts[..., 1].ravel(), pts[..., 0].ravel()],
                                       order=1, mode="nearest").reshape(len(ts), len(steps))
        lo = prof.min(axis=1)
        hi = prof.max(axis=1)
        mid = 0.5 * (lo + hi)
        edge = []
        for k in range(len(ts)):
            if hi[k] - lo[k] < 20:
                continue
            above = prof[k] > mid[k]
            # first dark->bright transition going outward
            idx = np.flatnonzero(~above[:-1] & above[1:])
            if idx.size == 0:
                continue
            j = idx[np.argmin(np.abs(steps[idx]))]
            f0, f1 = prof[k, j], prof[k, j + 1]
            s = steps[j] + (mid[k] - f0) / (f1 - f0) * (steps[j + 1] - steps[j])
            edge.append(base[k] + s * n)
        if len(edge) < 4:
            return None
        edge = np.array(edge)
        c = edge.mean(axis=0)
        _, _, Vt = np.linalg.svd(edge - c)
        normal = Vt[-1]
        lines.append((normal, normal @ c))
    out = np.empty((4, 2))
    for i in range(4):
        (n1, d1), (n2, d2) = lines[i - 1], lines[i]
        A = np.array([n1, n2])
        if abs(np.linalg.det(A)) < 1e-6:
            return None
        out[i] = np.linalg.solve(A, [d1, d2])
    return out


# ---------------------------------------------------------------------------
# detection


def _order_clockwise(quad):
    quad = np.asarray(quad, dtype=float).reshape(4, 2)
    if quad_area(quad) < 0:
        quad = quad[::-1]
    return quad


def _cell_means(img, quad):
    """Mean intensity of the central part of each of the 6x6 cells."""
    H = homography_from_quad(_UNIT_SQUARE, quad)
    sub = np.array([0.3, 0.5, 0.7])
    cy, cx, sy, sx = np.meshgrid(np.arange(GRID), np.arange(GRID), sub, sub, indexing="ij")
    pts = np.column_stack([(cx + sx).ravel(), (cy + sy).ravel()])
    uv = apply_homography(H, pts)
    vals = ndimage.map_coordinates(img.astype(np.float64), [uv[:, 1], uv[:, 0]], order=1, mode="nearest")
    return vals.reshape(GRID, GRID, -1).mean(axis=2)


def _decode(img, quad, dictionary, max_hamming):
    means = _cell_means(img, quad)
    lo, hi = means.min(), means.max()
    if hi - lo < 20:
        return None
    bits = (means > 0.5 * (lo + hi)).astype(np.uint8)
    border = np.concatenate([bits[0], bits[-1], bits[1:-1, 0], bits[1:-1, -1]])
    if border.any():
        return None
    hit = dictionary.lookup(bits[1:-1, 1:-1], max_hamming)
    if hit is None:
        return None
    marker_id, k, _ = hit
    # np.rot90(bits, k) is canonical; its TL cell sits at detected corner k
    return marker_id, np.roll(quad, -k, axis=0)


def detect_markers(img, dictionary: Dictionary = DEFAULT_DICTIONARY, max_hamming: int = MAX_HAMMING,
                   refine_window: int | None = None, min_side: float = 12.0) -> list:
    img = np.asarray(img)
    if img.ndim != 2 or min(img.shape) < 32:
        raise ValueError("expected a 2-D grayscale image of at least 32x32 pixels")
    img8 = img.astype(np.uint8)
    binary = cv2.adaptiveThreshold(img8, 255, cv2.ADAPTIVE_THRESH_MEAN_C, cv2.THRESH_BINARY_INV,
                                   ADAPTIVE_BLOCK, ADAPTIVE_C)
    contours, _ = cv2.findContours(binary, cv2.RETR_LIST, cv2.CHAIN_APPROX_NONE)
    found = {}
    for cnt in contours:
        if len(cnt) < 4 * min_side:
            continue
        approx = cv2.approxPolyDP(cnt, 0.05 * cv2.arcLength(cnt, True), True)
        if len(approx) != 4 or not cv2.isContourConvex(approx):
            continue
        quad = _order_clockwise(approx.reshape(4, 2))
        sides = np.linalg.norm(quad - np.roll(quad, -1, axis=0), axis=1)
        if sides.min() < min_side:
            continue
        win = refine_window or int(np.clip(sides.min() / 10.0, 2, 6))
        refined, ok = refine_corners(img8, quad, window=win)
        quad = np.where(ok[:, None], refined, quad)
        edged = refine_quad_edges(img8, quad)
        if edged is not None and np.max(np.linalg.norm(edged - quad, axis=1)) < max(3.0, win):
            quad = edged
        if not is_convex_clockwise(quad):
            continue
        decoded = _decode(img8, quad, dictionary, max_hamming)
        if decoded is None:
            continue
        marker_id, corners = decoded
        det = MarkerDetection(marker_id, corners)
        prev = found.get(marker_id)
        if prev is None or det.area > prev.area:
            found[marker_id] = det
    return [found[k] for k in sorted(found)]


def draw_marker(img: np.ndarray, marker_id: int, corners, dictionary: Dictionary = DEFAULT_DICTIONARY,
                supersample: int = 1) -> None:
    """Rasterise one marker into ``img`` in place.

    ``supersample == 1`` is nearest-neighbour sampling at pixel centres; larger
    values average an ``s x s`` grid of samples per pixel (area integration).
    """
    corners = np.asarray(corners, dtype=float)
    Hinv = homography_from_quad(corners, _UNIT_SQUARE)
    x0, y0 = np.floor(corners.min(axis=0)).astype(int) - 1
    x1, y1 = np.ceil(corners.max(axis=0)).astype(int) + 1
    h, w = img.shape
    x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, w - 1), min(y1, h - 1)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    s = int(supersample)
    sub = (np.arange(s) + 0.5) / s - 0.5
    grid = dictionary.grid(marker_id)
    acc = np.zeros(xs.size)
    cover = np.zeros(xs.size)
    for dy in sub:
        for dx in sub:
            g = apply_homography(Hinv, np.column_stack([xs.ravel() + dx, ys.ravel() + dy]))
            inside = (g[:, 0] >= 0) & (g[:, 0] < GRID) & (g[:, 1] >= 0) & (g[:, 1] < GRID)
            cells = grid[np.clip(g[:, 1].astype(int), 0, GRID - 1), np.clip(g[:, 0].astype(int), 0, GRID - 1)]
            acc += np.where(inside, np.where(cells == 1, 255.0, 0.0), 0.0)
            cover += inside
    cover /= s * s
    touched = cover > 0
    bg = img[ys.ravel(), xs.ravel()].astype(float)
    val = acc / (s * s) + (1.0 - cover) * bg
    img[ys.ravel()[touched], xs.ravel()[touched]] = np.round(val[touched]).astype(img.dtype)


# ---------------------------------------------------------------------------
# IO and matching


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("L"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_pgm(path, img) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def detections_to_json(detections) -> list:
    return [{"id": int(d.id), "corners": [[float(x), float(y)] for x, y in d.corners]} for d in detections]


def load_external_detections(path, dictionary: Dictionary = DEFAULT_DICTIONARY) -> list:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON array of detections")
    out = []
    for entry in data:
        try:
            marker_id = entry["id"]
            corners = np.asarray(entry["corners"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed detection {entry!r}") from exc
        if not isinstance(marker_id, int) or corners.shape != (4, 2):
            raise ParseError(f"{path}: detection needs integer id and 4 [x, y] corners")
        if not np.all(np.isfinite(corners)):
            raise InvariantViolation(marker_id, "non-finite corner")
        if not 0 <= marker_id < len(dictionary):
            raise InvariantViolation(marker_id, f"id not in dictionary {dictionary.name}")
        if not is_convex_clockwise(corners):
            raise InvariantViolation(marker_id, "corners do not form a convex clockwise quadrilateral")
        out.append(MarkerDetection(marker_id, corners))
    return out


def match_to_target(detections, spec: TargetSpec) -> dict:
    """Map each detected marker corner to its global index 0..59."""
    known = set(spec.all_marker_ids())
    best = {}
    for d in detections:
        if d.id not in known:
            raise UnknownMarkerId(d.id)
        if d.id not in best or d.area > best[d.id].area:
            best[d.id] = d
    out = {}
    for marker_id in sorted(best):
        for idx, pt in zip(spec.corner_indices(marker_id), best[marker_id].corners):
            out[idx] = np.array(pt, dtype=float)
    return dict(sorted(out.items()))
