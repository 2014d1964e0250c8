"""Cube corners and marker corners from a LiDAR pointcloud.

Sequential RANSAC extracts the three visible faces; the normals are snapped
to the nearest orthonormal frame, labelled by convention (top face has the
largest +z component in the sensor frame), and the known target geometry is
mapped through the resulting target-to-sensor pose.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyAfterCrop,
    IllConditioned,
    InsufficientInliers,
    NotOrthogonal,
    ParseError,
)
from .geometry import Plane, Pose
from .target import FACES, TargetGeometry

ORTHO_TOL_DEG = 5.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) metres
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("pointcloud coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=float).reshape(-1)
            if len(inten) != len(pts):
                raise ValueError("intensity length must match point count")
            object.__setattr__(self, "intensity", inten)

    def __len__(self):
        return len(self.points)

    def subset(self, index) -> "PointCloud":
        inten = None if self.intensity is None else self.intensity[index]
        return PointCloud(self.points[index], inten)


@dataclass(frozen=True)
class RansacParams:
    inlier_threshold: float = 0.01
    max_iterations: int = 1000
    min_inliers: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "inlier_threshold_m": self.inlier_threshold,
            "max_iterations": self.max_iterations,
            "min_inliers": self.min_inliers,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict, seed=None) -> "RansacParams":
        return cls(
            inlier_threshold=float(d.get("inlier_threshold_m", 0.01)),
            max_iterations=int(d.get("max_iterations", 1000)),
            min_inliers=int(d.get("min_inliers", 100)),
            seed=int(d.get("seed", 0) if seed is None else seed),
        )


@dataclass(frozen=True, eq=False)
class PlaneFit:
    plane: Plane
    inliers: np.ndarray  # indices into the cloud passed to sequential_ransac_planes


@dataclass(frozen=True, eq=False)
class CubeDetection:
    planes: tuple  # labelled planes, ordered like target.FACES
    corners: np.ndarray  # (7, 3) sensor frame
    aruco_corners: np.ndarray  # (60, 3) sensor frame
    face_assignment: dict  # face name -> index of the RANSAC plane
    pose: Pose  # target -> sensor
    inlier_counts: tuple = ()


# ---------------------------------------------------------------------------


def crop_cloud(cloud: PointCloud, roi_min, roi_max) -> PointCloud:
    lo = np.asarray(roi_min, dtype=float)
    hi = np.asarray(roi_max, dtype=float)
    if np.any(lo >= hi):
        raise ValueError("roi min must be below max on every axis")
    p = cloud.points
    inside = np.all((p > lo) & (p < hi), axis=1)
    if not inside.any():
        raise EmptyAfterCrop(f"no points strictly inside roi {lo.tolist()} .. {hi.tolist()}")
    return cloud.subset(np.flatnonzero(inside))


def fit_plane_lsq(points) -> Plane:
    """Total least-squares plane through ``points``."""
    c = points.mean(axis=0)
    _, _, Vt = np.linalg.svd(points - c, full_matrices=False)
    n = Vt[-1]
    return Plane(n, n @ c)


def _iteration_samples(n_points, seed, round_index, iterations):
    """Three distinct indices per iteration, one RNG stream per iteration."""
    out = np.empty((iterations, 3), dtype=np.int64)
    for it in range(iterations):
        rng = np.random.default_rng([seed, round_index, it])
        out[it] = rng.choice(n_points, size=3, replace=False)
    return out


def _best_candidate(pts, samples, threshold):
    a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1)
    good = norm > 1e-12
    n = np.where(good[:, None], n / np.where(good, norm, 1.0)[:, None], 0.0)
    d = np.einsum("ij,ij->i", n, a)
    counts = np.zeros(len(samples), dtype=np.int64)
    chunk = 256
    for s in range(0, len(samples), chunk):
        dist = np.abs(pts @ n[s:s + chunk].T - d[s:s + chunk])
        counts[s:s + chunk] = np.count_nonzero(dist <= threshold, axis=0)
    counts[~good] = -1
    # highest count, lowest iteration index on ties
    best = int(np.argmax(counts))
    return Plane(n[best], d[best]) if good[best] else None, int(counts[best])


def sequential_ransac_planes(cloud: PointCloud, params: RansacParams = RansacParams(), n_planes=3) -> list:
    """Extract ``n_planes`` planes, removing each plane's inliers in turn."""
    pts_all = cloud.points
    remaining = np.arange(len(pts_all))
    if len(pts_all) < n_planes * params.min_inliers:
        raise InsufficientInliers(0, len(pts_all))
    fits = []
    for r in range(n_planes):
        pts = pts_all[remaining]
        if len(pts) < max(3, params.min_inliers):
            raise InsufficientInliers(r, len(pts))
        samples = _iteration_samples(len(pts), params.seed, r, params.max_iterations)
        plane, count = _best_candidate(pts, samples, params.inlier_threshold)
        if plane is None or count < params.min_inliers:
            raise InsufficientInliers(r, count)
        inl = np.abs(plane.distance(pts)) <= params.inlier_threshold
        # refine, then re-select inliers against the refined plane
        for _ in range(3):
            plane = fit_plane_lsq(pts[inl])
            new = np.abs(plane.distance(pts)) <= params.inlier_threshold
            if np.array_equal(new, inl):
                break
            inl = new
        if inl.sum() < params.min_inliers:
            raise InsufficientInliers(r, int(inl.sum()))
        fits.append(PlaneFit(plane, remaining[inl]))
        remaining = remaining[~inl]
    # final joint pass: every inlier goes to its nearest plane only
    fits = refine_plane_partition(pts_all, fits, params.inlier_threshold, band=1.0)
    for r, f in enumerate(fits):
        if len(f.inliers) < params.min_inliers:
            raise InsufficientInliers(r, len(f.inliers))
    return fits


def refine_plane_partition(points, fits, threshold: float, band: float = 3.0, max_iter: int = 20) -> list:
    """Jointly refit planes: each point within ``band * threshold`` goes to its nearest plane.

    Sequential removal leaves adjacent-face points lying near a shared edge
    in the first plane's inlier set; giving every point to its nearest plane
    removes them.  A band wider than the RANSAC threshold also lets the fit
    leave the narrow slab around the 3-point hypothesis.
    """
    planes = [f.plane for f in fits]

    def assign():
        D = np.abs(np.column_stack([p.distance(points) for p in planes]))
        nearest = np.argmin(D, axis=1)
        return np.where(D[np.arange(len(points)), nearest] <= band * threshold, nearest, -1)

    labels = assign()
    for _ in range(max_iter):
        for i in range(len(planes)):
            if np.count_nonzero(labels == i) >= 3:
                planes[i] = fit_plane_lsq(points[labels == i])
        new = assign()
        if np.array_equal(new, labels):
            break
        labels = new
    return [PlaneFit(p, np.flatnonzero(labels == i)) for i, p in enumerate(planes)]


def _angle_deg(a, b):
    return float(np.degrees(np.arccos(np.clip(abs(a @ b), -1.0, 1.0))))


def orthogonalize_and_label(fits, points=None, sensor_origin=(0.0, 0.0, 0.0)):
    """Snap three plane normals to an orthonormal frame and label the faces.

    ``fits`` is a list of :class:`PlaneFit` (or bare :class:`Plane`, in which
    case offsets are kept).  Normals are oriented toward ``sensor_origin``.
    Returns ``(planes ordered as target.FACES, face_assignment)`` where the
    assignment maps face name -> input index.
    """
    fits = [f if isinstance(f, PlaneFit) else PlaneFit(f, np.empty(0, dtype=np.int64)) for f in fits]
    if len(fits) != 3:
        raise ValueError("exactly three planes are required")
    origin = np.asarray(sensor_origin, dtype=float)
    planes = []
    for f in fits:
        p = f.plane
        if p.distance(origin) < 0:
            p = p.flipped()
        planes.append(p)
    N = np.array([p.normal for p in planes])
    for i in range(3):
        for j in range(i + 1, 3):
            ang = _angle_deg(N[i], N[j])
            if abs(ang - 90.0) > ORTHO_TOL_DEG:
                raise NotOrthogonal(f"planes {i} and {j} meet at {90 - abs(90 - ang):.2f} deg off-parallel")

    U, _, Vt = np.linalg.svd(N)
    Q = U @ Vt  # nearest orthogonal matrix (polar factor)

    ortho = []
    for i, f in enumerate(fits):
        n = Q[i]
        if points is not None and len(f.inliers):
            d = float(np.mean(points[f.inliers] @ n))
        else:
            # keep the foot point of the original plane on the new one
            d = float(n @ (planes[i].normal * planes[i].offset))
        ortho.append(Plane(n, d))

    top = int(np.argmax([p.normal[2] for p in ortho]))
    a, b = [i for i in range(3) if i != top]
    # outward normals satisfy n_right x n_left = -n_top for a right-handed target frame
    if np.cross(ortho[a].normal, ortho[b].normal) @ ortho[top].normal > 0:
        a, b = b, a
    assignment = {"top": top, "right": a, "left": b}
    ordered = tuple(ortho[assignment[name]] for name in FACES)
    return ordered, assignment


def intersect_three_planes(planes) -> np.ndarray:
    N = np.array([p.normal for p in planes])
    d = np.array([p.offset for p in planes])
    if np.linalg.cond(N) >= 1e6:
        raise IllConditioned("plane normals are (nearly) linearly dependent")
    return np.linalg.solve(N, d)


def target_pose_from_planes(planes, E0) -> Pose:
    """Target -> sensor pose; planes ordered as target.FACES with outward normals."""
    top, right, left = planes
    # inward normals of faces x=0, y=0, z=0 are the target x, y, z axes
    R = np.column_stack([-right.normal, -left.normal, -top.normal])
    return Pose.from_matrix(R, E0)


def derive_target_points(planes, E0, geometry: TargetGeometry, assignment=None, inlier_counts=()) -> CubeDetection:
    pose = target_pose_from_planes(planes, E0)
    corners = pose.transform(geometry.corners)
    corners[0] = E0
    return CubeDetection(
        planes=tuple(planes),
        corners=corners,
        aruco_corners=pose.transform(geometry.aruco_corners),
        face_assignment=dict(assignment or {name: i for i, name in enumerate(FACES)}),
        pose=pose,
        inlier_counts=tuple(inlier_counts),
    )


def detect_cube(cloud: PointCloud, geometry: TargetGeometry, params: RansacParams = RansacParams(),
                roi=None, refine_band: float = 3.0) -> CubeDetection:
    """Full LiDAR branch.  ``refine_band=0`` skips the joint refit."""
    if roi is not None:
        cloud = crop_cloud(cloud, roi[0], roi[1])
    fits = sequential_ransac_planes(cloud, params)
    if refine_band > 0:
        fits = refine_plane_partition(cloud.points, fits, params.inlier_threshold, refine_band)
    planes, assignment = orthogonalize_and_label(fits, cloud.points)
    E0 = intersect_three_planes(planes)
    counts = tuple(len(fits[assignment[name]].inliers) for name in FACES)
    return derive_target_points(planes, E0, geometry, assignment, counts)


# ---------------------------------------------------------------------------
# file IO

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def read_ply(path) -> PointCloud:
    """ASCII or binary little-endian PLY with x, y, z (+ optional intensity)."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError(f"{path}: not a PLY file")
    nl = raw.index(b"\n", end)
    header = raw[:nl].decode("ascii").splitlines()
    body = raw[nl + 1:]
    fmt, count, props, in_vertex = None, 0, [], False
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise ParseError(f"{path}: list properties in vertex element unsupported")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    names = [p[0] for p in props]
    if not {"x", "y", "z"} <= set(names):
        raise ParseError(f"{path}: vertex element lacks x/y/z")
    if fmt == "binary_little_endian":
        dt = np.dtype([(n, "<" + t) for n, t in props])
        if len(body) < dt.itemsize * count:
            raise ParseError(f"{path}: truncated binary body")
        data = np.frombuffer(body, dtype=dt, count=count)
        cols = {n: data[n].astype(float) for n in names}
    elif fmt == "ascii":
        arr = np.zeros((0, len(names)))
        if count:
            try:
                arr = np.loadtxt(body.decode("ascii").splitlines()[:count], ndmin=2)
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}") from exc
        cols = {n: arr[:, i] for i, n in enumerate(names)}
    else:
        raise ParseError(f"{path}: unsupported PLY format {fmt!r}")
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    return PointCloud(pts, cols.get("intensity"))


def write_ply(path, cloud: PointCloud, binary=True) -> None:
    pts = cloud.points.astype("<f4")
    has_i = cloud.intensity is not None
    lines = ["ply", "format " + ("binary_little_endian 1.0" if binary else "ascii 1.0"),
             f"element vertex {len(pts)}", "property float x", "property float y", "property float z"]
    if has_i:
        lines.append("property float intensity")
    lines.append("end_header")
    head = ("\n".join(lines) + "\n").encode("ascii")
    cols = [pts] + ([cloud.intensity.astype("<f4")[:, None]] if has_i else [])
    table = np.hstack(cols).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(head)
        if binary:
            fh.write(table.tobytes())
        else:
            for row in table:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def read_cloud_csv(path) -> PointCloud:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=_csv_header_rows(path))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if arr.shape[1] not in (3, 4):
        raise ParseError(f"{path}: expected x,y,z[,intensity]")
    return PointCloud(arr[:, :3], arr[:, 3] if arr.shape[1] == 4 else None)


def _csv_header_rows(path) -> int:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        return 0
    except ValueError:
        return 1


def read_cloud(path) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".csv":
        return read_cloud_csv(path)
    raise ParseError(f"{path}: unknown pointcloud extension {suffix!r}")

