"""Rigid transforms, pinhole projection with Brown-Conrady distortion, planes.

Conventions
-----------
* A :class:`Pose` maps points from a source frame into a destination frame:
  ``X_dst = R @ X_src + t``.  ``compose(a, b)`` applies ``b`` first.
* Quaternions are stored scalar-first ``(w, x, y, z)`` with ``w >= 0``.
* Pixel coordinates put the centre of pixel ``(u, v)`` at the integer
  position ``(u, v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindCamera, ConfigError, NoConvergence

MIN_DEPTH = 1e-9


# ---------------------------------------------------------------------------
# quaternion / rotation helpers


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Shepperd's method; R is assumed orthonormal."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def rotvec_to_quat(rv):
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv)
    if theta < 1e-12:
        # second-order expansion keeps the result smooth near zero
        q = np.concatenate([[1.0 - theta * theta / 8.0], 0.5 * rv])
        return quat_normalize(q)
    axis = rv / theta
    return quat_normalize(np.concatenate([[np.cos(theta / 2)], np.sin(theta / 2) * axis]))


def quat_to_rotvec(q):
    q = quat_normalize(q)
    vnorm = np.linalg.norm(q[1:])
    if vnorm < 1e-12:
        return 2.0 * q[1:]
    theta = 2.0 * np.arctan2(vnorm, q[0])
    return theta * q[1:] / vnorm


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_angle(Ra, Rb) -> float:
    """Geodesic distance in radians between two rotation matrices."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    # arccos loses precision near 0, use the rotation vector norm instead
    if c > 0.999:
        return float(np.linalg.norm(quat_to_rotvec(matrix_to_quat(np.asarray(Ra).T @ np.asarray(Rb)))))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def nearest_rotation(M):
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# Pose


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform stored as unit quaternion (wxyz) + translation (m)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose components must be finite")
        object.__setattr__(self, "rotation", _frozen(quat_normalize(q)))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_homogeneous(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls.from_matrix(T[:3, :3], T[:3, 3])

    @classmethod
    def from_rotvec(cls, rv, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(rotvec_to_quat(rv), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"Pose(q=[{q}], t=[{t}])"

    def to_dict(self) -> dict:
        return {
            "rotation_quaternion_wxyz": [float(v) for v in self.rotation],
            "translation_m": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        try:
            if "rotation_quaternion_wxyz" in d:
                q = d["rotation_quaternion_wxyz"]
            elif "rotation_matrix_row_major" in d:
                q = matrix_to_quat(np.reshape(d["rotation_matrix_row_major"], (3, 3)))
            else:
                q = rotvec_to_quat(np.radians(d.get("rotvec_deg", [0.0, 0.0, 0.0])))
            return cls(q, d["translation_m"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid pose table {d!r}: {exc}") from exc


def compose(a: Pose, b: Pose) -> Pose:
    """Pose mapping X to a(b(X))."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.R @ b.translation + a.translation
    return Pose(q, t)


def invert(p: Pose) -> Pose:
    qi = np.array([p.rotation[0], -p.rotation[1], -p.rotation[2], -p.rotation[3]])
    return Pose(qi, -(quat_to_matrix(qi) @ p.translation))


def pose_errors(estimate: Pose, reference: Pose) -> tuple[float, float]:
    """(rotation geodesic in radians, translation norm in metres)."""
    return (
        rotation_angle(estimate.R, reference.R),
        float(np.linalg.norm(estimate.translation - reference.translation)),
    )


# ---------------------------------------------------------------------------
# Camera model


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    dist: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    width: int = 640
    height: int = 480

    def __post_init__(self):
        dist = tuple(float(v) for v in self.dist)
        if len(dist) != 5:
            raise ConfigError("dist must hold 5 coefficients k1, k2, p1, p2, k3")
        object.__setattr__(self, "dist", dist)
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the sensor")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def has_distortion(self) -> bool:
        return any(v != 0.0 for v in self.dist)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "dist": list(self.dist), "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        missing = [k for k in ("fx", "fy", "cx", "cy", "width", "height") if k not in d]
        if missing:
            raise ConfigError(f"intrinsics missing keys: {', '.join(missing)}")
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            dist=tuple(d.get("dist", (0.0,) * 5)),
            width=int(d["width"]), height=int(d["height"]),
        )

    @classmethod
    def from_toml(cls, path) -> "CameraIntrinsics":
        from .config import read_toml

        return cls.from_dict(read_toml(path))

    def contains(self, uv, margin=0.0) -> np.ndarray:
        uv = np.atleast_2d(uv)
        return (
            (uv[:, 0] >= margin) & (uv[:, 0] <= self.width - 1 - margin)
            & (uv[:, 1] >= margin) & (uv[:, 1] <= self.height - 1 - margin)
        )


def distort_normalized(xy, dist):
    """Apply Brown-Conrady distortion to normalized image coordinates."""
    xy = np.asarray(xy, dtype=float)
    k1, k2, p1, p2, k3 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def normalized_to_pixels(xy, K: CameraIntrinsics):
    xy = np.asarray(xy, dtype=float)
    return np.stack([K.fx * xy[..., 0] + K.cx, K.fy * xy[..., 1] + K.cy], axis=-1)


def pixels_to_normalized(uv, K: CameraIntrinsics):
    uv = np.asarray(uv, dtype=float)
    return np.stack([(uv[..., 0] - K.cx) / K.fx, (uv[..., 1] - K.cy) / K.fy], axis=-1)


def project(X, pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """Project 3-D point(s) through ``pose`` into pixel coordinates.

    Accepts a single point ``(3,)`` or an array ``(N, 3)`` and returns the
    matching ``(2,)`` / ``(N, 2)`` shape.  Raises :class:`BehindCamera` when a
    transformed depth is not strictly positive.
    """
    X = np.asarray(X, dtype=float)
    Xc = pose.transform(X)
    z = Xc[..., 2]
    if np.any(z <= MIN_DEPTH):
        bad = int(np.flatnonzero(np.atleast_1d(z) <= MIN_DEPTH)[0])
        raise BehindCamera(bad)
    xy = Xc[..., :2] / z[..., None]
    if K.has_distortion:
        xy = distort_normalized(xy, K.dist)
    return normalized_to_pixels(xy, K)


def undistort_normalized(xy_d, dist, max_iter=50, tol=1e-12):
    """Invert the distortion model by fixed-point iteration."""
    xy_d = np.asarray(xy_d, dtype=float)
    k1, k2, p1, p2, k3 = dist
    xy = xy_d.copy()
    for _ in range(max_iter):
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        new = np.stack([(xy_d[..., 0] - dx) / radial, (xy_d[..., 1] - dy) / radial], axis=-1)
        step = np.max(np.abs(new - xy)) if new.size else 0.0
        xy = new
        if step < tol:
            return xy
    if not np.all(np.isfinite(xy)):
        raise NoConvergence("undistortion diverged")
    residual = np.max(np.abs(distort_normalized(xy, dist) - xy_d)) if xy.size else 0.0
    if residual > tol:
        raise NoConvergence(f"undistortion did not converge in {max_iter} iterations")
    return xy


def normalize(uv, K: CameraIntrinsics) -> np.ndarray:
    """Pixels -> undistorted normalized image coordinates."""
    xy = pixels_to_normalized(uv, K)
    if K.has_distortion:
        # 1e-9 px convergence expressed in normalized units
        xy = undistort_normalized(xy, K.dist, tol=1e-9 / max(K.fx, K.fy))
    return xy


def undistort(p, K: CameraIntrinsics) -> np.ndarray:
    """Pixel -> pixel position an ideal (distortion-free) camera would see."""
    return normalized_to_pixels(normalize(p, K), K)


def distort(p, K: CameraIntrinsics) -> np.ndarray:
    """Inverse of :func:`undistort`."""
    xy = pixels_to_normalized(p, K)
    return normalized_to_pixels(distort_normalized(xy, K.dist), K)


# ---------------------------------------------------------------------------
# Planes


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane ``normal . X = offset`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0:
            raise ValueError("plane normal must be non-zero")
        object.__setattr__(self, "normal", _frozen(n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def distance(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.normal - self.offset

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.offset)

    def transformed(self, pose: Pose) -> "Plane":
        n = pose.R @ self.normal
        return Plane(n, self.offset + n @ pose.translation)

    def __repr__(self):
        n = ", ".join(f"{v:.6g}" for v in self.normal)
        return f"Plane(n=[{n}], d={self.offset:.6g})"


def load_intrinsics(source) -> CameraIntrinsics:
    """Intrinsics from a TOML path or an already-parsed table."""
    if isinstance(source, CameraIntrinsics):
        return source
    if isinstance(source, dict):
        return CameraIntrinsics.from_dict(source)
    return CameraIntrinsics.from_toml(Path(source))
