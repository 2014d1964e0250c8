"""Perspective-n-Point calibration and reprojection statistics.

Linear initialisation (DLT for general 3-D point sets, homography
decomposition for coplanar ones) on undistorted normalized coordinates,
followed by Levenberg-Marquardt on the pixel reprojection residual with
the full distortion model.  Rotation updates are applied as a left
axis-angle increment ``R <- Exp(w) R``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateConfiguration, NoConvergence, TooFewPoints
from .geometry import (
    MIN_DEPTH,
    CameraIntrinsics,
    Pose,
    distort_normalized,
    nearest_rotation,
    normalize,
    quat_to_matrix,
    rotvec_to_quat,
    skew,
)

MAX_ITERATIONS = 200
REL_DECREASE = 1e-10
HUBER_DELTA = 2.0


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    points3d: np.ndarray  # (N, 3) source (LiDAR) frame
    points2d: np.ndarray  # (N, 2) measured pixels
    labels: tuple
    camera: CameraIntrinsics

    def __post_init__(self):
        p3 = np.asarray(self.points3d, dtype=float).reshape(-1, 3)
        p2 = np.asarray(self.points2d, dtype=float).reshape(-1, 2)
        labels = tuple(self.labels)
        if not (len(p3) == len(p2) == len(labels)):
            raise ValueError("points3d, points2d and labels must have equal length")
        if len(set(labels)) != len(labels):
            raise ValueError("correspondence labels must be unique")
        object.__setattr__(self, "points3d", p3)
        object.__setattr__(self, "points2d", p2)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class Extrinsics:
    pose: Pose  # source -> target sensor
    covariance: np.ndarray | None = None  # 6x6 over (rotvec increment, translation)
    source_sensor: str = "lidar"
    target_sensor: str = "camera"
    cost: float = float("nan")
    initial_cost: float = float("nan")
    iterations: int = 0


@dataclass(frozen=True)
class ReprojectionStats:
    mean: float
    max: float
    per_point: tuple  # ((label, residual_px), ...)
    n: int

    def to_dict(self) -> dict:
        return {
            "mean_px": self.mean,
            "max_px": self.max,
            "n": self.n,
            "per_point": [{"label": str(lbl), "residual_px": float(r)} for lbl, r in self.per_point],
        }


# ---------------------------------------------------------------------------
# projection with analytic Jacobian


def project_with_jacobian(X, R, t, K: CameraIntrinsics):
    """Pixels ``(N, 2)`` and d(pixels)/d(w, t) ``(N, 2, 6)`` for ``R <- Exp(w) R``."""
    RX = X @ R.T
    Xc = RX + t
    z = Xc[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera(int(np.flatnonzero(z <= MIN_DEPTH)[0]))
    x = Xc[:, 0] / z
    y = Xc[:, 1] / z
    n = len(X)

    dxy_dXc = np.zeros((n, 2, 3))
    dxy_dXc[:, 0, 0] = 1.0 / z
    dxy_dXc[:, 0, 2] = -x / z
    dxy_dXc[:, 1, 1] = 1.0 / z
    dxy_dXc[:, 1, 2] = -y / z

    k1, k2, p1, p2, k3 = K.dist
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    drad = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    D = np.empty((n, 2, 2))
    D[:, 0, 0] = radial + 2.0 * x * x * drad + 2.0 * p1 * y + 6.0 * p2 * x
    D[:, 0, 1] = 2.0 * x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y
    D[:, 1, 0] = 2.0 * x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y
    D[:, 1, 1] = radial + 2.0 * y * y * drad + 6.0 * p1 * y + 2.0 * p2 * x

    uv = np.column_stack([K.fx * xd + K.cx, K.fy * yd + K.cy])
    F = np.array([K.fx, K.fy])[None, :, None]

    dXc = np.zeros((n, 3, 6))
    dXc[:, :, :3] = -np.stack([skew(v) for v in RX]) if n else dXc[:, :, :3]
    dXc[:, :, 3:] = np.eye(3)
    J = F * (D @ dxy_dXc @ dXc)
    return uv, J


def _residuals(corrs, R, t):
    uv, J = project_with_jacobian(corrs.points3d, R, t, corrs.camera)
    return (uv - corrs.points2d), J


def _robust(res, huber):
    """Per-point weights and total cost (sum of squares, or Huber)."""
    e = np.linalg.norm(res, axis=1)
    if huber is None:
        return np.ones(len(e)), float(np.sum(e * e))
    w = np.where(e <= huber, 1.0, huber / np.maximum(e, 1e-300))
    cost = np.where(e <= huber, e * e, 2.0 * huber * e - huber * huber)
    return w, float(np.sum(cost))


# ---------------------------------------------------------------------------
# linear initialisation


def _normalize_3d(X):
    c = X.mean(axis=0)
    s = np.sqrt(3.0) / max(np.mean(np.linalg.norm(X - c, axis=1)), 1e-300)
    T = np.eye(4)
    T[:3, :3] *= s
    T[:3, 3] = -s * c
    return T


def _dlt(X, xy):
    T = _normalize_3d(X)
    Xh = np.column_stack([X, np.ones(len(X))]) @ T.T
    n = len(X)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xy[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xy[:, 1:] * Xh
    _, sv, Vt = np.linalg.svd(A)
    P = Vt[-1].reshape(3, 4) @ T
    depth = np.column_stack([X, np.ones(n)]) @ P[2]
    if np.sum(depth > 0) < n / 2:
        P = -P
    M = P[:, :3]
    U, S, Vt3 = np.linalg.svd(M)
    R = U @ Vt3
    if np.linalg.det(R) < 0:
        raise DegenerateConfiguration("DLT produced a reflection")
    t = P[:, 3] / np.mean(S)
    return R, t


def _homography(ab, xy):
    def norm2(p):
        c = p.mean(axis=0)
        s = np.sqrt(2.0) / max(np.mean(np.linalg.norm(p - c, axis=1)), 1e-300)
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])

    Ta, Tx = norm2(ab), norm2(xy)
    a = np.column_stack([ab, np.ones(len(ab))]) @ Ta.T
    b = np.column_stack([xy, np.ones(len(xy))]) @ Tx.T
    n = len(ab)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = a
    A[0::2, 6:9] = -b[:, :1] * a
    A[1::2, 3:6] = a
    A[1::2, 6:9] = -b[:, 1:2] * a
    _, _, Vt = np.linalg.svd(A)
    H = np.linalg.inv(Tx) @ Vt[-1].reshape(3, 3) @ Ta
    return H


def _planar_init(X, xy):
    c = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - c)
    e1, e2 = Vt[0], Vt[1]
    e3 = np.cross(e1, e2)
    ab = (X - c) @ np.column_stack([e1, e2])
    H = _homography(ab, xy)
    lam = 2.0 / (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    if H[2, 2] * lam < 0:
        lam = -lam
    r1, r2 = lam * H[:, 0], lam * H[:, 1]
    Rp = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    R = Rp @ np.vstack([e1, e2, e3])
    t = lam * H[:, 2] - R @ c
    return R, t


def _spread(X):
    c = X.mean(axis=0)
    sv = np.linalg.svd(X - c, compute_uv=False)
    return sv, np.max(np.linalg.norm(X - c, axis=1))


def initial_pose(corrs: CorrespondenceSet):
    X = corrs.points3d
    xy = normalize(corrs.points2d, corrs.camera)
    sv, spread = _spread(X)
    if sv[1] <= 1e-9 * max(spread, 1e-300):
        raise DegenerateConfiguration("3-D points are collinear")
    coplanar = sv[2] <= 1e-6 * spread * np.sqrt(len(X))
    if not coplanar and len(X) >= 6:
        return _dlt(X, xy)
    return _planar_init(X, xy)


# ---------------------------------------------------------------------------


def solve_pnp(corrs: CorrespondenceSet, robust=False, init: Pose | None = None,
              source="lidar", target="camera", return_trace=False):
    """Pose mapping ``corrs.points3d`` into the camera frame."""
    if len(corrs) < 4:
        raise TooFewPoints(f"PnP needs at least 4 correspondences, got {len(corrs)}")
    if init is None:
        R, t = initial_pose(corrs)
    else:
        R, t = init.R, init.t
    huber = HUBER_DELTA if robust else None

    res, J = _residuals(corrs, R, t)
    w, cost = _robust(res, huber)
    initial_cost = cost
    lam = 1e-3
    trace = [cost]
    converged = False
    it = 0
    for it in range(1, MAX_ITERATIONS + 1):
        sw = np.sqrt(w)[:, None]
        Jw = (J * sw[:, :, None]).reshape(-1, 6)
        rw = (res * sw).reshape(-1)
        A = Jw.T @ Jw
        g = Jw.T @ rw
        if cost <= 1e-28 * len(corrs) or np.max(np.abs(g)) <= 1e-30:
            converged = True
            break
        accepted = False
        while lam < 1e16:
            step = np.linalg.solve(A + lam * np.diag(np.diag(A)), -g)
            R_new = _exp_left(step[:3], R)
            t_new = t + step[3:]
            try:
                res_new, J_new = _residuals(corrs, R_new, t_new)
            except BehindCamera:
                lam *= 10.0
                continue
            w_new, cost_new = _robust(res_new, huber)
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at machine precision
            converged = True
            break
        decrease = (cost - cost_new) / max(cost, 1e-300)
        R, t, res, J, w, cost = R_new, t_new, res_new, J_new, w_new, cost_new
        trace.append(cost)
        lam = max(lam / 10.0, 1e-12)
        if decrease < REL_DECREASE or np.linalg.norm(step) < 1e-14:
            converged = True
            break
    if not converged:
        raise NoConvergence(f"Levenberg-Marquardt did not converge in {MAX_ITERATIONS} iterations")

    cov = None
    dof = 2 * len(corrs) - 6
    Jf = J.reshape(-1, 6)
    if dof > 0:
        try:
            cov = np.linalg.inv(Jf.T @ Jf) * (cost / dof)
            cov = 0.5 * (cov + cov.T)
        except np.linalg.LinAlgError:
            cov = None
    ext = Extrinsics(Pose.from_matrix(R, t), cov, source, target, cost, initial_cost, it)
    return (ext, trace) if return_trace else ext


def _exp_left(w, R):
    return nearest_rotation(quat_to_matrix(rotvec_to_quat(w)) @ R)


def reprojection_stats(corrs: CorrespondenceSet, ext: Extrinsics | Pose) -> ReprojectionStats:
    pose = ext.pose if isinstance(ext, Extrinsics) else ext
    Xc = pose.transform(corrs.points3d)
    for i, z in enumerate(Xc[:, 2]):
        if z <= MIN_DEPTH:
            raise BehindCamera(corrs.labels[i])
    xy = Xc[:, :2] / Xc[:, 2:3]
    K = corrs.camera
    if K.has_distortion:
        xy = distort_normalized(xy, K.dist)
    uv = np.column_stack([K.fx * xy[:, 0] + K.cx, K.fy * xy[:, 1] + K.cy])
    d = corrs.points2d - uv
    r = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
    return ReprojectionStats(
        mean=float(np.mean(r)) if len(r) else 0.0,
        max=float(np.max(r)) if len(r) else 0.0,
        per_point=tuple((lbl, float(v)) for lbl, v in zip(corrs.labels, r)),
        n=len(r),
    )


def calibrate_event_lidar(corners3d, keypoints, K: CameraIntrinsics, robust=False):
    """PnP over cube corners joined by corner index with LED keypoints."""
    corners3d = np.asarray(corners3d, dtype=float)
    kp = sorted(keypoints, key=lambda k: k.corner_index)
    idx = [k.corner_index for k in kp if 0 <= k.corner_index < len(corners3d)]
    pts2 = [k.center for k in kp if 0 <= k.corner_index < len(corners3d)]
    corrs = CorrespondenceSet(corners3d[idx], np.array(pts2).reshape(-1, 2),
                              tuple(f"E{i}" for i in idx), K)
    ext = solve_pnp(corrs, robust=robust, source="lidar", target="event")
    return ext, reprojection_stats(corrs, ext)


def calibrate_rgb_lidar(aruco3d, detections: dict, K: CameraIntrinsics, robust=False):
    """PnP over marker corners; ``detections`` maps A-index -> pixel."""
    aruco3d = np.asarray(aruco3d, dtype=float)
    idx = sorted(i for i in detections if 0 <= i < len(aruco3d))
    corrs = CorrespondenceSet(aruco3d[idx], np.array([detections[i] for i in idx]).reshape(-1, 2),
                              tuple(f"A{i}" for i in idx), K)
    ext = solve_pnp(corrs, robust=robust, source="lidar", target="rgb")
    return ext, reprojection_stats(corrs, ext)


def aggregate_by_type(entries) -> dict:
    """Unweighted mean of E_mean per calibration kind."""
    groups: dict = {}
    for kind, stats in entries:
        value = stats.mean if isinstance(stats, ReprojectionStats) else float(stats)
        groups.setdefault(kind, []).append(value)
    return {kind: float(np.mean(v)) for kind, v in groups.items()}


def extrinsics_to_dict(ext: Extrinsics, stats: ReprojectionStats, config_digest: str, seed: int) -> dict:
    R = ext.pose.R
    return {
        "source": ext.source_sensor,
        "target": ext.target_sensor,
        "rotation_quaternion_wxyz": [float(v) for v in ext.pose.rotation],
        "rotation_matrix_row_major": [float(v) for v in R.reshape(-1)],
        "translation_m": [float(v) for v in ext.pose.translation],
        "reprojection": stats.to_dict(),
        "config_digest": config_digest,
        "seed": int(seed),
    }

