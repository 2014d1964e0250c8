"""Direct least-squares ellipse fitting.

Ellipse-specific conic fit with the quadratic constraint ``4AC - B^2 = 1``,
solved through the numerically stable block decomposition (the scatter
matrix is split into quadratic and linear parts so that only a 3x3
eigenproblem remains).  Data are centred and isotropically scaled before
fitting, which also makes the fit exactly translation-equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, TooFewPoints

_C1_INV = np.array([[0.0, 0.0, 0.5], [0.0, -1.0, 0.0], [0.5, 0.0, 0.0]])


@dataclass(frozen=True, eq=False)
class Ellipse:
    center: np.ndarray  # (2,) pixels
    semi_axes: tuple  # (major, minor)
    angle: float  # radians, major axis w.r.t. +x
    conic: np.ndarray  # (A, B, C, D, E, F) in input coordinates

    def points(self, n=64) -> np.ndarray:
        s = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        a, b = self.semi_axes
        c, si = np.cos(self.angle), np.sin(self.angle)
        x = a * np.cos(s)
        y = b * np.sin(s)
        return np.column_stack([self.center[0] + c * x - si * y, self.center[1] + si * x + c * y])


def _conic_fit(x, y):
    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1 = D1.T @ D1
    S2 = D1.T @ D2
    S3 = D2.T @ D2
    sv = np.linalg.svd(S3, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise DegenerateConfiguration("points are collinear (rank-deficient scatter matrix)")
    T = -np.linalg.solve(S3, S2.T)
    M = _C1_INV @ (S1 + S2 @ T)
    w, V = np.linalg.eig(M)
    V = np.real(V)
    cond = 4.0 * V[0] * V[2] - V[1] ** 2
    ok = np.flatnonzero(cond > 0)
    if ok.size == 0:
        raise DegenerateConfiguration("no eigenvector satisfies the ellipse constraint")
    # with exact data several numerically-zero eigenvalues can qualify; take
    # the one with the smallest algebraic residual
    if ok.size > 1:
        w = np.real(w)
        ok = ok[np.argsort(np.abs(w[ok]))]
    a1 = V[:, ok[0]]
    return np.concatenate([a1, T @ a1])


def conic_to_parameters(conic):
    A, B, C, D, E, F = conic
    Q = np.array([[2 * A, B], [B, 2 * C]])
    if 4 * A * C - B * B <= 0:
        raise DegenerateConfiguration("conic is not an ellipse")
    x0, y0 = np.linalg.solve(Q, [-D, -E])
    F0 = A * x0 * x0 + B * x0 * y0 + C * y0 * y0 + D * x0 + E * y0 + F
    lam, vec = np.linalg.eigh(np.array([[A, B / 2], [B / 2, C]]))
    sq = -F0 / lam
    if np.any(sq <= 0):
        raise DegenerateConfiguration("imaginary ellipse")
    axes = np.sqrt(sq)
    major = int(np.argmax(axes))
    angle = float(np.arctan2(vec[1, major], vec[0, major]))
    # fold into (-pi/2, pi/2]
    if angle <= -np.pi / 2:
        angle += np.pi
    elif angle > np.pi / 2:
        angle -= np.pi
    return np.array([x0, y0]), (float(axes[major]), float(axes[1 - major])), angle


def fit_ellipse(points) -> Ellipse:
    """Fit an ellipse to ``(N, 2)`` points, ``N >= 6``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 6:
        raise TooFewPoints(f"ellipse fit needs at least 6 points, got {len(pts)}")
    mean = pts.mean(axis=0)
    centred = pts - mean
    scale = np.sqrt(np.mean(np.sum(centred * centred, axis=1)) / 2.0)
    if not scale > 0:
        raise DegenerateConfiguration("all points coincide")
    u = centred / scale
    conic_n = _conic_fit(u[:, 0], u[:, 1])
    center_n, axes_n, angle = conic_to_parameters(conic_n)

    # conic in the caller's coordinates: substitute u = (p - mean) / scale
    A, B, C, D, E, F = conic_n
    mx, my = mean
    s = scale
    A2, B2, C2 = A / s**2, B / s**2, C / s**2
    D2 = D / s - 2 * A2 * mx - B2 * my
    E2 = E / s - 2 * C2 * my - B2 * mx
    F2 = A2 * mx * mx + B2 * mx * my + C2 * my * my - D / s * mx - E / s * my + F
    conic = np.array([A2, B2, C2, D2, E2, F2])

    return Ellipse(
        center=center_n * scale + mean,
        semi_axes=(axes_n[0] * scale, axes_n[1] * scale),
        angle=angle,
        conic=conic,
    )
