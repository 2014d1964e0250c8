"""Geometric and radiometric model of the LED-instrumented ChArUco cube.

Canonical target frame: the cube body occupies ``[0, L]^3`` and the three
visible faces are the coordinate planes through the origin.  ``E0`` is the
corner shared by all three faces.  Each face carries a 3x3 ChArUco board
whose five white squares (``(row + col)`` even) hold one ArUco marker each,
giving 3 * 5 * 4 = 60 marker corners.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AmbiguousMatch, ConfigError, InvalidSpec, NoMatch

FACES = ("top", "right", "left")
# (axis the face is perpendicular to, in-plane u axis, in-plane v axis);
# u x v points into the cube so markers read upright/clockwise from outside
_FACE_AXES = {"top": (2, 0, 1), "right": (0, 1, 2), "left": (1, 2, 0)}
MARKER_CELLS = ((0, 0), (0, 2), (1, 1), (2, 0), (2, 2))
BOARD_SQUARES = 3
N_CORNERS = 7
BAND_HZ = (10.0, 200.0)

DEFAULT_FREQUENCIES = (25.0, 50.0, 75.0, 100.0, 125.0, 150.0, 175.0)


def _default_ids():
    return {face: list(range(5 * i, 5 * i + 5)) for i, face in enumerate(FACES)}


@dataclass(frozen=True)
class TargetSpec:
    edge_length: float = 0.5
    led_frequencies: tuple = DEFAULT_FREQUENCIES
    markers_per_face: int = 5
    marker_side: float = 0.12
    marker_ids: dict = field(default_factory=_default_ids)
    dictionary_name: str = "CUBE_4X4_50"

    def __post_init__(self):
        freqs = tuple(float(f) for f in self.led_frequencies)
        object.__setattr__(self, "led_frequencies", freqs)
        ids = {face: [int(i) for i in self.marker_ids.get(face, [])] for face in FACES}
        object.__setattr__(self, "marker_ids", ids)
        if not self.edge_length > 0:
            raise InvalidSpec("edge_length must be positive")
        if len(freqs) != N_CORNERS:
            raise InvalidSpec(f"expected {N_CORNERS} LED frequencies, got {len(freqs)}")
        if len(set(freqs)) != N_CORNERS:
            raise InvalidSpec("LED frequencies must be distinct")
        lo, hi = BAND_HZ
        if any(not lo <= f <= hi for f in freqs):
            raise InvalidSpec(f"LED frequencies must lie in [{lo}, {hi}] Hz")
        if self.markers_per_face * len(FACES) * 4 != 60:
            raise InvalidSpec("markers_per_face must give 60 marker corners (5 per face)")
        for face in FACES:
            if len(ids[face]) != self.markers_per_face:
                raise InvalidSpec(f"face {face!r} needs {self.markers_per_face} marker ids")
        all_ids = [i for face in FACES for i in ids[face]]
        if len(set(all_ids)) != len(all_ids):
            raise InvalidSpec("marker ids must be unique across faces")

    @property
    def square_size(self) -> float:
        return self.edge_length / BOARD_SQUARES

    def all_marker_ids(self) -> list:
        return [i for face in FACES for i in self.marker_ids[face]]

    def marker_location(self, marker_id: int) -> tuple[int, int]:
        """(face index, slot on the face) for a marker id."""
        for f, face in enumerate(FACES):
            ids = self.marker_ids[face]
            if marker_id in ids:
                return f, ids.index(marker_id)
        raise KeyError(marker_id)

    def corner_indices(self, marker_id: int) -> list:
        f, k = self.marker_location(marker_id)
        base = 20 * f + 4 * k
        return [base, base + 1, base + 2, base + 3]

    def to_dict(self) -> dict:
        return {
            "edge_length_m": self.edge_length,
            "led_frequencies_hz": list(self.led_frequencies),
            "marker_side_m": self.marker_side,
            "markers_per_face": self.markers_per_face,
            "marker_ids": {face: list(self.marker_ids[face]) for face in FACES},
            "dictionary": self.dictionary_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetSpec":
        kwargs = {}
        mapping = {
            "edge_length_m": "edge_length",
            "led_frequencies_hz": "led_frequencies",
            "marker_side_m": "marker_side",
            "markers_per_face": "markers_per_face",
            "marker_ids": "marker_ids",
            "dictionary": "dictionary_name",
        }
        unknown = set(d) - set(mapping)
        if unknown:
            raise ConfigError(f"target: unknown keys {sorted(unknown)}")
        for key, attr in mapping.items():
            if key in d:
                kwargs[attr] = d[key]
        return cls(**kwargs)

    @classmethod
    def from_toml(cls, path) -> "TargetSpec":
        from .config import read_toml

        return cls.from_dict(read_toml(Path(path)))


@dataclass(frozen=True, eq=False)
class FaceFrame:
    name: str
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    normal: np.ndarray  # points into the cube body

    @property
    def outward(self) -> np.ndarray:
        return -self.normal


@dataclass(frozen=True, eq=False)
class TargetGeometry:
    corners: np.ndarray  # (7, 3)
    aruco_corners: np.ndarray  # (60, 3)
    aruco_face: np.ndarray  # (60,) face index per marker corner
    face_frames: tuple
    edge_length: float

    def face(self, name: str) -> FaceFrame:
        return self.face_frames[FACES.index(name)]


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def build_geometry(spec: TargetSpec) -> TargetGeometry:
    L = spec.edge_length
    sq = spec.square_size
    margin = (sq - spec.marker_side) / 2.0
    if not (spec.marker_side > 0 and margin > 0):
        raise InvalidSpec(
            f"marker side {spec.marker_side} m does not fit a {sq:.4f} m ChArUco square"
        )

    axes = np.eye(3)
    corners = np.array([
        [0, 0, 0],
        [L, 0, 0], [0, L, 0], [0, 0, L],
        [L, L, 0], [0, L, L], [L, 0, L],
    ], dtype=float)

    frames = []
    aruco = np.empty((60, 3))
    face_idx = np.empty(60, dtype=int)
    for f, name in enumerate(FACES):
        n_ax, u_ax, v_ax = _FACE_AXES[name]
        u, v = axes[u_ax], axes[v_ax]
        frames.append(FaceFrame(name, _readonly(np.zeros(3)), _readonly(u), _readonly(v),
                                _readonly(axes[n_ax])))
        for k, (row, col) in enumerate(MARKER_CELLS):
            tl = (col * sq + margin) * u + (row * sq + margin) * v
            s = spec.marker_side
            quad = [tl, tl + s * u, tl + s * u + s * v, tl + s * v]
            aruco[20 * f + 4 * k: 20 * f + 4 * k + 4] = quad
            face_idx[20 * f + 4 * k: 20 * f + 4 * k + 4] = f

    return TargetGeometry(
        corners=_readonly(corners),
        aruco_corners=_readonly(aruco),
        aruco_face=_readonly(face_idx),
        face_frames=tuple(frames),
        edge_length=L,
    )


def match_tolerance(nominal: float) -> float:
    """Default frequency-match tolerance: max(2 Hz, 5 % of nominal)."""
    return max(2.0, 0.05 * nominal)


def min_frequency_gap(spec: TargetSpec) -> float:
    f = np.sort(spec.led_frequencies)
    return float(np.min(np.diff(f)))


def validate_tolerances(spec: TargetSpec, tol=None) -> None:
    """Check every LED's match window against the minimum inter-LED gap."""
    half_gap = min_frequency_gap(spec) / 2.0
    for f in spec.led_frequencies:
        t = match_tolerance(f) if tol is None else tol
        if not t < half_gap:
            raise InvalidSpec(
                f"tolerance {t:.3g} Hz at {f} Hz is not below half the minimum LED gap ({half_gap:.3g} Hz)"
            )


def corner_for_frequency(spec: TargetSpec, f: float, tol: float) -> int:
    if not tol < min_frequency_gap(spec) / 2.0:
        raise ValueError("tol must be below half the minimum gap between LED frequencies")
    hits = [i for i, nominal in enumerate(spec.led_frequencies) if abs(f - nominal) <= tol]
    if not hits:
        raise NoMatch(f"no LED within {tol} Hz of {f} Hz")
    if len(hits) > 1:
        raise AmbiguousMatch(f"{f} Hz matches corners {hits}")
    return hits[0]


def load_target(source) -> TargetSpec:
    if isinstance(source, TargetSpec):
        return source
    if isinstance(source, dict):
        return TargetSpec.from_dict(source)
    return TargetSpec.from_toml(source)
