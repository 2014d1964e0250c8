"""LED keypoints from an event stream.

Pipeline: per-pixel square-wave reconstruction over fixed temporal bins,
FFT peak picking with a band-pass, bounding-box consensus across segment
maps, then one ellipse per LED frequency on the selected map.

Events are held in a numpy structured array with :data:`EVENT_DTYPE`
(``x``, ``y``, ``t`` in microseconds, ``p`` in {-1, +1}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .ellipse import Ellipse, fit_ellipse
from .errors import (
    CalibError,
    ConfigError,
    MissingLeds,
    NoValidMap,
    ParseError,
    SegmentTooShort,
)
from .target import TargetSpec, match_tolerance

EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])
MIN_KEYPOINTS = 4


def make_events(x, y, t, p) -> np.ndarray:
    ev = np.empty(len(t), dtype=EVENT_DTYPE)
    ev["x"], ev["y"], ev["t"], ev["p"] = x, y, t, p
    return ev


def sort_events(ev: np.ndarray) -> np.ndarray:
    return ev[np.argsort(ev["t"], kind="stable")]


# ---------------------------------------------------------------------------
# configuration and result types


@dataclass(frozen=True)
class FrequencyConfig:
    bin_dt: float = 1000.0  # microseconds
    n_segments: int = 10
    band: tuple = (10.0, 200.0)
    min_active_bins: int = 6

    def __post_init__(self):
        band = (float(self.band[0]), float(self.band[1]))
        object.__setattr__(self, "band", band)
        if not self.bin_dt > 0:
            raise ConfigError("bin_dt must be positive")
        if self.n_segments < 1 or self.min_active_bins < 1:
            raise ConfigError("n_segments and min_active_bins must be >= 1")
        if not 0 < band[0] < band[1]:
            raise ConfigError("band must satisfy 0 < f_min < f_max")
        if not band[1] < self.nyquist:
            raise ConfigError(f"f_max {band[1]} Hz violates Nyquist ({self.nyquist} Hz)")

    @property
    def sample_rate(self) -> float:
        return 1e6 / self.bin_dt

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def to_dict(self) -> dict:
        return {
            "bin_dt_us": self.bin_dt,
            "n_segments": self.n_segments,
            "band_hz": list(self.band),
            "min_active_bins": self.min_active_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyConfig":
        return cls(
            bin_dt=float(d.get("bin_dt_us", 1000.0)),
            n_segments=int(d.get("n_segments", 10)),
            band=tuple(d.get("band_hz", (10.0, 200.0))),
            min_active_bins=int(d.get("min_active_bins", 6)),
        )


@dataclass(frozen=True, eq=False)
class FrequencyMap:
    values: np.ndarray  # (height, width) Hz, 0 = no frequency
    segment: tuple  # [t_start, t_end) microseconds

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("bounding box min must not exceed max")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=float)

    def to_list(self) -> list:
        return [float(v) for v in self.as_array()]


@dataclass(frozen=True)
class MapSelection:
    index: int
    reference: BoundingBox
    kept: tuple
    boxes: tuple  # BoundingBox or None per input map


@dataclass(frozen=True, eq=False)
class LedKeypoint:
    corner_index: int
    center: np.ndarray
    ellipse: Ellipse | None
    frequency: float
    n_pixels: int = 0
    degraded: bool = False


@dataclass
class EventDetection:
    keypoints: list
    maps: list
    selection: MapSelection
    missing: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# square wave + frequency map


def _pixel_signals(pix, t, p, t_start, n_bins, bin_dt, n_pixels):
    """±1 square wave per pixel; ``pix`` holds dense pixel ids 0..n_pixels-1."""
    b = np.floor((t.astype(np.float64) - t_start) / bin_dt).astype(np.int64)
    ok = (b >= 0) & (b < n_bins)
    votes = np.zeros((n_pixels, n_bins), dtype=np.int64)
    np.add.at(votes, (pix[ok], b[ok]), p[ok].astype(np.int64))
    s = np.sign(votes)
    # hold previous value on ties/empty bins; start "LED off"
    idx = np.where(s != 0, np.arange(n_bins), -1)
    idx = np.maximum.accumulate(idx, axis=1)
    held = np.take_along_axis(s, np.maximum(idx, 0), axis=1)
    return np.where(idx >= 0, held, -1).astype(np.int8)


def build_pixel_signal(t_us, polarity, t_start, n_bins, config: FrequencyConfig) -> np.ndarray:
    """Binary (±1) signal of one pixel over ``n_bins`` bins from ``t_start``."""
    t = np.asarray(t_us, dtype=np.float64)
    p = np.asarray(polarity, dtype=np.int64)
    pix = np.zeros(len(t), dtype=np.int64)
    return _pixel_signals(pix, t, p, float(t_start), int(n_bins), config.bin_dt, 1)[0]


def fft_length(n_bins: int) -> int:
    return 1 << int(math.ceil(math.log2(max(4 * n_bins, 2))))


def dominant_frequency(signals: np.ndarray, config: FrequencyConfig) -> np.ndarray:
    """Peak frequency (Hz) of each row; 0 when out of band or flat."""
    signals = np.atleast_2d(signals).astype(np.float64)
    n_bins = signals.shape[1]
    nfft = fft_length(n_bins)
    x = signals - signals.mean(axis=1, keepdims=True)
    mag = np.abs(np.fft.rfft(x, n=nfft, axis=1))
    mag[:, 0] = 0.0
    k = np.argmax(mag, axis=1)
    rows = np.arange(len(k))
    peak = mag[rows, k]
    kk = np.clip(k, 1, mag.shape[1] - 2)
    a, b, c = mag[rows, kk - 1], mag[rows, kk], mag[rows, kk + 1]
    denom = a - 2 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where((kk == k) & (denom < 0), 0.5 * (a - c) / denom, 0.0)
    freq = (k + delta) * config.sample_rate / nfft
    lo, hi = config.band
    freq = np.where((peak > 1e-9) & (freq >= lo) & (freq <= hi), freq, 0.0)
    return freq


def estimate_frequency_map(events, segment, config: FrequencyConfig, width: int, height: int) -> FrequencyMap:
    t0, t1 = float(segment[0]), float(segment[1])
    if t1 - t0 < 2 * config.min_active_bins * config.bin_dt:
        raise SegmentTooShort(
            f"segment of {t1 - t0:.0f} us is shorter than 2*min_active_bins*bin_dt"
        )
    n_bins = int((t1 - t0) // config.bin_dt)
    values = np.zeros((height, width), dtype=np.float64)
    t = events["t"]
    lo, hi = np.searchsorted(t, [t0, t1], side="left")
    ev = events[lo:hi]
    # drop the partial tail that does not fill a whole bin
    b = np.floor((ev["t"].astype(np.float64) - t0) / config.bin_dt).astype(np.int64)
    ev, b = ev[b < n_bins], b[b < n_bins]
    if len(ev):
        lin = ev["y"].astype(np.int64) * width + ev["x"].astype(np.int64)
        uniq, pix = np.unique(lin, return_inverse=True)
        pairs = np.unique(pix * n_bins + b)
        active = np.bincount(pairs // n_bins, minlength=len(uniq))
        keep = active >= config.min_active_bins
        if np.any(keep):
            remap = np.full(len(uniq), -1, dtype=np.int64)
            remap[keep] = np.arange(int(keep.sum()))
            sel = keep[pix]
            sig = _pixel_signals(remap[pix[sel]], ev["t"][sel], ev["p"][sel], t0, n_bins,
                                 config.bin_dt, int(keep.sum()))
            freq = dominant_frequency(sig, config)
            ys, xs = np.divmod(uniq[keep], width)
            values[ys, xs] = freq
    values.setflags(write=False)
    return FrequencyMap(values=values, segment=(t0, t1))


def segment_bounds(events, n_segments: int) -> list:
    """Equal-duration segments covering the stream."""
    if len(events) == 0:
        return []
    start = float(events["t"][0])
    end = float(events["t"][-1]) + 1.0
    edges = np.linspace(start, end, n_segments + 1)
    return [(float(edges[i]), float(edges[i + 1])) for i in range(n_segments)]


# ---------------------------------------------------------------------------
# bounding boxes and best-map consensus


def active_bbox(fmap: FrequencyMap) -> BoundingBox | None:
    ys, xs = np.nonzero(fmap.values)
    if xs.size == 0:
        return None
    return BoundingBox(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))


def _fmean(col):
    return math.fsum(col) / len(col)


def rank_maps(maps) -> MapSelection:
    """Best map by bbox consensus: 3-sigma rejection, then L1 to the mean box."""
    boxes = tuple(active_bbox(m) for m in maps)
    valid = [i for i, b in enumerate(boxes) if b is not None]
    if not valid:
        raise NoValidMap("every frequency map is empty")
    coords = np.array([boxes[i].as_array() for i in valid])

    kept = []
    mean = [_fmean(coords[:, j]) for j in range(4)]
    sigma = [math.sqrt(_fmean((coords[:, j] - mean[j]) ** 2)) for j in range(4)]
    for row, i in enumerate(valid):
        outlier = any(
            sigma[j] > 0 and abs(coords[row, j] - mean[j]) >= 3.0 * sigma[j] * (1 - 1e-12)
            for j in range(4)
        )
        if not outlier:
            kept.append(row)
    if not kept:
        raise NoValidMap("3-sigma rejection removed every map")

    ref = np.array([_fmean(coords[kept, j]) for j in range(4)])
    dist = [math.fsum(np.abs(coords[row] - ref)) for row in kept]
    best = kept[int(np.argmin(dist))]
    return MapSelection(
        index=valid[best],
        reference=BoundingBox(*ref),
        kept=tuple(valid[r] for r in kept),
        boxes=boxes,
    )


def select_best_map(maps) -> int:
    return rank_maps(maps).index


# ---------------------------------------------------------------------------
# LED keypoints


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels having at least one 8-connected neighbour outside the mask."""
    inner = ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool), border_value=0)
    return mask & ~inner


def _largest_component(mask):
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), bool))
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (1 + int(np.argmax(sizes)))


def extract_led_keypoints(fmap: FrequencyMap, bbox: BoundingBox, spec: TargetSpec, tol=None) -> list:
    vals = fmap.values
    h, w = vals.shape
    roi = np.zeros((h, w), dtype=bool)
    x0, y0, x1, y1 = (int(round(v)) for v in bbox.as_array())
    roi[max(y0, 0):min(y1, h - 1) + 1, max(x0, 0):min(x1, w - 1) + 1] = True

    keypoints, missing = [], []
    for i, nominal in enumerate(spec.led_frequencies):
        t = match_tolerance(nominal) if tol is None else tol
        mask = roi & (vals != 0) & (np.abs(vals - nominal) <= t)
        if not mask.any():
            missing.append(i)
            continue
        mask = _largest_component(mask)
        freq = float(np.median(vals[mask]))
        ys, xs = np.nonzero(mask_boundary(mask))
        try:
            ell = fit_ellipse(np.column_stack([xs, ys]).astype(float))
            keypoints.append(LedKeypoint(i, ell.center, ell, freq, int(mask.sum())))
        except CalibError:
            if mask.sum() >= 3:
                my, mx = np.nonzero(mask)
                centroid = np.array([mx.mean(), my.mean()])
                keypoints.append(LedKeypoint(i, centroid, None, freq, int(mask.sum()), degraded=True))
            else:
                missing.append(i)
    if len(keypoints) < MIN_KEYPOINTS:
        raise MissingLeds(missing)
    return keypoints


def detect_led_keypoints(events, width: int, height: int, spec: TargetSpec,
                         config: FrequencyConfig = FrequencyConfig(), tol=None) -> EventDetection:
    """Full event branch: segment maps -> best map -> LED keypoints."""
    segments = segment_bounds(events, config.n_segments)
    if not segments:
        raise NoValidMap("event stream is empty")
    maps = [estimate_frequency_map(events, seg, config, width, height) for seg in segments]
    selection = rank_maps(maps)
    best = maps[selection.index]
    keypoints = extract_led_keypoints(best, selection.boxes[selection.index], spec, tol)
    found = {k.corner_index for k in keypoints}
    missing = [i for i in range(len(spec.led_frequencies)) if i not in found]
    return EventDetection(keypoints=keypoints, maps=maps, selection=selection, missing=missing)


# ---------------------------------------------------------------------------
# file IO


def read_events(path) -> np.ndarray:
    """Load ``.csv`` (x,y,t_us,polarity with header) or packed ``.evb``."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".evb":
        raw = path.read_bytes()
        if len(raw) % EVENT_DTYPE.itemsize:
            raise ParseError(f"{path}: size is not a multiple of {EVENT_DTYPE.itemsize}-byte records")
        ev = np.frombuffer(raw, dtype=EVENT_DTYPE).copy()
    elif suffix == ".csv":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().replace(" ", "")
            if header != "x,y,t_us,polarity":
                raise ParseError(f"{path}: expected header 'x,y,t_us,polarity', got {header!r}")
            try:
                data = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}") from exc
        if data.size == 0:
            data = np.zeros((0, 4), dtype=np.int64)
        if data.shape[1] != 4:
            raise ParseError(f"{path}: expected 4 columns")
        ev = make_events(data[:, 0], data[:, 1], data[:, 2], data[:, 3])
    else:
        raise ParseError(f"{path}: unknown event file extension {suffix!r}")
    if len(ev) and not np.all(np.abs(ev["p"]) == 1):
        raise ParseError(f"{path}: polarity must be +1 or -1")
    return sort_events(ev)


def write_events(path, events: np.ndarray) -> None:
    path = Path(path)
    ev = np.asarray(events, dtype=EVENT_DTYPE)
    if path.suffix.lower() == ".evb":
        path.write_bytes(ev.tobytes())
    elif path.suffix.lower() == ".csv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("x,y,t_us,polarity\n")
            for x, y, t, p in zip(ev["x"].tolist(), ev["y"].tolist(), ev["t"].tolist(), ev["p"].tolist()):
                fh.write(f"{x},{y},{t},{p}\n")
    else:
        raise ParseError(f"{path}: unknown event file extension")
