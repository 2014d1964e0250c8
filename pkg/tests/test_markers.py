import json

import numpy as np
import pytest

from calibcube.errors import InvariantViolation, ParseError, UnknownMarkerId
from calibcube.markers import (
    DEFAULT_DICTIONARY,
    MarkerDetection,
    detect_markers,
    draw_marker,
    is_convex_clockwise,
    load_external_detections,
    match_to_target,
    read_image,
    refine_corners,
    write_pgm,
)
from calibcube.target import TargetSpec


def square(x0, y0, side):
    return np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]], dtype=float)


def rotated_square(center, side, angle):
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    half = side / 2.0
    base = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    return base @ R.T + center


def render(marker_id, corners, shape=(240, 240), supersample=1):
    img = np.full(shape, 255, dtype=np.uint8)
    draw_marker(img, marker_id, corners, supersample=supersample)
    return img


def test_dictionary_codes_distinct_under_rotation():
    codes = DEFAULT_DICTIONARY.codes
    for i, c in enumerate(codes):
        for k in range(4):
            d = np.sum(codes != np.rot90(c, k)[None], axis=(1, 2))
            d[i] = d[i] if k else 99
            assert d.min() >= 4


def test_fronto_parallel_marker():
    gt = square(60.5, 70.5, 96)
    dets = detect_markers(render(7, gt))
    assert len(dets) == 1 and dets[0].id == 7
    assert np.max(np.linalg.norm(dets[0].corners - gt, axis=1)) < 0.5


def test_rotated_180_reorders_corners():
    gt = square(60.5, 70.5, 96)
    rotated = np.roll(gt, 2, axis=0)  # marker drawn upside down
    dets = detect_markers(render(7, rotated))
    assert len(dets) == 1 and dets[0].id == 7
    # canonical order: first corner is the marker's own top-left
    assert np.max(np.linalg.norm(dets[0].corners - rotated, axis=1)) < 0.5


def test_blank_image():
    assert detect_markers(np.full((100, 100), 255, np.uint8)) == []


def test_small_image_rejected():
    with pytest.raises(ValueError):
        detect_markers(np.zeros((10, 10), np.uint8))


def test_several_markers_sorted_by_id():
    img = np.full((300, 400), 255, dtype=np.uint8)
    for mid, x in ((12, 20), (3, 150), (30, 280)):
        draw_marker(img, mid, square(x + 0.5, 100.5, 90))
    assert [d.id for d in detect_markers(img)] == [3, 12, 30]


def test_affine_intensity_invariance():
    gt = rotated_square((120.3, 118.7), 100, 0.4)
    img = render(21, gt, supersample=4).astype(float)
    base = detect_markers(img.astype(np.uint8))
    changed = detect_markers(np.clip(0.6 * img + 40, 0, 255).astype(np.uint8))
    assert [d.id for d in base] == [d.id for d in changed] == [21]
    assert np.max(np.abs(base[0].corners - changed[0].corners)) < 0.25


def test_random_rotations_supersampled():
    rng = np.random.default_rng(8)
    for _ in range(20):
        mid = int(rng.integers(0, 50))
        gt = rotated_square(rng.uniform(110, 130, 2), rng.uniform(60, 120), rng.uniform(0, 2 * np.pi))
        dets = detect_markers(render(mid, gt, supersample=4))
        assert [d.id for d in dets] == [mid]
        assert np.max(np.linalg.norm(dets[0].corners - gt, axis=1)) < 0.5


# --- corner refinement --------------------------------------------------------


def saddle(center, size=41, ss=8):
    """Anti-aliased chessboard saddle point at ``center``."""
    sub = (np.arange(ss) + 0.5) / ss - 0.5
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    acc = np.zeros((size, size))
    for dy in sub:
        for dx in sub:
            acc += ((xs + dx - center[0]) * (ys + dy - center[1]) > 0)
    return (255 * acc / ss ** 2).astype(np.uint8)


def test_refine_ideal_saddle():
    c = np.array([20.3, 19.6])
    refined, ok = refine_corners(saddle(c), [[21.5, 18.5]], window=5)
    assert ok[0] and np.linalg.norm(refined[0] - c) < 0.1


def test_refine_uniform_patch_flagged():
    img = np.full((40, 40), 128, np.uint8)
    refined, ok = refine_corners(img, [[20.0, 20.0]])
    assert not ok[0] and np.array_equal(refined[0], [20, 20])


def test_refine_border_corner_flagged():
    refined, ok = refine_corners(saddle([2.0, 2.0]), [[2.0, 2.0]], window=5)
    assert not ok[0] and np.array_equal(refined[0], [2, 2])


# --- external detections and matching -----------------------------------------


def write_dets(tmp_path, entries):
    path = tmp_path / "dets.json"
    path.write_text(json.dumps(entries))
    return path


def test_load_external(tmp_path):
    entries = [{"id": i, "corners": square(10 * i, 5, 8).tolist()} for i in range(15)]
    assert len(load_external_detections(write_dets(tmp_path, entries))) == 15


def test_external_concave_rejected(tmp_path):
    quad = square(0, 0, 10)
    quad[2] = [2, 2]
    with pytest.raises(InvariantViolation):
        load_external_detections(write_dets(tmp_path, [{"id": 1, "corners": quad.tolist()}]))


def test_external_counter_clockwise_rejected(tmp_path):
    with pytest.raises(InvariantViolation):
        load_external_detections(write_dets(tmp_path, [{"id": 1, "corners": square(0, 0, 10)[::-1].tolist()}]))


def test_external_unknown_id(tmp_path):
    with pytest.raises(InvariantViolation):
        load_external_detections(write_dets(tmp_path, [{"id": 999, "corners": square(0, 0, 10).tolist()}]))


def test_external_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_external_detections(path)
    with pytest.raises(ParseError):
        load_external_detections(write_dets(tmp_path, [{"id": 1, "corners": [[0, 0]]}]))


def test_match_all_and_subset():
    spec = TargetSpec()
    dets = [MarkerDetection(i, square(i, 0, 5)) for i in spec.all_marker_ids()]
    matched = match_to_target(dets, spec)
    assert list(matched) == list(range(60))
    assert len(match_to_target(dets[:4], spec)) == 16
    with pytest.raises(UnknownMarkerId):
        match_to_target([MarkerDetection(40, square(0, 0, 5))], spec)


def test_match_keeps_larger_duplicate():
    spec = TargetSpec()
    small, big = MarkerDetection(2, square(0, 0, 5)), MarkerDetection(2, square(0, 0, 9))
    matched = match_to_target([small, big], spec)
    assert np.array_equal(matched[spec.corner_indices(2)[2]], [9, 9])


def test_convexity_helper():
    assert is_convex_clockwise(square(0, 0, 1))
    assert not is_convex_clockwise(square(0, 0, 1)[::-1])


def test_pgm_round_trip(tmp_path):
    img = (np.arange(35 * 40) % 256).astype(np.uint8).reshape(35, 40)
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_image(tmp_path / "a.pgm"), img)
