"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time
from dataclasses import replace

import numpy as np
import pytest

from calibcube.cli import EXIT_OK, main
from calibcube.ellipse import fit_ellipse
from calibcube.events import (
    FrequencyConfig,
    FrequencyMap,
    detect_led_keypoints,
    estimate_frequency_map,
    select_best_map,
)
from calibcube.geometry import Pose, pose_errors, project
from calibcube.lidar import RansacParams, detect_cube, sequential_ransac_planes
from calibcube.markers import detect_markers, draw_marker, match_to_target
from calibcube.pipeline import PipelineConfig, run_calibration
from calibcube.pnp import (
    CorrespondenceSet,
    ReprojectionStats,
    aggregate_by_type,
    calibrate_event_lidar,
    calibrate_rgb_lidar,
    project_with_jacobian,
    reprojection_stats,
    solve_pnp,
)
from calibcube.simulator import (
    SceneConfig,
    led_footprints,
    realistic_scene,
    simulate_cloud,
    simulate_events,
    simulate_rgb,
    write_scene,
)
from calibcube.target import build_geometry
from test_ellipse import ellipse_points
from test_lidar import normal_errors_deg
from test_pnp import numeric_jacobian, viewing_pose


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


def calibrate_scene(cfg):
    """Both calibrations from in-memory simulator output (detections bypass the detector)."""
    geo = build_geometry(cfg.target)
    events = simulate_events(cfg)
    det = detect_led_keypoints(events, cfg.event_K.width, cfg.event_K.height, cfg.target)
    cube = detect_cube(simulate_cloud(cfg), geo)
    _, dets = simulate_rgb(cfg)
    ev, ev_stats = calibrate_event_lidar(cube.corners, det.keypoints, cfg.event_K)
    rgb, rgb_stats = calibrate_rgb_lidar(cube.aruco_corners, match_to_target(dets, cfg.target), cfg.rgb_K)
    return (
        (ev_stats.mean, *pose_errors(ev.pose, cfg.gt_pose_lidar_to_event)),
        (rgb_stats.mean, *pose_errors(rgb.pose, cfg.gt_pose_lidar_to_rgb)),
    )


def test_1_realistic_scenes(verdict):
    t0 = time.perf_counter()
    rows = [calibrate_scene(realistic_scene(seed)) for seed in range(20)]
    elapsed = time.perf_counter() - t0
    ev = np.array([r[0] for r in rows])
    rgb = np.array([r[1] for r in rows])
    med_ev, med_rgb = np.median(ev[:, 0]), np.median(rgb[:, 0])
    rot = np.degrees(max(ev[:, 1].max(), rgb[:, 1].max()))
    trans = max(ev[:, 2].max(), rgb[:, 2].max())
    ok = med_ev <= 3.0 and med_rgb <= 1.5 and rot <= 0.5 and trans <= 0.02 and elapsed <= 60.0
    verdict(1, ok, f"median E_mean event {med_ev:.3f} px, rgb {med_rgb:.3f} px; worst rotation {rot:.3f} deg, "
                   f"worst translation {100 * trans:.2f} cm; {elapsed:.1f} s for 20 scenes")


def test_2_noiseless_end_to_end(verdict, tmp_path):
    cfg = SceneConfig()
    t0 = time.perf_counter()
    write_scene(cfg, tmp_path)
    run = run_calibration(PipelineConfig.from_toml(tmp_path / "pipeline.toml"))
    elapsed = time.perf_counter() - t0
    assert run.ok, run.errors
    ev, rgb = [
        (run.results[name][1].mean, *pose_errors(run.results[name][0].pose, gt))
        for name, gt in (("event_lidar", cfg.gt_pose_lidar_to_event), ("rgb_lidar", cfg.gt_pose_lidar_to_rgb))
    ]
    rot = np.degrees(max(ev[1], rgb[1]))
    trans = max(ev[2], rgb[2])
    ok = rot <= 0.05 and trans <= 0.002 and max(ev[0], rgb[0]) <= 0.5 and elapsed <= 10.0
    verdict(2, ok, f"rotation {rot:.4f} deg, translation {1000 * trans:.3f} mm, "
                   f"E_mean event {ev[0]:.3f} px / rgb {rgb[0]:.3f} px, {elapsed:.1f} s")


def whole_stream_map(cfg, frequencies=None):
    events = simulate_events(cfg, frequencies=frequencies)
    config = FrequencyConfig(n_segments=1)
    return estimate_frequency_map(events, (0.0, cfg.duration * 1e6), config, cfg.event_K.width, cfg.event_K.height)


def test_3_frequency_recovery(verdict):
    cfg = SceneConfig(duration=1.0)
    fmap = whole_stream_map(cfg).values
    worst = 0.0
    for (_, pix), f in zip(led_footprints(cfg), cfg.target.led_frequencies):
        worst = max(worst, float(np.max(np.abs(fmap[pix[:, 1], pix[:, 0]] - f))))
    low = np.count_nonzero(whole_stream_map(cfg, [5.0] * 7).values)
    high = np.count_nonzero(whole_stream_map(cfg, [250.0] * 7).values)
    ok = worst <= 1.0 and low == 0 and high == 0
    verdict(3, ok, f"worst LED pixel error {worst:.3f} Hz; nonzero pixels at 5 Hz: {low}, at 250 Hz: {high}")


def box_map(box, shape=(480, 640)):
    v = np.zeros(shape)
    x0, y0, x1, y1 = box
    v[y0, x0] = v[y1, x1] = 50.0
    return FrequencyMap(values=v, segment=(0.0, 1.0))


def test_4_best_map_selection(verdict):
    wrong = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cx, cy = rng.uniform(260, 380), rng.uniform(180, 300)
        w, h = rng.uniform(20, 40), rng.uniform(20, 40)
        boxes = []
        for _ in range(10):
            j = rng.integers(-1, 2, 4)
            boxes.append([int(cx - w / 2) + j[0], int(cy - h / 2) + j[1], int(cx + w / 2) + j[2], int(cy + h / 2) + j[3]])
        bad = int(rng.integers(0, 10))
        x0, y0, x1, y1 = boxes[bad]
        mx, my, hw, hh = (x0 + x1) / 2, (y0 + y1) / 2, 5 * (x1 - x0), 5 * (y1 - y0)
        boxes[bad] = [int(max(mx - hw, 0)), int(max(my - hh, 0)), int(min(mx + hw, 639)), int(min(my + hh, 479))]
        wrong += select_best_map([box_map(b) for b in boxes]) == bad
    verdict(4, wrong == 0, f"corrupted map selected in {wrong} of 100 seeds")


def test_5_ransac_planes(verdict):
    worst = 0.0
    for seed in range(100):
        cfg = SceneConfig(points_per_face=500, lidar_noise_sigma=0.005, lidar_outlier_fraction=0.2, seed=seed)
        fits = sequential_ransac_planes(simulate_cloud(cfg), RansacParams(seed=seed))
        worst = max(worst, max(normal_errors_deg([f.plane for f in fits], cfg)))
    cfg = SceneConfig(points_per_face=500, lidar_noise_sigma=0.005, lidar_outlier_fraction=0.2, seed=7)
    runs = [sequential_ransac_planes(simulate_cloud(cfg), RansacParams(seed=7)) for _ in range(2)]
    same = all(
        a.plane.normal.tobytes() == b.plane.normal.tobytes() and a.plane.offset == b.plane.offset
        for a, b in zip(*runs)
    )
    verdict(5, worst <= 1.0 and same, f"worst normal error {worst:.3f} deg over 100 seeds; bit-identical rerun: {same}")


def test_6_ellipse_fitting(verdict):
    rng = np.random.default_rng(0)
    exact_worst, errs = 0.0, []
    for _ in range(100):
        c = rng.uniform(20, 600, 2)
        a, b = rng.uniform(3, 12), rng.uniform(2, 8)
        angle = rng.uniform(0, np.pi)
        exact_worst = max(exact_worst, float(np.linalg.norm(fit_ellipse(ellipse_points(c, a, b, angle, 30)).center - c)))
        pts = ellipse_points(c, a, b, angle, 30) + rng.normal(0, 0.3, (30, 2))
        errs.append(np.linalg.norm(fit_ellipse(pts).center - c))
    errs = np.array(errs)
    rms = float(np.sqrt(np.mean(errs ** 2)))
    ok = exact_worst < 1e-6 and rms < 0.15
    verdict(6, ok, f"exact samples worst {exact_worst:.2e} px; noisy RMS centre error {rms:.3f} px "
                   f"(max {errs.max():.3f} px, {np.mean(errs < 0.15):.0%} of seeds below 0.15 px)")


def test_7_pnp_oracle(verdict, cam_dist):
    geo = build_geometry(SceneConfig().target)
    rng = np.random.default_rng(7)
    worst_rot = worst_t = 0.0
    for X in (geo.corners, geo.aruco_corners):
        for _ in range(1000):
            gt = viewing_pose(rng)
            corrs = CorrespondenceSet(X, project(X, gt, cam_dist), tuple(range(len(X))), cam_dist)
            rot, trans = pose_errors(solve_pnp(corrs).pose, gt)
            worst_rot, worst_t = max(worst_rot, rot), max(worst_t, trans)
    worst_j = 0.0
    for _ in range(100):
        pose = viewing_pose(rng)
        _, J = project_with_jacobian(geo.corners, pose.R, pose.t, cam_dist)
        Jn = numeric_jacobian(geo.corners, pose.R, pose.t, cam_dist)
        worst_j = max(worst_j, float(np.linalg.norm(J - Jn) / np.linalg.norm(J)))
    ok = worst_rot < 1e-6 and worst_t < 1e-6 and worst_j < 1e-5
    verdict(7, ok, f"worst rotation {worst_rot:.2e} rad, translation {worst_t:.2e} m over 2000 solves; "
                   f"Jacobian relative error {worst_j:.2e}")


def test_8_marker_detection(verdict):
    rng = np.random.default_rng(8)
    wrong, worst = 0, 0.0
    for _ in range(200):
        side = rng.uniform(60, 140)
        theta = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        quad = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * side / 2 @ np.array([[c, s], [-s, c]]) + rng.uniform(
            100, 140, 2)
        marker_id = int(rng.integers(0, 50))
        img = np.full((240, 240), 255, np.uint8)
        draw_marker(img, marker_id, quad, supersample=4)
        dets = detect_markers(img)
        if [d.id for d in dets] != [marker_id]:
            wrong += 1
            continue
        worst = max(worst, float(np.max(np.linalg.norm(dets[0].corners - quad, axis=1))))
    verdict(8, wrong == 0 and worst < 0.5, f"{200 - wrong}/200 correct ids, worst corner error {worst:.3f} px")


def test_9_metric_units(verdict, cam):
    X = np.array([[0.1, -0.2, 3.0]])
    uv = project(X, Pose.identity(), cam) + [3.0, 4.0]
    e = reprojection_stats(CorrespondenceSet(X, uv, ("a",), cam), Pose.identity()).mean
    agg = aggregate_by_type([("event", ReprojectionStats(2.0, 2.0, (), 1)), ("event", ReprojectionStats(3.0, 3.0, (), 1))])
    verdict(9, e == 5.0 and agg == {"event": 2.5}, f"E_mean of (3,4) residual = {e!r}; aggregate = {agg}")


def test_10_reproducibility(verdict, tmp_path):
    write_scene(SceneConfig(), tmp_path / "scene")
    config = str(tmp_path / "scene" / "pipeline.toml")
    codes = [main(["calibrate", "--config", config, "--out", str(tmp_path / run)]) for run in ("a", "b")]
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    ok = codes == [EXIT_OK, EXIT_OK] and same and any(n.endswith(".svg") for n in names)
    verdict(10, ok, f"exit codes {codes}; {len(names)} files ({', '.join(names)}) byte-identical: {same}")
