import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibcube.errors import BehindCamera, ConfigError
from calibcube.geometry import (
    CameraIntrinsics,
    Plane,
    Pose,
    compose,
    distort,
    invert,
    load_intrinsics,
    matrix_to_quat,
    project,
    quat_to_matrix,
    rotation_angle,
    undistort,
)

from conftest import random_pose

finite = st.floats(-1.0, 1.0, allow_nan=False)


@st.composite
def poses(draw):
    q = np.array([draw(finite) for _ in range(4)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    t = [draw(st.floats(-5, 5)) for _ in range(3)]
    return Pose(q, t)


def test_compose_identity():
    p = compose(Pose.identity(), Pose.identity())
    assert np.allclose(p.matrix(), np.eye(4))


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        assert np.allclose(compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_invert_pure_translation():
    p = invert(Pose(translation=(1.0, 2.0, 3.0)))
    assert np.allclose(p.translation, [-1, -2, -3])
    assert np.allclose(p.R, np.eye(3))


def test_invert_matches_matrix_inverse():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = random_pose(rng)
        assert np.allclose(invert(p).matrix(), np.linalg.inv(p.matrix()), atol=1e-12)
        assert np.allclose(compose(p, invert(p)).matrix(), np.eye(4), atol=1e-9)


def test_invert_identity():
    assert np.allclose(invert(Pose.identity()).matrix(), np.eye(4))


@settings(max_examples=60, deadline=None)
@given(poses(), poses())
def test_compose_with_inverse_is_noop(p, q):
    r = compose(p, compose(q, invert(q)))
    assert np.allclose(r.matrix(), p.matrix(), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(poses())
def test_rotation_is_orthonormal(p):
    R = p.R
    assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9
    assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-9


def test_quaternion_matrix_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        R = random_pose(rng).R
        assert np.allclose(quat_to_matrix(matrix_to_quat(R)), R, atol=1e-12)


def test_project_simple_cases():
    K1 = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, width=2, height=2)
    assert np.allclose(project([0, 0, 1], Pose.identity(), K1), [0, 0])
    K = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, width=200, height=200)
    assert np.allclose(project([0.1, 0.2, 1.0], Pose.identity(), K), [60, 70])


def test_project_radial_distortion_by_hand():
    K = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, dist=(0.1, 0, 0, 0, 0), width=200, height=200)
    # r^2 = 0.01 -> x' = 0.1 * (1 + 0.1 * 0.01) = 0.1001
    assert np.allclose(project([0.1, 0.0, 1.0], Pose.identity(), K), [50 + 100 * 0.1001, 50])


def test_project_behind_camera():
    K = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, width=200, height=200)
    with pytest.raises(BehindCamera):
        project([0.0, 0.0, -1.0], Pose.identity(), K)
    with pytest.raises(BehindCamera):
        project([0.0, 0.0, 0.0], Pose.identity(), K)


def test_project_equivariance(cam_dist):
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = random_pose(rng, max_angle=0.2, t_scale=0.1)
        b = random_pose(rng, max_angle=0.2, t_scale=0.1)
        X = rng.uniform(-0.5, 0.5, (10, 3)) + [0, 0, 4]
        X = invert(compose(a, b)).transform(X)  # make sure points land in front
        lhs = project(X, compose(a, b), cam_dist)
        rhs = project(b.transform(X), a, cam_dist)
        assert np.allclose(lhs, rhs, atol=1e-9)


def test_undistort_zero_distortion(cam):
    p = np.array([[10.0, 20.0], [300.5, 400.25]])
    assert np.allclose(undistort(p, cam), p)


def test_undistort_round_trip(cam_dist):
    rng = np.random.default_rng(5)
    p = rng.uniform([20, 20], [620, 460], (200, 2))
    assert np.max(np.abs(distort(undistort(p, cam_dist), cam_dist) - p)) < 1e-6


def test_undistort_inverts_forward_example():
    K = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, dist=(0.1, 0, 0, 0, 0), width=200, height=200)
    forward = project([0.1, 0.0, 1.0], Pose.identity(), K)
    assert np.allclose(undistort(forward, K), [60.0, 50.0], atol=1e-9)


def test_rotation_angle():
    R = Pose.from_rotvec([0, 0, np.radians(30)]).R
    assert rotation_angle(np.eye(3), R) == pytest.approx(np.radians(30), abs=1e-12)


def test_plane_distance_and_transform():
    pl = Plane([0, 0, 2.0], 2.0)  # normalised to z = 1
    assert np.allclose(pl.normal, [0, 0, 1]) and pl.offset == pytest.approx(1.0)
    assert pl.distance(np.array([[0, 0, 3.0]]))[0] == pytest.approx(2.0)
    p = Pose(translation=(0, 0, 1.0))
    assert pl.transformed(p).offset == pytest.approx(2.0)


def test_intrinsics_validation_and_loading(tmp_path):
    with pytest.raises(ConfigError):
        CameraIntrinsics(-1.0, 1.0, 0.0, 0.0)
    with pytest.raises(ConfigError):
        CameraIntrinsics(1.0, 1.0, 700.0, 0.0, width=640, height=480)
    f = tmp_path / "cam.toml"
    f.write_text("fx = 400.0\nfy = 410.0\ncx = 300.0\ncy = 200.0\ndist = [0.1, 0.0, 0.0, 0.0, 0.0]\n"
                 "width = 640\nheight = 480\n")
    K = load_intrinsics(f)
    assert K.fy == 410.0 and K.dist[0] == 0.1
