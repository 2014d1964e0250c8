import numpy as np
import pytest

from calibcube.geometry import CameraIntrinsics, Pose
from calibcube.simulator import SceneConfig, simulate_cloud, simulate_events, simulate_rgb


def random_pose(rng, max_angle=np.pi, t_scale=1.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose.from_rotvec(axis * rng.uniform(0, max_angle), rng.normal(scale=t_scale, size=3))


@pytest.fixture(scope="session")
def scene():
    return SceneConfig()


@pytest.fixture(scope="session")
def scene_data(scene):
    img, dets = simulate_rgb(scene)
    return {"events": simulate_events(scene), "cloud": simulate_cloud(scene), "image": img, "detections": dets}


@pytest.fixture
def cam():
    return CameraIntrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def cam_dist():
    return CameraIntrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0, dist=(-0.12, 0.03, 0.001, -0.0015, 0.0),
                            width=640, height=480)
