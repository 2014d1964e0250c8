"""One-shot extrinsic calibration of an event camera, a LiDAR and an RGB camera
from a single view of an LED-instrumented ChArUco cube, plus a synthetic
scene generator with known ground truth."""

from .geometry import CameraIntrinsics, Plane, Pose, compose, invert, project
from .target import TargetSpec, build_geometry

__version__ = "0.1.0"

__all__ = ["CameraIntrinsics", "Plane", "Pose", "TargetSpec", "build_geometry", "compose", "invert", "project"]
