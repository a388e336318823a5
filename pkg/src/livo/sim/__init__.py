from .world import Patch, SimWorld, wall_patch
from .trajectory import TrajectorySpec, circle_spec, static_spec
from .sensors import (
    Calibration,
    CameraFrame,
    LidarScan,
    RasterPattern,
    calibration_offsets,
    camera_pose,
    perturb_calibration,
    synth_camera_image,
    synth_imu,
    synth_lidar_scan,
)
from .dataset import SequenceData, read_sequence, write_sequence
from .presets import PRESETS, Scenario, make_scenario

__all__ = [
    "Patch", "SimWorld", "wall_patch",
    "TrajectorySpec", "circle_spec", "static_spec",
    "Calibration", "CameraFrame", "LidarScan", "RasterPattern",
    "calibration_offsets", "camera_pose", "perturb_calibration",
    "synth_camera_image", "synth_imu", "synth_lidar_scan",
    "SequenceData", "read_sequence", "write_sequence",
    "PRESETS", "Scenario", "make_scenario",
]
