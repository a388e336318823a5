"""LiDAR-inertial-visual odometry on a shared colored point map.

Two iterated error-state Kalman subsystems share one 29-DOF state and one
voxelized map: the LiDAR-inertial update builds the map geometry from
point-to-plane residuals, the visual-inertial update refines the pose via
reprojection and frame-to-map photometric errors while rendering the map
colors.  A deterministic planar-patch simulator and an evaluation toolkit
make every piece testable against ground truth.
"""

from .manifold import (
    ErrorState,
    FullState,
    StateWithCov,
    boxminus,
    boxplus,
    exp_so3,
    log_so3,
    tangent_projection,
)
from .imu import ImuSample, NoiseConfig, backward_compensate, propagate
from .mapping import TrackedPoint, VoxelMap, interpolate_color
from .lio import LioConfig, build_plane_residuals, lio_update
from .vio import (
    VioConfig,
    camera_point,
    frame_to_frame_update,
    frame_to_map_update,
    pnp_residual,
    photometric_residual,
    project_with_temporal,
)
from .evaluation import Trajectory, endpoint_drift, relative_pose_errors

__version__ = "0.1.0"
