"""Sensor synthesis: IMU, LiDAR scans and camera frames with ground truth.

Every function here is a pure function of (spec, world, config, seed); the
same arguments always give bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..imu import ImuSample, NoiseConfig
from ..manifold import exp_so3, log_so3
from .trajectory import TrajectorySpec
from .world import SimWorld


@dataclass
class LidarScan:
    times: np.ndarray       # (N,) seconds, absolute
    points: np.ndarray      # (N,3) in sensor frame
    t_start: float
    t_end: float
    patch_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.patch_ids is not None:
            self.patch_ids = np.asarray(self.patch_ids, dtype=int)

    def __len__(self):
        return len(self.times)

    def with_points(self, points):
        return replace(self, points=np.asarray(points, dtype=float))


@dataclass
class CameraFrame:
    t: float
    image: np.ndarray       # (H, W, 3) in [0, 1]

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=float)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("image must be HxWx3")
        if min(self.image.shape[:2]) < 1:
            raise ValueError("image must be non-empty")

    @property
    def height(self):
        return self.image.shape[0]

    @property
    def width(self):
        return self.image.shape[1]


@dataclass
class Calibration:
    """Camera-IMU calibration plus pinhole intrinsics and image size."""

    R_IC: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_IC: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_IC: float = 0.0
    intrinsics: np.ndarray = field(
        default_factory=lambda: np.array([500.0, 500.0, 320.0, 240.0])
    )
    width: int = 640
    height: int = 480

    def copy(self):
        return Calibration(self.R_IC.copy(), self.p_IC.copy(), float(self.t_IC),
                           self.intrinsics.copy(), self.width, self.height)


@dataclass
class RasterPattern:
    """Raster scan pattern: a grid of rays about the sensor x axis.

    Emit times are spread linearly over the scan period, row by row, which
    produces realistic in-scan motion distortion.
    """

    n_az: int = 24
    n_el: int = 10
    fov_az: float = np.deg2rad(70.0)
    fov_el: float = np.deg2rad(70.0)

    def rays(self):
        az = np.linspace(-self.fov_az / 2, self.fov_az / 2, self.n_az)
        el = np.linspace(-self.fov_el / 2, self.fov_el / 2, self.n_el)
        A, E = np.meshgrid(az, el)
        a, e = A.ravel(), E.ravel()
        dirs = np.stack(
            [np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=1
        )
        frac = np.linspace(0.0, 1.0, len(dirs), endpoint=False)
        return frac, dirs


def synth_imu(spec: TrajectorySpec, world: SimWorld, noise: NoiseConfig,
              seed: int, init_bg=(0, 0, 0), init_ba=(0, 0, 0)):
    """Gyro/accel stream with measurement noise and bias random walks."""
    rng = np.random.default_rng(seed)
    dt = 1.0 / spec.imu_rate
    times = np.arange(0.0, spec.duration + 0.5 * dt, dt)
    g = world.gravity
    bg = np.asarray(init_bg, dtype=float).copy()
    ba = np.asarray(init_ba, dtype=float).copy()
    samples = []
    for t in times:
        R, _, _, w, a = spec.sample(min(t, spec.duration))
        n_g = rng.normal(0.0, noise.sigma_g / np.sqrt(dt), 3)
        n_a = rng.normal(0.0, noise.sigma_a / np.sqrt(dt), 3)
        samples.append(ImuSample(t=float(t),
                                 gyro=w + bg + n_g,
                                 accel=R.T @ (a - g) + ba + n_a))
        bg = bg + rng.normal(0.0, noise.sigma_bg * np.sqrt(dt), 3)
        ba = ba + rng.normal(0.0, noise.sigma_ba * np.sqrt(dt), 3)
    return samples


def synth_lidar_scan(spec: TrajectorySpec, world: SimWorld, t_start: float,
                     t_end: float, pattern: RasterPattern,
                     range_noise: float, seed: int, max_range: float = 100.0):
    """One scan: returns (distorted, undistorted) LidarScan variants.

    The distorted variant expresses each point in the sensor frame at its
    own emit time; the undistorted one re-expresses the same world hits in
    the scan-end sensor frame.  Rays that miss every patch are dropped.
    """
    rng = np.random.default_rng(seed)
    frac, dirs = pattern.rays()
    times = t_start + frac * (t_end - t_start)

    origins = np.empty((len(dirs), 3))
    dirs_G = np.empty_like(origins)
    poses = []
    for i, t in enumerate(times):
        R, p, _, _, _ = spec.sample(t)
        origins[i] = p
        dirs_G[i] = R @ dirs[i]
        poses.append((R, p))
    rng_noise = rng.normal(0.0, range_noise, len(dirs)) if range_noise > 0 else np.zeros(len(dirs))
    s, pid, _, _ = world.intersect(origins, dirs_G, max_range=max_range)
    hit = pid >= 0
    r_meas = s + rng_noise

    pts_sensor = r_meas[hit, None] * dirs[hit]
    world_pts = origins[hit] + r_meas[hit, None] * dirs_G[hit]
    R_end, p_end, _, _, _ = spec.sample(t_end)
    pts_end = (world_pts - p_end) @ R_end

    distorted = LidarScan(times=times[hit], points=pts_sensor,
                          t_start=t_start, t_end=t_end, patch_ids=pid[hit])
    undistorted = LidarScan(times=times[hit], points=pts_end,
                            t_start=t_start, t_end=t_end, patch_ids=pid[hit])
    return distorted, undistorted


def camera_pose(spec: TrajectorySpec, t: float, calib: Calibration):
    """Global pose of the camera at stamped time t (true offset applied)."""
    t_true = np.clip(t + calib.t_IC, 0.0, spec.duration)
    R_GI, p_GI, _, _, _ = spec.sample(t_true)
    return R_GI @ calib.R_IC, R_GI @ calib.p_IC + p_GI


def synth_camera_image(spec: TrajectorySpec, world: SimWorld, t: float,
                       calib: Calibration, pixel_noise: float, seed: int):
    """Ray-cast a pinhole image of the patch world at stamped time t."""
    fx, fy, cx, cy = calib.intrinsics
    R_GC, p_GC = camera_pose(spec, t, calib)
    xs = np.arange(calib.width)
    ys = np.arange(calib.height)
    X, Y = np.meshgrid(xs, ys)
    d_C = np.stack([(X - cx) / fx, (Y - cy) / fy, np.ones_like(X, dtype=float)],
                   axis=-1).reshape(-1, 3)
    d_G = d_C @ R_GC.T
    _, pid, u, v = world.intersect(p_GC, d_G)
    img = world.albedo_at(pid, u, v).reshape(calib.height, calib.width, 3)
    if pixel_noise > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, pixel_noise, img.shape)
    return CameraFrame(t=t, image=np.clip(img, 0.0, 1.0))


def perturb_calibration(true_calib: Calibration, rot_axis=(0, 0, 1),
                        rot_angle=0.0, pos_offset=(0, 0, 0), t_offset=0.0,
                        intr_offset=(0, 0, 0, 0)):
    """Intentionally wrong initial calibration for convergence experiments."""
    axis = np.asarray(rot_axis, dtype=float)
    nrm = np.linalg.norm(axis)
    dR = exp_so3(rot_angle * axis / nrm) if nrm > 0 and rot_angle != 0 else np.eye(3)
    out = true_calib.copy()
    out.R_IC = true_calib.R_IC @ dR
    out.p_IC = true_calib.p_IC + np.asarray(pos_offset, dtype=float)
    out.t_IC = true_calib.t_IC + float(t_offset)
    out.intrinsics = true_calib.intrinsics + np.asarray(intr_offset, dtype=float)
    return out


def calibration_offsets(perturbed: Calibration, truth: Calibration):
    """Geodesic/Euclidean distances between two calibrations, for reporting."""
    return {
        "rot_rad": float(np.linalg.norm(log_so3(truth.R_IC.T @ perturbed.R_IC))),
        "pos_m": float(np.linalg.norm(perturbed.p_IC - truth.p_IC)),
        "t_s": float(perturbed.t_IC - truth.t_IC),
        "intr_px": [float(d) for d in (perturbed.intrinsics - truth.intrinsics)],
    }
