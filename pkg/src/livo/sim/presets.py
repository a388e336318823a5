"""Named scenario presets and whole-sequence generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..imu import NoiseConfig
from .dataset import write_sequence
from .sensors import (
    Calibration,
    RasterPattern,
    perturb_calibration,
    synth_camera_image,
    synth_imu,
    synth_lidar_scan,
)
from .trajectory import TrajectorySpec, circle_spec, static_spec
from .world import Patch, SimWorld, wall_patch

# camera optical axis along body +x: camera x -> body -y, y -> body -z, z -> body +x
R_IC_FORWARD = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


@dataclass
class Scenario:
    """Everything needed to synthesize one dataset deterministically."""

    name: str
    spec: TrajectorySpec
    world: SimWorld
    calib_true: Calibration
    calib_init: Calibration
    noise: NoiseConfig
    pattern: RasterPattern
    range_noise: float = 0.01
    pixel_noise: float = 0.01
    max_range: float = 100.0
    init_bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    init_ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    meta: dict = field(default_factory=dict)

    def path_length(self, n=2000):
        ts = np.linspace(0.0, self.spec.duration, n)
        pts = np.stack([self.spec.pos_fn(t) for t in ts])
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def generate(self, out_dir, seed=0):
        """Synthesize all sensors and write the sequence directory."""
        spec, world = self.spec, self.world
        imu = synth_imu(spec, world, self.noise, seed=seed,
                        init_bg=self.init_bg, init_ba=self.init_ba)

        scans = []
        n_scans = int(round(spec.duration * spec.lidar_rate))
        period = 1.0 / spec.lidar_rate
        for k in range(n_scans):
            distorted, _ = synth_lidar_scan(
                spec, world, k * period, (k + 1) * period, self.pattern,
                self.range_noise, seed=seed * 1_000_003 + k,
                max_range=self.max_range)
            scans.append(distorted)

        frames = []
        n_frames = int(np.floor(spec.duration * spec.cam_rate)) + 1
        cam_dt = 1.0 / spec.cam_rate
        for k in range(n_frames):
            t = k * cam_dt
            if t + self.calib_true.t_IC > spec.duration:
                break
            frames.append(synth_camera_image(
                spec, world, t, self.calib_true, self.pixel_noise,
                seed=seed * 2_000_003 + k))

        # quantize to nanoseconds so numerically near-equal instants from
        # the different sensor clocks collapse to one ground-truth row
        gt_times = sorted(set(
            round(t, 9) for t in
            [s.t for s in imu]
            + [min(f.t + self.calib_true.t_IC, spec.duration) for f in frames]
            + [sc.t_end for sc in scans]
        ))
        gt_rot, gt_pos = [], []
        for t in gt_times:
            R, p, _, _, _ = spec.sample(t)
            gt_rot.append(R)
            gt_pos.append(p)

        _, _, v0, _, _ = spec.sample(0.0)
        meta = dict(self.meta)
        meta.update({
            "preset": self.name,
            "path_length_m": self.path_length(),
            "duration_s": spec.duration,
            "rates_hz": {"imu": spec.imu_rate, "lidar": spec.lidar_rate,
                         "cam": spec.cam_rate},
            "initial_velocity": np.asarray(v0, dtype=float).tolist(),
            "range_noise": self.range_noise,
            "pixel_noise": self.pixel_noise,
            "seed": seed,
        })
        write_sequence(out_dir, imu, scans, frames,
                       np.array(gt_times), np.stack(gt_rot), np.stack(gt_pos),
                       self.calib_true, self.calib_init, world.gravity,
                       noise=self.noise, meta=meta)
        return out_dir


def _room_world(half=24.0, height=6.0):
    """Closed square room with gradient-albedo walls, floor and ceiling."""
    h2 = half
    walls = [
        # +x wall, inward normal
        wall_patch((h2, -h2, 0), (0, 2 * h2, 0), (0, 0, height),
                   (0.7, 0.2, 0.2), grad_u=(-0.5, 0.5, 0.0), grad_v=(0.0, 0.0, 0.6)),
        # -x wall
        wall_patch((-h2, h2, 0), (0, -2 * h2, 0), (0, 0, height),
                   (0.2, 0.6, 0.3), grad_u=(0.6, -0.4, 0.0), grad_v=(0.0, 0.2, 0.5)),
        # +y wall
        wall_patch((h2, h2, 0), (-2 * h2, 0, 0), (0, 0, height),
                   (0.2, 0.3, 0.7), grad_u=(0.5, 0.3, -0.5), grad_v=(0.3, 0.0, 0.0)),
        # -y wall
        wall_patch((-h2, -h2, 0), (2 * h2, 0, 0), (0, 0, height),
                   (0.6, 0.6, 0.1), grad_u=(-0.4, 0.0, 0.6), grad_v=(0.0, 0.3, 0.2)),
        # floor and ceiling
        wall_patch((-h2, -h2, 0), (2 * h2, 0, 0), (0, 2 * h2, 0),
                   (0.4, 0.4, 0.4), grad_u=(0.3, 0.0, 0.0), grad_v=(0.0, 0.3, 0.0)),
        wall_patch((-h2, -h2, height), (0, 2 * h2, 0), (2 * h2, 0, 0),
                   (0.5, 0.5, 0.6), grad_u=(0.0, 0.2, 0.1), grad_v=(0.2, 0.0, 0.0)),
    ]
    return SimWorld(patches=walls)


def _forward_calib(width, height, focal, t_ic=0.0):
    return Calibration(
        R_IC=R_IC_FORWARD.copy(),
        p_IC=np.array([0.05, 0.0, 0.02]),
        t_IC=t_ic,
        intrinsics=np.array([focal, focal, width / 2.0, height / 2.0]),
        width=width, height=height,
    )


def campus_loop(duration=60.0, path_length=120.0) -> Scenario:
    """Closed circular loop inside a textured room; the Table-II analog."""
    radius = path_length / (2.0 * np.pi)
    spec = circle_spec(radius=radius, period=duration, duration=duration,
                       height=1.5, imu_rate=200.0, lidar_rate=10.0,
                       cam_rate=20.0)
    world = _room_world(half=radius + 6.0, height=6.0)
    calib = _forward_calib(320, 240, 275.0)
    return Scenario(
        name="campus-loop", spec=spec, world=world,
        calib_true=calib, calib_init=calib.copy(),
        noise=NoiseConfig(sigma_g=1.0e-3, sigma_a=8.0e-3,
                          sigma_bg=1e-6, sigma_ba=1e-5),
        pattern=RasterPattern(n_az=90, n_el=16,
                              fov_az=np.deg2rad(360), fov_el=np.deg2rad(70)),
        range_noise=0.01, pixel_noise=0.01,
        init_bg=np.array([5e-4, -3e-4, 4e-4]),
        init_ba=np.array([5e-3, -4e-3, 6e-3]),
        max_range=15.0,
    )


def corridor_degenerate(duration=30.0) -> Scenario:
    """Sideways run facing a single wall: every scan hits exactly one plane.

    The narrow LiDAR cone sees only the gradient-albedo wall, so the scan
    constrains one translation direction and two rotations; the remaining
    directions are held by the camera.  The Experiment-1 analog.
    """
    speed = 0.8
    wall_y = 2.0

    def pos(t):
        return np.array([speed * t, 0.0, 1.5 + 0.05 * np.sin(0.8 * t)])

    def vel(t):
        return np.array([speed, 0.0, 0.05 * 0.8 * np.cos(0.8 * t)])

    def acc(t):
        return np.array([0.0, 0.0, -0.05 * 0.8**2 * np.sin(0.8 * t)])

    from ..manifold import exp_so3
    yaw = np.pi / 2  # body x axis (sensor boresight) faces the +y wall

    spec = TrajectorySpec(
        pos_fn=pos, rot_fn=lambda t: exp_so3(np.array([0.0, 0.0, yaw])),
        duration=duration, vel_fn=vel, acc_fn=acc,
        omega_fn=lambda t: np.zeros(3),
        imu_rate=200.0, lidar_rate=10.0, cam_rate=20.0)

    length = speed * duration
    wall = wall_patch((-6.0, wall_y, -1.0), (length + 12.0, 0, 0), (0, 0, 5.0),
                      (0.55, 0.35, 0.25),
                      grad_u=(0.45, -0.3, 0.3), grad_v=(-0.3, 0.5, 0.4))
    # crossbeams jutting out of the wall give the scans a second plane
    # orientation, except over the middle 30 percent of the corridor where
    # only the bare wall remains in view
    patches = [wall]
    gap_lo, gap_hi = 0.33 * length, 0.67 * length
    xb = -1.4
    while xb < length + 1.4:
        # keep beams out of sight of the 120 degree cone for the whole
        # middle stretch: a beam face is visible up to ~2.1 m away along x
        if not (gap_lo - 2.2 < xb < gap_hi + 2.2):
            patches.append(wall_patch(
                (xb, wall_y - 0.8, 0.0), (0, 0.8, 0), (0, 0, 3.0),
                (0.4, 0.45, 0.5), grad_v=(0.2, 0.1, -0.2)))
        xb += 0.7
    world = SimWorld(patches=patches)
    calib = _forward_calib(320, 240, 275.0)
    return Scenario(
        name="corridor-degenerate", spec=spec, world=world,
        calib_true=calib, calib_init=calib.copy(),
        noise=NoiseConfig(sigma_g=1.0e-3, sigma_a=8.0e-3,
                          sigma_bg=1e-6, sigma_ba=1e-5),
        pattern=RasterPattern(n_az=48, n_el=8,
                              fov_az=np.deg2rad(120), fov_el=np.deg2rad(24)),
        range_noise=0.01, pixel_noise=0.01,
        init_bg=np.array([3e-4, -2e-4, 2e-4]),
        init_ba=np.array([3e-3, -2e-3, 4e-3]),
    )


def calib_rich(duration=12.0, t_ic_error=0.005, rot_error_deg=1.0,
               pos_error=0.01, principal_error=2.0) -> Scenario:
    """Small textured room with injected calibration errors to recover."""
    # A constant-rate circle leaves the time offset and the boresight yaw
    # jointly unobservable (a time shift then equals a fixed extra yaw), so
    # the loop gets a yaw wobble and height bobbing for excitation.
    from ..manifold import exp_so3

    radius, w = 0.8, 2.0 * np.pi / 6.0
    a_yaw, w_yaw = 0.3, 2.0 * np.pi / 1.5
    b_z, w_z = 0.1, 2.0 * np.pi / 2.0

    def pos(t):
        th = w * t
        return np.array([radius * np.cos(th), radius * np.sin(th),
                         1.5 + b_z * np.sin(w_z * t)])

    def vel(t):
        th = w * t
        return np.array([-radius * w * np.sin(th), radius * w * np.cos(th),
                         b_z * w_z * np.cos(w_z * t)])

    def acc(t):
        th = w * t
        return np.array([-radius * w**2 * np.cos(th),
                         -radius * w**2 * np.sin(th),
                         -b_z * w_z**2 * np.sin(w_z * t)])

    def rot(t):
        yaw = w * t + np.pi / 2.0 + a_yaw * np.sin(w_yaw * t)
        return exp_so3(np.array([0.0, 0.0, yaw]))

    def omega(t):
        return np.array([0.0, 0.0, w + a_yaw * w_yaw * np.cos(w_yaw * t)])

    spec = TrajectorySpec(pos_fn=pos, rot_fn=rot, duration=duration,
                          vel_fn=vel, acc_fn=acc, omega_fn=omega,
                          imu_rate=200.0, lidar_rate=10.0, cam_rate=20.0)
    world = _room_world(half=4.0, height=3.0)
    calib_true = _forward_calib(320, 240, 280.0, t_ic=0.002)
    calib_init = perturb_calibration(
        calib_true,
        rot_axis=(1.0, 1.0, 1.0), rot_angle=np.deg2rad(rot_error_deg),
        pos_offset=np.array([1.0, -1.0, 1.0]) * pos_error / np.sqrt(3.0),
        t_offset=t_ic_error,
        intr_offset=(0.0, 0.0, principal_error, principal_error),
    )
    return Scenario(
        name="calib-rich", spec=spec, world=world,
        calib_true=calib_true, calib_init=calib_init,
        noise=NoiseConfig(sigma_g=5.0e-4, sigma_a=5.0e-3,
                          sigma_bg=1e-6, sigma_ba=1e-5),
        pattern=RasterPattern(n_az=72, n_el=16,
                              fov_az=np.deg2rad(360), fov_el=np.deg2rad(70)),
        range_noise=0.005, pixel_noise=0.005,
        init_bg=np.array([2e-4, -1e-4, 2e-4]),
        init_ba=np.array([2e-3, -1e-3, 2e-3]),
        max_range=30.0,
    )


def static_scene(duration=1.0) -> Scenario:
    """Stationary sensor in a small room; mostly for plumbing tests."""
    spec = static_spec(position=(0, 0, 1.5), duration=duration,
                       imu_rate=200.0, lidar_rate=10.0, cam_rate=20.0)
    world = _room_world(half=4.0, height=3.0)
    calib = _forward_calib(96, 72, 80.0)
    return Scenario(
        name="static", spec=spec, world=world,
        calib_true=calib, calib_init=calib.copy(),
        noise=NoiseConfig(sigma_g=1e-3, sigma_a=1e-2, sigma_bg=1e-6,
                          sigma_ba=1e-5),
        pattern=RasterPattern(n_az=16, n_el=8),
        range_noise=0.005, pixel_noise=0.005,
    )


PRESETS = {
    "campus-loop": campus_loop,
    "corridor-degenerate": corridor_degenerate,
    "calib-rich": calib_rich,
    "static": static_scene,
}


def make_scenario(name, **kwargs) -> Scenario:
    if name not in PRESETS:
        raise KeyError(f"unknown preset '{name}' (have {sorted(PRESETS)})")
    return PRESETS[name](**kwargs)
