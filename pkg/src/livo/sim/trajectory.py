"""Analytic ground-truth trajectories and their derivatives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..manifold import exp_so3, log_so3


@dataclass
class TrajectorySpec:
    """Pose as a function of time plus the sensor sample rates.

    ``pos_fn(t) -> (3,)`` and ``rot_fn(t) -> 3x3`` must be twice
    differentiable on [0, duration].  Analytic derivative callbacks are
    optional; missing ones fall back to central finite differences.
    """

    pos_fn: Callable
    rot_fn: Callable
    duration: float
    imu_rate: float = 200.0
    lidar_rate: float = 10.0
    cam_rate: float = 20.0
    vel_fn: Optional[Callable] = None
    acc_fn: Optional[Callable] = None
    omega_fn: Optional[Callable] = None   # body angular rate

    def __post_init__(self):
        if min(self.imu_rate, self.lidar_rate, self.cam_rate) <= 0.0:
            raise ValueError("sample rates must be positive")

    def sample(self, t, fd_step=1e-6):
        """Pose, velocity, body angular rate and acceleration at time t."""
        if t < -1e-12 or t > self.duration + 1e-12:
            raise ValueError(f"t={t} outside [0, {self.duration}]")
        h = fd_step
        # clamp the stencil inside the domain to keep derivatives defined
        tc = min(max(t, h), self.duration - h)
        R = self.rot_fn(t)
        p = self.pos_fn(t)
        v = self.vel_fn(t) if self.vel_fn else (
            (self.pos_fn(tc + h) - self.pos_fn(tc - h)) / (2 * h)
        )
        a = self.acc_fn(t) if self.acc_fn else (
            (self.pos_fn(tc + h) - 2 * self.pos_fn(tc) + self.pos_fn(tc - h)) / h**2
        )
        w = self.omega_fn(t) if self.omega_fn else (
            log_so3(self.rot_fn(tc - h).T @ self.rot_fn(tc + h)) / (2 * h)
        )
        return R, np.asarray(p, float), np.asarray(v, float), np.asarray(w, float), np.asarray(a, float)


def static_spec(position=(0, 0, 0), rotation=None, duration=1.0, **rates):
    p = np.asarray(position, dtype=float)
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
    return TrajectorySpec(
        pos_fn=lambda t: p.copy(),
        rot_fn=lambda t: R.copy(),
        duration=duration,
        vel_fn=lambda t: np.zeros(3),
        acc_fn=lambda t: np.zeros(3),
        omega_fn=lambda t: np.zeros(3),
        **rates,
    )


def circle_spec(radius, period, duration=None, center=(0, 0, 0), height=0.0,
    face_tangent=True, **rates):
    """Counter-clockwise circle in the x-y plane at constant speed.

    With ``face_tangent`` the body x axis follows the direction of travel
    (yaw = theta + pi/2), giving a closed loop whose start and end poses
    coincide when duration is a whole number of periods.
    """
    c = np.asarray(center, dtype=float) + np.array([0.0, 0.0, height])
    w = 2 * np.pi / period
    if duration is None:
        duration = period

    def pos(t):
        th = w * t
        return c + radius * np.array([np.cos(th), np.sin(th), 0.0])

    def vel(t):
        th = w * t
        return radius * w * np.array([-np.sin(th), np.cos(th), 0.0])

    def acc(t):
        th = w * t
        return -radius * w**2 * np.array([np.cos(th), np.sin(th), 0.0])

    if face_tangent:
        def rot(t):
            return exp_so3(np.array([0.0, 0.0, w * t + np.pi / 2]))

        def omega(t):
            return np.array([0.0, 0.0, w])
    else:
        def rot(t):
            return np.eye(3)

        def omega(t):
            return np.zeros(3)

    return TrajectorySpec(pos_fn=pos, rot_fn=rot, duration=duration,
                          vel_fn=vel, acc_fn=acc, omega_fn=omega, **rates)
