"""Strapdown IMU propagation and backward motion compensation of scans.

Forward propagation advances the state mean and tangent-space covariance
between update instants with one step per IMU sample interval, using the
trapezoid average of the bracketing gyro and accelerometer readings.
Backward compensation re-expresses the points of a motion-distorted LiDAR
scan in the scan-end IMU frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import (
    STATE_DIM,
    FullState,
    StateWithCov,
    block_slice,
    exp_so3,
    right_jacobian,
    skew,
)


@dataclass
class ImuSample:
    t: float
    gyro: np.ndarray   # rad/s
    accel: np.ndarray  # m/s^2


@dataclass
class NoiseConfig:
    """Continuous-time noise densities driving the process model."""

    sigma_g: float = 1.6e-3     # gyro noise, rad/s/sqrt(Hz)
    sigma_a: float = 2.0e-2     # accel noise, m/s^2/sqrt(Hz)
    sigma_bg: float = 1e-5      # gyro bias random walk
    sigma_ba: float = 1e-4      # accel bias random walk
    sigma_color: float = 0.0    # per-channel color random walk (map rendering)
    # calibration blocks propagate as constants unless given a random walk
    sigma_grav: float = 0.0
    sigma_ext_rot: float = 0.0
    sigma_ext_pos: float = 0.0
    sigma_t_ic: float = 0.0
    sigma_intr: float = 0.0

    def validate(self):
        for name, val in vars(self).items():
            if val < 0.0:
                raise ValueError(f"noise density {name} must be non-negative")
        return self


def _check_monotone(imu):
    times = [s.t for s in imu]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("IMU timestamps must be strictly increasing")


def _imu_interp(imu):
    """Piecewise-linear interpolant of (gyro, accel) over the sample times.

    Queries outside the sampled span clamp to the nearest sample.  Evaluating
    at an interval midpoint gives the trapezoid average of the endpoints, which
    avoids the half-sample phase lag a left-held sample would introduce.
    """
    t = np.array([s.t for s in imu], dtype=float)
    g = np.array([s.gyro for s in imu], dtype=float)
    a = np.array([s.accel for s in imu], dtype=float)

    def at(tq: float):
        gi = np.array([np.interp(tq, t, g[:, k]) for k in range(3)])
        ai = np.array([np.interp(tq, t, a[:, k]) for k in range(3)])
        return gi, ai

    return at


def _mean_step(x: FullState, gyro, accel, dt: float) -> FullState:
    """One strapdown step: attitude by Exp, velocity by rectangle, position by trapezoid."""
    w = gyro - x.b_g
    a = accel - x.b_a
    acc_G = x.R_GI @ a + x.g_G
    v_next = x.v_G + acc_G * dt
    out = x.copy()
    out.R_GI = x.R_GI @ exp_so3(w * dt)
    out.p_GI = x.p_GI + 0.5 * (x.v_G + v_next) * dt
    out.v_G = v_next
    return out


def _transition(x: FullState, gyro, accel, dt: float):
    """First-order discrete error-state transition matrix for one step."""
    w = gyro - x.b_g
    a = accel - x.b_a
    F = np.eye(STATE_DIM)
    r, p, v = block_slice("rot"), block_slice("pos"), block_slice("vel")
    bg, ba, gr = block_slice("bg"), block_slice("ba"), block_slice("grav")
    Jr = right_jacobian(w * dt)
    F[r, r] = exp_so3(w * dt).T
    F[r, bg] = -Jr * dt
    F[p, v] = np.eye(3) * dt
    F[v, r] = -x.R_GI @ skew(a) * dt
    F[v, ba] = -x.R_GI * dt
    F[v, gr] = np.eye(3) * dt
    return F


def _process_noise(x: FullState, gyro, noise: NoiseConfig, dt: float):
    Q = np.zeros((STATE_DIM, STATE_DIM))
    w = gyro - x.b_g
    Jr = right_jacobian(w * dt)
    r, v = block_slice("rot"), block_slice("vel")
    Q[r, r] = (Jr @ Jr.T) * noise.sigma_g**2 * dt
    Q[v, v] = np.eye(3) * noise.sigma_a**2 * dt
    Q[block_slice("bg"), block_slice("bg")] = np.eye(3) * noise.sigma_bg**2 * dt
    Q[block_slice("ba"), block_slice("ba")] = np.eye(3) * noise.sigma_ba**2 * dt
    Q[block_slice("grav"), block_slice("grav")] = np.eye(3) * noise.sigma_grav**2 * dt
    Q[block_slice("rot_ic"), block_slice("rot_ic")] = (
        np.eye(3) * noise.sigma_ext_rot**2 * dt
    )
    Q[block_slice("pos_ic"), block_slice("pos_ic")] = (
        np.eye(3) * noise.sigma_ext_pos**2 * dt
    )
    i_t = block_slice("t_ic").start
    Q[i_t, i_t] = noise.sigma_t_ic**2 * dt
    Q[block_slice("intr"), block_slice("intr")] = np.eye(4) * noise.sigma_intr**2 * dt
    return Q


def propagate(prior: StateWithCov, imu, t_start: float, t_end: float,
              noise: NoiseConfig) -> StateWithCov:
    """Propagate mean and covariance from t_start to t_end through IMU samples.

    Integration steps run from sample to sample (clipped to the window);
    within each step the gyro and accelerometer are taken as the linear
    interpolation of the surrounding samples evaluated at the step midpoint.
    An empty sample list integrates zero motion.
    """
    if t_end < t_start:
        raise ValueError("t_end must be >= t_start")
    _check_monotone(imu)
    x = prior.x.copy()
    P = prior.cov.copy()

    # build (t0, t1, sample) integration segments covering [t_start, t_end]
    segments = []
    last = None
    for s in imu:
        if s.t <= t_start:
            last = s
            continue
        if s.t >= t_end:
            break
        t0 = segments[-1][1] if segments else t_start
        segments.append((t0, s.t, last if last is not None else s))
        last = s
    t0 = segments[-1][1] if segments else t_start
    if t0 < t_end:
        if last is None:
            last = ImuSample(t_start, np.zeros(3), -prior.x.g_G)  # hold equilibrium
        segments.append((t0, t_end, last))

    interp = _imu_interp(imu) if len(imu) else None
    for a, b, s in segments:
        dt = b - a
        if dt <= 0.0:
            continue
        if interp is not None:
            gyro, accel = interp(0.5 * (a + b))
        else:
            gyro, accel = s.gyro, s.accel
        F = _transition(x, gyro, accel, dt)
        Q = _process_noise(x, gyro, noise, dt)
        P = F @ P @ F.T + Q
        x = _mean_step(x, gyro, accel, dt)
    return StateWithCov(x, 0.5 * (P + P.T))


def backward_poses(imu, t_points, t_end: float, state_end: FullState):
    """Relative pose of the IMU at each query time, expressed in the end frame.

    Returns (R_rel, p_rel) arrays with the scan-end-frame pose of the IMU at
    each t: a point q in the IMU frame at time t maps to R_rel @ q + p_rel
    in the scan-end IMU frame.
    """
    t_points = np.asarray(t_points, dtype=float)
    order = np.argsort(t_points)[::-1]  # integrate backward in time
    _check_monotone(imu)

    R = state_end.R_GI.copy()
    p = state_end.p_GI.copy()
    v = state_end.v_G.copy()
    t_cur = t_end
    samples = sorted(imu, key=lambda s: s.t, reverse=True)
    si = 0

    R_end, p_end = state_end.R_GI, state_end.p_GI
    R_out = np.empty((len(t_points), 3, 3))
    p_out = np.empty((len(t_points), 3))

    interp = _imu_interp(imu) if len(imu) else None

    def step_back(Rc, pc, vc, s, t_hi, dt):
        # inverse of the forward strapdown step over dt > 0
        if interp is not None:
            gyro, accel = interp(t_hi - 0.5 * dt)
        else:
            gyro, accel = s.gyro, s.accel
        Rp = Rc @ exp_so3(-(gyro - state_end.b_g) * dt)
        acc = Rp @ (accel - state_end.b_a) + state_end.g_G
        vp = vc - acc * dt
        pp = pc - 0.5 * (vp + vc) * dt
        return Rp, pp, vp

    for idx in order:
        t_q = t_points[idx]
        while si < len(samples) and samples[si].t >= t_cur:
            si += 1
        # walk backward over sample boundaries until reaching t_q
        while si < len(samples) and samples[si].t > t_q:
            s = samples[si]
            R, p, v = step_back(R, p, v, s, t_cur, t_cur - s.t)
            t_cur = s.t
            si += 1
        if t_cur > t_q:
            s = samples[si] if si < len(samples) else (
                samples[-1] if samples else ImuSample(t_q, np.zeros(3),
                                                      -state_end.g_G)
            )
            R, p, v = step_back(R, p, v, s, t_cur, t_cur - t_q)
            t_cur = t_q
        R_out[idx] = R_end.T @ R
        p_out[idx] = R_end.T @ (p - p_end)
    return R_out, p_out


def backward_compensate(scan, imu, state_end: FullState):
    """Undistort a scan: re-express every point in the scan-end IMU frame.

    Point timestamps must lie within [scan.t_start, scan.t_end]; the first
    offending index is reported otherwise.
    """
    times = np.asarray(scan.times, dtype=float)
    bad = np.nonzero((times < scan.t_start - 1e-12) | (times > scan.t_end + 1e-12))[0]
    if bad.size:
        raise ValueError(f"point timestamp outside scan interval at index {bad[0]}")
    R_rel, p_rel = backward_poses(imu, times, scan.t_end, state_end)
    pts = np.asarray(scan.points, dtype=float)
    out = np.einsum("nij,nj->ni", R_rel, pts) + p_rel
    return scan.with_points(out)
