"""Visual-inertial update in two stages.

Stage one minimizes the reprojection error of optical-flow-tracked map
points (frame-to-frame); stage two refines the same state against the map
colors (frame-to-map photometric).  Both run the shared iterated
error-state update; all Jacobians are taken with respect to the manifold
retraction at the current iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .esikf import MeasurementTerm, iterated_update
from .manifold import STATE_DIM, FullState, StateWithCov, block_slice, skew
from .mapping import (
    TrackedPoint,
    VoxelMap,
    interpolate_color,
    interpolate_color_gradient,
)


@dataclass
class VioConfig:
    z_min: float = 0.01             # behind-camera margin, meters
    sigma_track_px: float = 1.0     # LK-mode pixel tracking noise (1 sigma)
    sigma_pix: float = 0.03         # per-channel image color noise (1 sigma)
    sigma_color: float = 0.0        # map color random-walk density
    use_huber: bool = False
    huber_delta_px: float = 2.0
    eps: float = 1e-6
    max_iterations: int = 5
    uncolored_cov_threshold: float = 100.0


def camera_point(state: FullState, p_G):
    """Transform a global point into the camera frame."""
    return camera_point_batch(state, np.asarray(p_G, dtype=float)[None])[0]


def camera_point_batch(state: FullState, pts_G):
    """Vectorized camera-frame transform for (N,3) global points."""
    pts_G = np.atleast_2d(np.asarray(pts_G, dtype=float))
    R_GC = state.R_GI @ state.R_IC
    return (pts_G - state.p_GI) @ R_GC - state.p_IC @ state.R_IC


def pinhole_project(intrinsics, cp):
    """Pure pinhole projection of (N,3) camera-frame points to pixels."""
    fx, fy, cx, cy = intrinsics
    cp = np.atleast_2d(np.asarray(cp, dtype=float))
    return np.stack([fx * cp[:, 0] / cp[:, 2] + cx,
                     fy * cp[:, 1] / cp[:, 2] + cy], axis=1)


def pixel_velocity(px_prev, px_curr, dt_frames, px_prev2=None):
    """Tracked pixel velocity at the current frame.

    With two past locations a second-order backward difference removes the
    O(dt) bias of the plain difference, which otherwise leaks into the
    time-offset estimate.
    """
    c = np.asarray(px_curr, float)
    p = np.asarray(px_prev, float)
    if px_prev2 is None:
        return (c - p) / dt_frames
    p2 = np.asarray(px_prev2, float)
    return (3.0 * c - 4.0 * p + p2) / (2.0 * dt_frames)


def project_with_temporal(state: FullState, cp, px_prev, px_curr, dt_frames,
                          z_min=0.01, px_prev2=None):
    """Pinhole projection plus the time-offset velocity correction.

    The correction shifts the projection by the tracked pixel velocity
    times the estimated camera-IMU time offset.
    """
    cp = np.asarray(cp, dtype=float)
    if cp[2] <= z_min:
        raise ValueError("point is behind the camera")
    base = pinhole_project(state.intrinsics, cp[None])[0]
    vel = pixel_velocity(px_prev, px_curr, dt_frames, px_prev2)
    return base + state.t_IC * vel


def _projection_jacobians(state: FullState, p_G, px_prev, px_curr, dt_frames,
                          z_min, px_prev2=None):
    """Projection, its Jacobian w.r.t. the error state and w.r.t. the point.

    Returns (pred_px, J_state (2,29), J_point (2,3)) or None when the point
    falls behind the camera.
    """
    cp = camera_point(state, p_G)
    if cp[2] <= z_min:
        return None
    fx, fy, _, _ = state.intrinsics
    X, Y, Z = cp
    J_pin = np.array([[fx / Z, 0.0, -fx * X / Z**2],
                      [0.0, fy / Z, -fy * Y / Z**2]])

    u = state.R_GI.T @ (np.asarray(p_G, float) - state.p_GI)
    Ric_T = state.R_IC.T
    J_state = np.zeros((2, STATE_DIM))
    J_state[:, block_slice("rot")] = J_pin @ (Ric_T @ skew(u))
    J_state[:, block_slice("pos")] = J_pin @ (-Ric_T @ state.R_GI.T)
    J_state[:, block_slice("rot_ic")] = J_pin @ skew(cp)
    J_state[:, block_slice("pos_ic")] = J_pin @ (-Ric_T)
    vel = pixel_velocity(px_prev, px_curr, dt_frames, px_prev2)
    J_state[:, block_slice("t_ic").start] = vel
    intr = block_slice("intr")
    J_state[0, intr.start + 0] = X / Z
    J_state[1, intr.start + 1] = Y / Z
    J_state[0, intr.start + 2] = 1.0
    J_state[1, intr.start + 3] = 1.0

    J_point = J_pin @ (Ric_T @ state.R_GI.T)
    pred = pinhole_project(state.intrinsics, cp[None])[0] + state.t_IC * vel
    return pred, J_state, J_point


def pnp_residual(state: FullState, p_G, cov_p, px_prev, px_curr, dt_frames,
                 sigma_track_px, z_min=0.01, px_prev2=None):
    """Reprojection residual term for one tracked point.

    Residual r = observed pixel - predicted projection; the noise combines
    the tracking noise and the map point location error pushed through the
    point Jacobian.  Returns (MeasurementTerm with H = dr/d(dx), residual
    norm in pixels) or None when behind the camera.
    """
    proj = _projection_jacobians(state, p_G, px_prev, px_curr, dt_frames,
                                 z_min, px_prev2=px_prev2)
    if proj is None:
        return None
    pred, J_state, J_point = proj
    r = np.asarray(px_curr, float) - pred
    F_r = -J_point
    cov = np.eye(2) * sigma_track_px**2 + F_r @ cov_p @ F_r.T
    return MeasurementTerm(r=r, jac=-J_state, cov=cov), float(np.linalg.norm(r))


def photometric_residual(state: FullState, p_G, cov_p, color, cov_c, dt_color,
                         frame, px_prev, px_curr, dt_frames, config: VioConfig,
                         px_prev2=None):
    """Photometric residual term for one tracked point.

    Residual o = map color - interpolated image color at the predicted
    projection.  The noise stacks the map color covariance, the color
    random-walk accumulated since the last render, the interpolation noise
    and the point location error.  Returns None when the prediction leaves
    the image (1 px margin) or the point is behind the camera.
    """
    proj = _projection_jacobians(state, p_G, px_prev, px_curr, dt_frames,
                                 config.z_min, px_prev2=px_prev2)
    if proj is None:
        return None
    pred, J_state, J_point = proj
    h, w = frame.image.shape[:2]
    if not (1.0 <= pred[0] <= w - 2.0 and 1.0 <= pred[1] <= h - 2.0):
        return None
    gamma, cov_gamma = interpolate_color(frame, pred, sigma_pix=config.sigma_pix)
    grad = interpolate_color_gradient(frame, pred)   # (3,2)
    o = np.asarray(color, float) - gamma
    H_o = -grad @ J_state
    F_o = -grad @ J_point
    cov = (np.asarray(cov_c, float)
           + (config.sigma_color**2 * dt_color) * np.eye(3)
           + cov_gamma
           + F_o @ cov_p @ F_o.T)
    return MeasurementTerm(r=o, jac=H_o, cov=cov), float(np.linalg.norm(o))


def _huber_scale(r_norm, delta):
    if r_norm <= delta:
        return 1.0
    return r_norm / delta  # inflate covariance by this factor


def frame_to_frame_update(prior: StateWithCov, vmap: VoxelMap,
                          tracked: Dict[int, TrackedPoint], dt_frames: float,
                          config: VioConfig = None,
                          sigma_track_px: Optional[float] = None):
    """PnP stage: iterated update over all live tracked points."""
    config = config or VioConfig()
    sig = config.sigma_track_px if sigma_track_px is None else sigma_track_px

    def build(x_check):
        terms = []
        for pid in sorted(tracked):
            tp = tracked[pid]
            out = pnp_residual(x_check, vmap.positions[pid], vmap.cov_p[pid],
                               tp.px_prev, tp.px_curr, dt_frames, sig,
                               z_min=config.z_min, px_prev2=tp.px_prev2)
            if out is None:
                continue
            term, r_norm = out
            if config.use_huber:
                term.cov = term.cov * _huber_scale(r_norm, config.huber_delta_px)
            terms.append(term)
        return terms

    posterior, info = iterated_update(prior, build, eps=config.eps,
                                      max_iterations=config.max_iterations)
    residuals = pnp_residual_norms(posterior.x, vmap, tracked, dt_frames,
                                   sig, config.z_min)
    return posterior, info, residuals


def pnp_residual_norms(state, vmap, tracked, dt_frames, sigma_track_px, z_min):
    norms = {}
    for pid, tp in tracked.items():
        out = pnp_residual(state, vmap.positions[pid], vmap.cov_p[pid],
                           tp.px_prev, tp.px_curr, dt_frames, sigma_track_px,
                           z_min=z_min, px_prev2=tp.px_prev2)
        norms[pid] = out[1] if out is not None else np.inf
    return norms


def frame_to_map_update(prior: StateWithCov, vmap: VoxelMap,
                        tracked: Dict[int, TrackedPoint], frame,
                        dt_frames: float, t_now: float,
                        x_init: FullState = None, config: VioConfig = None):
    """Photometric stage; x_init is the PnP-stage posterior mean.

    Points that have never been rendered (sentinel color covariance) carry
    no photometric information and are skipped.
    """
    config = config or VioConfig()

    def build(x_check):
        terms = []
        for pid in sorted(tracked):
            if vmap.cov_c[pid][0, 0] >= config.uncolored_cov_threshold:
                continue
            tp = tracked[pid]
            dt_c = t_now - vmap.t_rendered[pid]
            out = photometric_residual(
                x_check, vmap.positions[pid], vmap.cov_p[pid],
                vmap.colors[pid], vmap.cov_c[pid], dt_c, frame,
                tp.px_prev, tp.px_curr, dt_frames, config,
                px_prev2=tp.px_prev2)
            if out is None:
                continue
            terms.append(out[0])
        return terms

    posterior, info = iterated_update(prior, build, x_init=x_init,
                                      eps=config.eps,
                                      max_iterations=config.max_iterations)
    residuals = photometric_residual_norms(posterior.x, vmap, tracked, frame,
                                           dt_frames, t_now, config)
    return posterior, info, residuals


def photometric_residual_norms(state, vmap, tracked, frame, dt_frames, t_now,
                               config):
    norms = {}
    for pid, tp in tracked.items():
        if vmap.cov_c[pid][0, 0] >= config.uncolored_cov_threshold:
            norms[pid] = 0.0  # no color yet: nothing to compare against
            continue
        out = photometric_residual(
            state, vmap.positions[pid], vmap.cov_p[pid], vmap.colors[pid],
            vmap.cov_c[pid], t_now - vmap.t_rendered[pid], frame,
            tp.px_prev, tp.px_curr, dt_frames, config, px_prev2=tp.px_prev2)
        norms[pid] = out[1] if out is not None else np.inf
    return norms


# ------------------------------------------------------------------ tracking

def track_points_oracle(tracked: Dict[int, TrackedPoint], vmap: VoxelMap,
                        project_true, image_shape, pixel_sigma, rng):
    """Ground-truth tracking: project each point with the true camera pose
    and add seeded Gaussian pixel noise.  project_true maps a global point
    to its exact pixel location in the current frame (or None)."""
    h, w = image_shape[:2]
    out = {}
    for pid in sorted(tracked):
        px = project_true(vmap.positions[pid])
        if px is None:
            continue
        px = np.asarray(px, float) + rng.normal(0.0, pixel_sigma, 2)
        if not (0.0 <= px[0] <= w - 1.0 and 0.0 <= px[1] <= h - 1.0):
            continue
        prev = tracked[pid]
        hist = prev.px_prev.copy() \
            if not np.array_equal(prev.px_prev, prev.px_curr) else None
        out[pid] = TrackedPoint(pid, prev.px_curr.copy(), px, px_prev2=hist)
    return out


def track_points_lk(tracked: Dict[int, TrackedPoint], frame_prev, frame_curr,
                    fb_threshold=0.5, win_size=21, levels=3):
    """Pyramidal Lucas-Kanade tracking with a forward-backward check."""
    import cv2

    if not tracked:
        return {}
    ids = sorted(tracked)
    prev_pts = np.array([tracked[i].px_curr for i in ids], dtype=np.float32)
    img0 = (np.clip(frame_prev.image, 0, 1) * 255).astype(np.uint8)
    img1 = (np.clip(frame_curr.image, 0, 1) * 255).astype(np.uint8)
    g0 = cv2.cvtColor(img0, cv2.COLOR_RGB2GRAY)
    g1 = cv2.cvtColor(img1, cv2.COLOR_RGB2GRAY)
    params = dict(winSize=(win_size, win_size), maxLevel=levels - 1,
                  criteria=(cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT,
                            30, 0.01))
    nxt, st, _ = cv2.calcOpticalFlowPyrLK(g0, g1, prev_pts.reshape(-1, 1, 2),
                                          None, **params)
    back, st_b, _ = cv2.calcOpticalFlowPyrLK(g1, g0, nxt, None, **params)
    nxt = nxt.reshape(-1, 2)
    fb_err = np.linalg.norm(back.reshape(-1, 2) - prev_pts, axis=1)
    ok = (st.ravel() == 1) & (st_b.ravel() == 1) & (fb_err < fb_threshold)
    h, w = frame_curr.image.shape[:2]
    ok &= ((nxt[:, 0] >= 0) & (nxt[:, 0] <= w - 1)
           & (nxt[:, 1] >= 0) & (nxt[:, 1] <= h - 1))
    out = {}
    for i, pid in enumerate(ids):
        if ok[i]:
            prev = tracked[pid]
            hist = prev.px_prev.copy() \
                if not np.array_equal(prev.px_prev, prev.px_curr) else None
            out[pid] = TrackedPoint(pid, prev.px_curr.copy(), nxt[i],
                                    px_prev2=hist)
    return out
