"""Dataset replay: LiDAR geometry updates and visual texture updates over
one shared state and one shared map, in global timestamp order."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .config import PipelineConfig
from .evaluation import Trajectory
from .imu import NoiseConfig, backward_compensate, propagate
from .lio import LioConfig, lio_update
from .manifold import FullState, StateWithCov, block_slice
from .mapping import TrackedPoint, VoxelMap
from .sim.dataset import SequenceData, read_sequence
from .vio import (
    VioConfig,
    frame_to_frame_update,
    frame_to_map_update,
    track_points_lk,
    track_points_oracle,
)


@dataclass
class RunReport:
    trajectory: Trajectory
    map: VoxelMap
    diagnostics: List[dict] = field(default_factory=list)


def _initial_state(seq: SequenceData, cfg: PipelineConfig) -> StateWithCov:
    t0 = seq.imu[0].t if seq.imu else 0.0
    R0, p0 = seq.gt_pose_at(t0)
    x = FullState(
        R_GI=R0.copy(), p_GI=p0.copy(),
        v_G=np.array(seq.meta.get("initial_velocity", [0.0, 0.0, 0.0])),
        g_G=seq.gravity.copy(),
        R_IC=seq.calib_init.R_IC.copy(),
        p_IC=seq.calib_init.p_IC.copy(),
        t_IC=float(seq.calib_init.t_IC),
        intrinsics=seq.calib_init.intrinsics.copy(),
    )
    c = cfg.init_cov
    sig = np.empty(29)
    sig[block_slice("rot")] = c.rot
    sig[block_slice("pos")] = c.pos
    sig[block_slice("vel")] = c.vel
    sig[block_slice("bg")] = c.bg
    sig[block_slice("ba")] = c.ba
    sig[block_slice("grav")] = c.grav
    sig[block_slice("rot_ic")] = c.rot_ic
    sig[block_slice("pos_ic")] = c.pos_ic
    sig[block_slice("t_ic").start] = c.t_ic
    sig[block_slice("intr")] = c.intr
    return StateWithCov(x, np.diag(sig**2))


def _noise_from_sequence(seq: SequenceData) -> NoiseConfig:
    # the sequence records its IMU noise densities; fall back to defaults
    meta = {}
    calib_path = os.path.join(seq.meta.get("_dir", ""), "calib.json")
    if os.path.exists(calib_path):
        with open(calib_path) as f:
            meta = json.load(f).get("imu_noise", {}) or {}
    allowed = set(vars(NoiseConfig()))
    return NoiseConfig(**{k: v for k, v in meta.items() if k in allowed})


def _oracle_projector(seq: SequenceData, t_frame: float, z_min=0.01):
    """Exact pixel location of a global point in the frame stamped t_frame."""
    calib = seq.calib_true
    t_true = t_frame + calib.t_IC
    R_GI, p_GI = seq.gt_pose_at(t_true, tol=0.02)
    R_GC = R_GI @ calib.R_IC
    p_GC = R_GI @ calib.p_IC + p_GI
    fx, fy, cx, cy = calib.intrinsics

    def project(p_G):
        cp = R_GC.T @ (np.asarray(p_G) - p_GC)
        if cp[2] <= z_min:
            return None
        return np.array([fx * cp[0] / cp[2] + cx, fy * cp[1] / cp[2] + cy])

    return project


def _projection_px_sigma(state: StateWithCov, omega_norm: float) -> float:
    """1-sigma pixel error of a map-point projection implied by the state.

    Maps the covariance of the pose, camera extrinsics, principal point and
    time offset into pixel space at a nominal 1 m depth; translation and
    time-offset terms use the focal length and current body rate as scale.
    """
    C = state.cov
    f = float(np.mean(state.x.intrinsics[:2]))
    r, p = block_slice("rot"), block_slice("pos")
    ric, pic = block_slice("rot_ic"), block_slice("pos_ic")
    i_t = block_slice("t_ic").start
    i_i = block_slice("intr").start
    var = C[i_i + 2, i_i + 2] + C[i_i + 3, i_i + 3]
    var += f**2 * (np.trace(C[r, r]) + np.trace(C[ric, ric]))
    var += f**2 * (np.trace(C[p, p]) + np.trace(C[pic, pic]))
    var += f**2 * omega_norm**2 * C[i_t, i_t]
    return float(np.sqrt(max(var, 0.0)))


def run(cfg: PipelineConfig, seq: Optional[SequenceData] = None) -> RunReport:
    """Replay a sequence through the full pipeline and write outputs."""
    cfg.validate()
    if seq is None:
        seq = read_sequence(cfg.sequence_dir)
        seq.meta["_dir"] = cfg.sequence_dir
    os.makedirs(cfg.output_dir, exist_ok=True)

    noise = _noise_from_sequence(seq)
    vmap = VoxelMap(voxel_size=cfg.map.voxel_size,
                    min_spacing=cfg.map.min_spacing,
                    activation_window=cfg.map.activation_window,
                    max_shells=cfg.map.max_shells,
                    plane_fit_threshold=cfg.map.plane_fit_threshold,
                    min_plane_spread=cfg.map.min_plane_spread)
    lio_cfg = LioConfig(k_neighbors=cfg.lio.k_neighbors,
                        sigma_range=cfg.lio.sigma_range,
                        min_valid_residuals=cfg.lio.min_valid_residuals,
                        max_iterations=cfg.lio.max_iterations,
                        eps=cfg.lio.eps)
    vio_cfg = VioConfig(z_min=cfg.vio.z_min,
                        sigma_track_px=cfg.vio.sigma_track_px,
                        sigma_pix=cfg.vio.sigma_pix,
                        sigma_color=cfg.vio.sigma_color,
                        use_huber=cfg.vio.use_huber,
                        huber_delta_px=cfg.vio.huber_delta_px,
                        eps=cfg.vio.eps,
                        max_iterations=cfg.vio.max_iterations)

    events = [("lidar", sc.t_end, i) for i, sc in enumerate(seq.scans)]
    events += [("camera", fr.t, i) for i, fr in enumerate(seq.frames)]
    lidar_rank = 0 if cfg.lidar_first_on_tie else 1
    events.sort(key=lambda e: (e[1], lidar_rank if e[0] == "lidar" else 1 - lidar_rank))

    state = _initial_state(seq, cfg)
    t_state = seq.imu[0].t if seq.imu else 0.0
    tracked = {}
    prev_frame = None
    prev_frame_t = None
    cam_dt_default = 1.0 / seq.meta.get("rates_hz", {}).get("cam", 20.0)

    t_imu = np.array([s.t for s in seq.imu], dtype=float)
    omega_imu = np.array([np.linalg.norm(s.gyro) for s in seq.imu],
                         dtype=float) if seq.imu else np.zeros(0)

    traj_rows = []
    diagnostics = []
    lidar_noise_cov = np.eye(3) * (cfg.lio.sigma_range**2)

    for kind, t_ev, idx in events:
        if t_ev < t_state - 1e-9:
            raise ValueError(
                f"{kind} measurement at t={t_ev} precedes current state time")
        state = propagate(state, seq.imu, t_state, t_ev, noise)
        t_state = t_ev

        if kind == "lidar":
            scan = seq.scans[idx]
            comp = backward_compensate(scan, seq.imu, state.x)
            posterior, info = lio_update(state, comp.points, vmap, lio_cfg)
            state = posterior
            pts_G = comp.points @ state.x.R_GI.T + state.x.p_GI
            rep = vmap.insert_scan(pts_G, lidar_noise_cov, t_now=t_ev)
            vmap.set_activation(t_ev)
            diagnostics.append({
                "t": t_ev, "kind": "lidar",
                "iterations": info.iterations, "n_residuals": info.n_terms,
                "degenerate": bool(info.degenerate),
                "appended": rep.appended,
                "cov_trace": float(np.trace(state.cov)),
            })
        else:
            frame = seq.frames[idx]
            dt_frames = (t_ev - prev_frame_t) if prev_frame_t is not None \
                else cam_dt_default
            if cfg.vio.tracking_mode == "oracle":
                rng = np.random.default_rng((cfg.seed, idx))
                tracked = track_points_oracle(
                    tracked, vmap, _oracle_projector(seq, t_ev),
                    frame.image.shape, cfg.vio.oracle_pixel_sigma, rng)
                sigma_track = max(cfg.vio.oracle_pixel_sigma, 1e-3)
            else:
                tracked = track_points_lk(tracked, prev_frame, frame) \
                    if prev_frame is not None else {}
                sigma_track = cfg.vio.sigma_track_px

            f2f_post, f2f_info, pnp_res = frame_to_frame_update(
                state, vmap, tracked, dt_frames, vio_cfg,
                sigma_track_px=sigma_track)
            if cfg.vio.chained_covariance:
                stage2_prior = f2f_post
            else:
                stage2_prior = StateWithCov(state.x, state.cov)
            f2m_post, f2m_info, photo_res = frame_to_map_update(
                stage2_prior, vmap, tracked, frame, dt_frames, t_ev,
                x_init=f2f_post.x, config=vio_cfg)
            state = f2m_post

            omega_now = float(np.interp(t_ev, t_imu, omega_imu)) \
                if len(t_imu) else 0.0
            vmap.render_point_colors(frame, state.x, cfg.vio.sigma_color,
                                     t_now=t_ev, sigma_pix=cfg.vio.sigma_pix,
                                     z_min=cfg.vio.z_min,
                                     px_sigma=_projection_px_sigma(state,
                                                                   omega_now))
            tracked = vmap.update_tracked_points(
                tracked, state.x, frame.image.shape,
                pnp_residuals=pnp_res, photo_residuals=photo_res,
                tau_pnp=cfg.vio.tau_pnp, tau_photo=cfg.vio.tau_photo,
                exclusion_radius=cfg.vio.exclusion_radius_px,
                z_min=cfg.vio.z_min)
            prev_frame, prev_frame_t = frame, t_ev
            diagnostics.append({
                "t": t_ev, "kind": "camera",
                "pnp_iterations": f2f_info.iterations,
                "pnp_terms": f2f_info.n_terms,
                "photo_iterations": f2m_info.iterations,
                "photo_terms": f2m_info.n_terms,
                "tracked": len(tracked),
                "cov_trace": float(np.trace(state.cov)),
            })
        traj_rows.append((t_ev, state.x.R_GI.copy(), state.x.p_GI.copy()))

    times = np.array([r[0] for r in traj_rows])
    # on duplicate timestamps keep the last row (the final update at that time)
    keep = np.concatenate([np.diff(times) > 0, [True]]) if len(times) else \
        np.array([], dtype=bool)
    traj = Trajectory(
        times=times[keep],
        rotations=np.stack([r[1] for r in traj_rows])[keep] if traj_rows else
        np.empty((0, 3, 3)),
        positions=np.stack([r[2] for r in traj_rows])[keep] if traj_rows else
        np.empty((0, 3)),
    )

    traj.write_csv(os.path.join(cfg.output_dir, "trajectory.csv"))
    vmap.export_ply(os.path.join(cfg.output_dir, "map.ply"))
    np.savez(os.path.join(cfg.output_dir, "map.npz"),
             positions=vmap.positions[:vmap.n], colors=vmap.colors[:vmap.n])
    with open(os.path.join(cfg.output_dir, "diagnostics.jsonl"), "w") as f:
        for row in diagnostics:
            f.write(json.dumps(row) + "\n")
    with open(os.path.join(cfg.output_dir, "final_state.json"), "w") as f:
        x = state.x
        json.dump({
            "t": t_state,
            "R_IC": x.R_IC.reshape(-1).tolist(),
            "p_IC": x.p_IC.tolist(),
            "t_IC": float(x.t_IC),
            "intrinsics": x.intrinsics.tolist(),
            "b_g": x.b_g.tolist(),
            "b_a": x.b_a.tolist(),
            "cov_trace": float(np.trace(state.cov)),
        }, f, indent=2)
    return RunReport(trajectory=traj, map=vmap, diagnostics=diagnostics)
