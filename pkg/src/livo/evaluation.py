"""Trajectory accuracy metrics: endpoint drift and relative pose errors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .manifold import log_so3, quat_from_rot, rot_from_quat

DEFAULT_LENGTHS = (50.0, 100.0, 150.0, 200.0, 250.0, 300.0)


@dataclass
class Trajectory:
    times: np.ndarray
    rotations: np.ndarray   # (N,3,3)
    positions: np.ndarray   # (N,3)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @classmethod
    def read_csv(cls, path):
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        R = np.stack([rot_from_quat(r[4:8]) for r in rows]) if len(rows) else \
            np.empty((0, 3, 3))
        return cls(times=rows[:, 0], rotations=R, positions=rows[:, 1:4])

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("t,px,py,pz,qx,qy,qz,qw\n")
            for t, R, p in zip(self.times, self.rotations, self.positions):
                q = quat_from_rot(R)
                f.write(f"{t:.9f},{p[0]:.12g},{p[1]:.12g},{p[2]:.12g},"
                        f"{q[0]:.15g},{q[1]:.15g},{q[2]:.15g},{q[3]:.15g}\n")


def relative_pose(R_a, p_a, R_b, p_b):
    """Pose of frame b expressed in frame a."""
    return R_a.T @ R_b, R_a.T @ (p_b - p_a)


def rotation_angle_deg(R):
    return np.rad2deg(np.linalg.norm(log_so3(R)))


def endpoint_drift(est: Trajectory, gt_relative=None):
    """Drift between the estimated end-relative-to-start pose and the
    ground-truth relative pose (identity for a closed loop).

    Returns (rotation drift in degrees, translation drift in meters).
    """
    if len(est) == 0:
        raise ValueError("empty trajectory")
    R_rel, p_rel = relative_pose(est.rotations[0], est.positions[0],
                                 est.rotations[-1], est.positions[-1])
    if gt_relative is None:
        R_gt, p_gt = np.eye(3), np.zeros(3)
    else:
        R_gt, p_gt = gt_relative
    rot_deg = rotation_angle_deg(np.asarray(R_gt).T @ R_rel)
    trans_m = float(np.linalg.norm(p_rel - np.asarray(p_gt)))
    return rot_deg, trans_m


def associate(est: Trajectory, gt: Trajectory, max_dt=0.01):
    """Index pairs (i_est, i_gt) by nearest-neighbor timestamp matching."""
    pairs = []
    j = 0
    for i, t in enumerate(est.times):
        j = int(np.searchsorted(gt.times, t))
        best = None
        for jj in (j - 1, j):
            if 0 <= jj < len(gt.times):
                dt = abs(gt.times[jj] - t)
                if best is None or dt < best[1]:
                    best = (jj, dt)
        if best is not None and best[1] <= max_dt:
            pairs.append((i, best[0]))
    return pairs


def relative_pose_errors(est: Trajectory, gt: Trajectory,
                         lengths=DEFAULT_LENGTHS, max_dt=0.01, stride=1):
    """Mean relative rotation (deg) and translation (% of length) errors
    over all ground-truth sub-sequences of each given arc length.

    Returns a list of dicts; lengths the trajectory cannot span are
    reported with a 'skipped' note and NaN errors.
    """
    pairs = associate(est, gt, max_dt=max_dt)
    if len(pairs) < 2:
        raise ValueError("trajectories share too few associated poses")
    ei = [p[0] for p in pairs]
    gi = [p[1] for p in pairs]
    eR, ep = est.rotations[ei], est.positions[ei]
    gR, gp = gt.rotations[gi], gt.positions[gi]
    seg = np.linalg.norm(np.diff(gp, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])

    results = []
    for L in lengths:
        rot_errs, trans_errs = [], []
        for i in range(0, len(arc), stride):
            j = int(np.searchsorted(arc, arc[i] + L))
            if j >= len(arc):
                break
            Rg, pg = relative_pose(gR[i], gp[i], gR[j], gp[j])
            Re, pe = relative_pose(eR[i], ep[i], eR[j], ep[j])
            rot_errs.append(rotation_angle_deg(Rg.T @ Re))
            trans_errs.append(np.linalg.norm(pe - pg) / L * 100.0)
        if rot_errs:
            results.append({"length_m": L, "rre_deg": float(np.mean(rot_errs)),
                            "rte_pct": float(np.mean(trans_errs)),
                            "windows": len(rot_errs)})
        else:
            results.append({"length_m": L, "rre_deg": np.nan,
                            "rte_pct": np.nan, "windows": 0,
                            "note": "skipped: trajectory shorter than length"})
    return results


def format_rpe_table(results, label="estimate"):
    """Plain-text table: one column per sub-sequence length, deg / %."""
    header = ["Sub-sequence"] + [f"{r['length_m']:g} m" for r in results]
    units = ["RRE/RTE"] + ["deg / %"] * len(results)
    vals = [label]
    for r in results:
        if r["windows"]:
            vals.append(f"{r['rre_deg']:.3f} / {r['rte_pct']:.3f}")
        else:
            vals.append("- / -")
    widths = [max(len(a), len(b), len(c)) for a, b, c in zip(header, units, vals)]
    lines = []
    for row in (header, units, vals):
        lines.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def write_rpe_csv(results, path):
    with open(path, "w") as f:
        f.write("length_m,rre_deg,rte_pct,windows\n")
        for r in results:
            f.write(f"{r['length_m']:g},{r['rre_deg']:.9g},"
                    f"{r['rte_pct']:.9g},{r['windows']}\n")
