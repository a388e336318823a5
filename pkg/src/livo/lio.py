"""LiDAR-inertial update: point-to-plane residuals against the voxel map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .esikf import MeasurementTerm, iterated_update
from .manifold import STATE_DIM, FullState, StateWithCov, block_slice
from .mapping import VoxelMap


@dataclass
class PlaneResidual:
    normal: np.ndarray     # unit plane normal
    offset: float          # plane satisfies n . p + d = 0
    point_G: np.ndarray    # scan point in the global frame
    r: float               # signed point-to-plane distance
    jac: np.ndarray        # (29,) w.r.t. the error state
    variance: float


@dataclass
class LioConfig:
    k_neighbors: int = 5
    sigma_range: float = 0.02    # per-point plane-residual noise, meters
    gate_sigma: float = 3.0      # residual outlier gate, in standard deviations
    min_valid_residuals: int = 10
    eps: float = 1e-6
    max_iterations: int = 5


def _neighborhoods(vmap: VoxelMap, pts_G, k, tree=None):
    """k-NN indices and validity for a batch of query points.

    The neighborhood is valid when k points exist within the same reach the
    voxel-shell search covers and they form a plane within the map's fit
    threshold.  Returns (idx (N,k), normals (N,3), offsets (N,), valid (N,),
    signed neighbor-to-plane distances (N,k)).
    """
    n_map = vmap.n
    n_q = len(pts_G)
    if n_map < k:
        return (np.zeros((n_q, k), dtype=int), np.zeros((n_q, 3)),
                np.zeros(n_q), np.zeros(n_q, dtype=bool),
                np.zeros((n_q, k)))
    if tree is None:
        tree = cKDTree(vmap.positions[:n_map])
    reach = (vmap.max_shells + 1) * vmap.voxel_size * np.sqrt(3.0)
    dists, idx = tree.query(pts_G, k=k)
    valid = dists[:, -1] <= reach
    idx = np.clip(idx, 0, n_map - 1)

    nb = vmap.positions[idx]                       # (N,k,3)
    centroid = nb.mean(axis=1, keepdims=True)
    _, sv, vt = np.linalg.svd(nb - centroid, full_matrices=False)
    normals = vt[:, -1, :]                         # (N,3)
    offsets = -np.einsum("ni,ni->n", normals, centroid[:, 0])
    plane_d = np.einsum("nki,ni->nk", nb, normals) + offsets[:, None]
    valid &= np.abs(plane_d).max(axis=1) < vmap.plane_fit_threshold
    # Near-collinear neighborhoods (single scan ring) leave the normal
    # unconstrained; require genuine two-dimensional spread.
    valid &= sv[:, 1] >= vmap.min_plane_spread
    valid &= sv[:, 1] >= 3.0 * sv[:, 2]
    return idx, normals, offsets, valid, plane_d


def build_plane_residuals(vmap: VoxelMap, scan_points, state: FullState,
                          config: LioConfig = None, tree=None):
    """One residual per scan point with a valid local plane.

    scan_points are in the scan-end IMU frame; the transform to global uses
    the current iterate.  The Jacobian covers the attitude and position
    blocks only.  A prebuilt cKDTree over the map positions can be passed
    to amortize neighbor queries across update iterations.
    """
    config = config or LioConfig()
    pts_I = np.atleast_2d(np.asarray(scan_points, dtype=float))
    R, p = state.R_GI, state.p_GI
    pts_G = pts_I @ R.T + p
    if vmap.n < config.k_neighbors:
        return []
    idx, normals, offsets, valid, plane_d = _neighborhoods(
        vmap, pts_G, config.k_neighbors, tree=tree)
    if not valid.any():
        return []

    r_all = np.einsum("ni,ni->n", normals, pts_G) + offsets
    a = normals @ R                                # rows R^T n
    jac_rot = -np.cross(a, pts_I)                  # d r / d attitude error
    fit_var = plane_d.var(axis=1)
    variances = config.sigma_range**2 + fit_var

    out = []
    r_sl, p_sl = block_slice("rot"), block_slice("pos")
    for i in np.nonzero(valid)[0]:
        jac = np.zeros(STATE_DIM)
        jac[r_sl] = jac_rot[i]
        jac[p_sl] = normals[i]
        out.append(PlaneResidual(normal=normals[i], offset=float(offsets[i]),
                                 point_G=pts_G[i], r=float(r_all[i]),
                                 jac=jac, variance=float(variances[i])))
    return out


def lio_update(prior: StateWithCov, scan_points, vmap: VoxelMap,
               config: LioConfig = None):
    """Iterated point-to-plane update; returns (posterior, info).

    Degenerate scans (too few valid residuals) still run: the prior term
    dominates and the posterior covariance reflects the weak constraint.
    """
    config = config or LioConfig()
    tree = cKDTree(vmap.positions[:vmap.n]) if vmap.n >= config.k_neighbors \
        else None

    def build(x_check):
        res = build_plane_residuals(vmap, scan_points, x_check, config,
                                    tree=tree)
        if not res:
            return []
        r = np.array([pr.r for pr in res])
        var = np.array([pr.variance for pr in res])
        # Robust gate: outliers (corner-contaminated planes) show up as
        # residuals far from the bulk.  The median absolute deviation keeps
        # the gate loose while the iterate is still far from converged.
        med = np.median(r)
        mad = 1.4826 * np.median(np.abs(r - med))
        keep = np.abs(r - med) <= config.gate_sigma * np.sqrt(var + mad**2)
        if not keep.any():
            return []
        return [MeasurementTerm(
            r=r[keep],
            jac=np.stack([pr.jac for pr in res])[keep],
            cov=var[keep],
        )]

    posterior, info = iterated_update(prior, build, eps=config.eps,
                                      max_iterations=config.max_iterations)
    info.degenerate = info.n_terms < config.min_valid_residuals
    return posterior, info
