"""Synthetic world made of colored planar patches.

A patch is a parallelogram: corner ``q`` plus edge vectors ``e1``, ``e2``.
Its albedo is an affine function of the patch coordinates (u, v) in [0,1]^2,
clipped to [0,1] per channel, so the photometric residual has a smooth,
non-degenerate gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Patch:
    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    color0: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.5]))
    grad_u: np.ndarray = field(default_factory=lambda: np.zeros(3))
    grad_v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.corner = np.asarray(self.corner, dtype=float)
        self.edge_u = np.asarray(self.edge_u, dtype=float)
        self.edge_v = np.asarray(self.edge_v, dtype=float)
        self.color0 = np.asarray(self.color0, dtype=float)
        self.grad_u = np.asarray(self.grad_u, dtype=float)
        self.grad_v = np.asarray(self.grad_v, dtype=float)
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) <= 0.0:
            raise ValueError("patch edges are degenerate (zero area)")

    @property
    def normal(self):
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    def albedo(self, u, v):
        """Albedo at patch coordinates; u, v may be arrays of equal shape."""
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        c = self.color0 + u * self.grad_u + v * self.grad_v
        return np.clip(c, 0.0, 1.0)


@dataclass
class SimWorld:
    patches: list
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)

    def intersect(self, origins, dirs, max_range=np.inf):
        """Nearest patch hit for a batch of rays.

        origins: (N,3) or (3,); dirs: (N,3) ray directions (need not be unit,
        ranges are measured in units of ||dir||).  Returns (range, patch_id,
        u, v) arrays with range = inf and patch_id = -1 for misses.
        """
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        origins = np.broadcast_to(
            np.asarray(origins, dtype=float), dirs.shape
        )
        n = dirs.shape[0]
        best_s = np.full(n, np.inf)
        best_id = np.full(n, -1, dtype=int)
        best_u = np.zeros(n)
        best_v = np.zeros(n)
        for pid, patch in enumerate(self.patches):
            nrm = np.cross(patch.edge_u, patch.edge_v)
            denom = dirs @ nrm
            with np.errstate(divide="ignore", invalid="ignore"):
                s = ((patch.corner - origins) @ nrm) / denom
            valid = np.isfinite(s) & (s > 1e-9) & (s < max_range)
            if not valid.any():
                continue
            s = np.where(valid, s, 0.0)
            h = origins + s[:, None] * dirs - patch.corner
            # patch coordinates via the 2x2 Gram system of the edge basis
            g11 = patch.edge_u @ patch.edge_u
            g12 = patch.edge_u @ patch.edge_v
            g22 = patch.edge_v @ patch.edge_v
            det = g11 * g22 - g12 * g12
            b1 = h @ patch.edge_u
            b2 = h @ patch.edge_v
            u = (g22 * b1 - g12 * b2) / det
            v = (g11 * b2 - g12 * b1) / det
            valid &= (u >= -1e-12) & (u <= 1.0 + 1e-12)
            valid &= (v >= -1e-12) & (v <= 1.0 + 1e-12)
            closer = valid & (s < best_s)
            best_s[closer] = s[closer]
            best_id[closer] = pid
            best_u[closer] = u[closer]
            best_v[closer] = v[closer]
        return best_s, best_id, best_u, best_v

    def albedo_at(self, patch_ids, u, v):
        """Albedo for an array of (patch_id, u, v) hits; misses return black."""
        patch_ids = np.asarray(patch_ids)
        out = np.zeros(patch_ids.shape + (3,))
        for pid in np.unique(patch_ids):
            if pid < 0:
                continue
            m = patch_ids == pid
            out[m] = self.patches[pid].albedo(np.asarray(u)[m], np.asarray(v)[m])
        return out


def wall_patch(corner, edge_u, edge_v, color0, grad_u=(0, 0, 0), grad_v=(0, 0, 0)):
    return Patch(
        corner=np.array(corner, dtype=float),
        edge_u=np.array(edge_u, dtype=float),
        edge_v=np.array(edge_v, dtype=float),
        color0=np.array(color0, dtype=float),
        grad_u=np.array(grad_u, dtype=float),
        grad_v=np.array(grad_v, dtype=float),
    )
