"""The shared colored point map.

One container serves both subsystems: the LiDAR update appends geometry and
queries local planes; the visual update renders point colors by Bayesian
fusion and maintains the set of tracked points.  Points live in a spatial
hash of fixed-size voxels; a voxel is *activated* while it has received
points within the recency window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import FullState

UNCOLORED_COV = 1e3  # covariance magnitude marking a never-rendered point


@dataclass
class Voxel:
    ids: list = field(default_factory=list)
    t_last_append: float = -np.inf
    activated: bool = False


@dataclass
class TrackedPoint:
    point_id: int
    px_prev: np.ndarray   # location in the previous image
    px_curr: np.ndarray   # location in the current image
    px_prev2: np.ndarray = None   # two frames back, when available

    def __post_init__(self):
        self.px_prev = np.asarray(self.px_prev, dtype=float)
        self.px_curr = np.asarray(self.px_curr, dtype=float)
        if self.px_prev2 is not None:
            self.px_prev2 = np.asarray(self.px_prev2, dtype=float)


@dataclass
class InsertionReport:
    appended: int = 0
    rejected_spacing: int = 0
    rejected_invalid: int = 0


class VoxelMap:
    """Spatially hashed colored point cloud with activation bookkeeping."""

    def __init__(self, voxel_size=0.1, min_spacing=0.10, activation_window=1.0,
                 max_shells=3, plane_fit_threshold=0.05,
                 min_plane_spread=0.05):
        if voxel_size <= 0 or min_spacing < 0:
            raise ValueError("voxel_size must be > 0 and min_spacing >= 0")
        self.voxel_size = float(voxel_size)
        self.min_spacing = float(min_spacing)
        self.activation_window = float(activation_window)
        self.max_shells = int(max_shells)
        self.plane_fit_threshold = float(plane_fit_threshold)
        self.min_plane_spread = float(min_plane_spread)
        self.voxels = {}
        cap = 1024
        self.positions = np.empty((cap, 3))
        self.colors = np.zeros((cap, 3))
        self.cov_p = np.empty((cap, 3, 3))
        self.cov_c = np.empty((cap, 3, 3))
        self.t_created = np.empty(cap)
        self.t_rendered = np.full(cap, -np.inf)
        self.n = 0

    def __len__(self):
        return self.n

    def _grow(self, need):
        cap = len(self.positions)
        if self.n + need <= cap:
            return
        new_cap = max(cap * 2, self.n + need)
        for name in ("positions", "colors", "cov_p", "cov_c",
                     "t_created", "t_rendered"):
            arr = getattr(self, name)
            new = np.empty((new_cap,) + arr.shape[1:])
            new[: self.n] = arr[: self.n]
            if name == "colors":
                new[self.n:] = 0.0
            if name == "t_rendered":
                new[self.n:] = -np.inf
            setattr(self, name, new)

    def voxel_index(self, p):
        return tuple(np.floor(np.asarray(p) / self.voxel_size).astype(int))

    def _neighbor_ids(self, key, shell):
        """Point ids in voxels at exactly Chebyshev distance `shell` from key."""
        kx, ky, kz = key
        ids = []
        r = shell
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) != r:
                        continue
                    v = self.voxels.get((kx + dx, ky + dy, kz + dz))
                    if v is not None:
                        ids.extend(v.ids)
        return ids

    # ---------------------------------------------------------------- insert

    def insert_scan(self, points, cov_p, t_now) -> InsertionReport:
        """Append global-frame points, skipping any within min_spacing of an
        existing point.  Touched voxels get t_last_append = t_now and are
        activated immediately."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cov_p = np.asarray(cov_p, dtype=float)
        if cov_p.ndim == 2:
            cov_p = np.broadcast_to(cov_p, (len(points), 3, 3))
        report = InsertionReport()
        self._grow(len(points))
        spacing2 = self.min_spacing**2
        for i, p in enumerate(points):
            if not np.all(np.isfinite(p)):
                report.rejected_invalid += 1
                continue
            key = self.voxel_index(p)
            if spacing2 > 0.0:
                cand = []
                for shell in range(2):  # own voxel + 26 neighbors
                    cand.extend(self._neighbor_ids(key, shell))
                if cand:
                    d2 = np.sum((self.positions[cand] - p) ** 2, axis=1)
                    if d2.min() < spacing2:
                        report.rejected_spacing += 1
                        # the voxel was still observed this scan: keep it
                        # activated so its points stay usable downstream
                        vox = self.voxels.get(key)
                        if vox is not None:
                            vox.t_last_append = t_now
                            vox.activated = True
                        continue
            pid = self.n
            self.positions[pid] = p
            self.colors[pid] = 0.0
            self.cov_p[pid] = cov_p[i]
            self.cov_c[pid] = np.eye(3) * UNCOLORED_COV
            self.t_created[pid] = t_now
            self.t_rendered[pid] = -np.inf
            self.n += 1
            vox = self.voxels.setdefault(key, Voxel())
            vox.ids.append(pid)
            vox.t_last_append = t_now
            vox.activated = True
            report.appended += 1
        return report

    # ----------------------------------------------------------- activation

    def set_activation(self, t_now):
        """Deactivate voxels whose last append is older than the window."""
        for vox in self.voxels.values():
            vox.activated = (t_now - vox.t_last_append) <= self.activation_window

    def activated_point_ids(self):
        ids = []
        for vox in self.voxels.values():
            if vox.activated:
                ids.extend(vox.ids)
        return np.array(sorted(ids), dtype=int)

    def activated_points(self):
        ids = self.activated_point_ids()
        return ids, self.positions[ids]

    # ------------------------------------------------------------- plane knn

    def knn(self, query, k):
        """Voxel-shell k nearest neighbors; ids sorted by distance.

        Shells keep expanding (up to max_shells) while a farther shell could
        still hold a closer point than the current k-th candidate.
        """
        query = np.asarray(query, dtype=float)
        key = self.voxel_index(query)
        cand = []
        for shell in range(self.max_shells + 1):
            cand.extend(self._neighbor_ids(key, shell))
            if len(cand) >= k:
                d2 = np.sum((self.positions[cand] - query) ** 2, axis=1)
                kth = np.sqrt(np.partition(d2, k - 1)[k - 1])
                # any point in shell s+1 lies at distance >= s * voxel_size
                if shell * self.voxel_size >= kth:
                    break
        if len(cand) < k:
            return np.array([], dtype=int)
        cand = np.asarray(cand)
        d2 = np.sum((self.positions[cand] - query) ** 2, axis=1)
        order = np.argsort(d2, kind="stable")[:k]
        return cand[order]

    def plane_neighbors(self, query, k=5):
        """k-NN plus a least-squares plane fit.

        Returns (ids, normal, offset, valid); the plane satisfies
        n . p + d = 0 for points p on it.  Invalid when fewer than k points
        are reachable or the neighborhood is not planar within threshold.
        """
        if k < 3:
            raise ValueError("plane fit needs k >= 3")
        ids = self.knn(query, k)
        if len(ids) < k:
            return ids, np.zeros(3), 0.0, False
        pts = self.positions[ids]
        centroid = pts.mean(axis=0)
        _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
        normal = vt[-1]
        offset = -normal @ centroid
        dists = np.abs(pts @ normal + offset)
        # s[1] measures the second in-plane extent; near-collinear
        # neighborhoods leave the normal unconstrained and must be rejected.
        valid = bool(dists.max() < self.plane_fit_threshold
                     and s[1] >= self.min_plane_spread
                     and s[1] >= 3.0 * s[2])
        return ids, normal, float(offset), valid

    # ------------------------------------------------------------- rendering

    def render_point_colors(self, frame, state: FullState, sigma_color,
                            t_now, sigma_pix=0.03, z_min=0.01, px_sigma=0.0):
        """Bayesian color update of all activated points visible in frame.

        The per-point prior covariance is inflated by the color random walk
        accumulated since the last render, then fused with the interpolated
        image color in information form.  px_sigma is the 1-sigma pixel error
        of the projection itself (from pose and calibration uncertainty); it
        inflates the color observation covariance through the local image
        gradient so colors sampled under an uncertain projection carry little
        weight.
        """
        from .vio import camera_point_batch, pinhole_project

        ids, pts = self.activated_points()
        if len(ids) == 0:
            return {"rendered": 0, "considered": 0}
        cp = camera_point_batch(state, pts)
        vis = cp[:, 2] > z_min
        px = np.full((len(ids), 2), -1.0)
        px[vis] = pinhole_project(state.intrinsics, cp[vis])
        h, w = frame.image.shape[:2]
        vis &= ((px[:, 0] >= 0.0) & (px[:, 0] <= w - 1.0)
                & (px[:, 1] >= 0.0) & (px[:, 1] <= h - 1.0))
        ids, px = ids[vis], px[vis]
        if len(ids) == 0:
            return {"rendered": 0, "considered": int(vis.size)}

        gamma, cov_gamma = interpolate_color(frame, px, sigma_pix=sigma_pix)
        if px_sigma > 0.0:
            # local gradient term, plus an isotropic contrast floor: a large
            # projection error can land on a patch the local gradient at the
            # sample knows nothing about
            grad = interpolate_color_gradient(frame, px)
            cov_gamma = cov_gamma + px_sigma**2 * (
                np.einsum("nij,nkj->nik", grad, grad)
                + 0.05**2 * np.eye(3))
        dt = np.where(np.isfinite(self.t_rendered[ids]),
                      t_now - self.t_rendered[ids],
                      0.0)
        prior_cov = self.cov_c[ids] + (sigma_color**2 * dt)[:, None, None] * np.eye(3)
        A = np.linalg.inv(prior_cov)
        B = np.linalg.inv(cov_gamma)
        fused_cov = np.linalg.inv(A + B)
        fused = np.einsum("nij,nj->ni",
                          fused_cov,
                          np.einsum("nij,nj->ni", A, self.colors[ids])
                          + np.einsum("nij,nj->ni", B, gamma))
        self.colors[ids] = np.clip(fused, 0.0, 1.0)
        self.cov_c[ids] = fused_cov
        self.t_rendered[ids] = t_now
        return {"rendered": int(len(ids)), "considered": int(vis.size)}

    # -------------------------------------------------------- tracked points

    def update_tracked_points(self, tracked, state: FullState, image_shape,
                              pnp_residuals=None, photo_residuals=None,
                              tau_pnp=4.0, tau_photo=0.12,
                              exclusion_radius=50.0, z_min=0.01):
        """Post-update maintenance of the tracked point set.

        Removes tracked points with excessive PnP / photometric residuals or
        which left the image; then adds activated map points whose projection
        has no tracked neighbor within the exclusion radius (ascending point
        id, first-come wins).
        """
        from .vio import camera_point_batch, pinhole_project

        h, w = image_shape[:2]
        pnp_residuals = pnp_residuals or {}
        photo_residuals = photo_residuals or {}

        kept = {}
        occupied = []
        for pid in sorted(tracked):
            tp = tracked[pid]
            if pnp_residuals.get(pid, 0.0) > tau_pnp:
                continue
            if photo_residuals.get(pid, 0.0) > tau_photo:
                continue
            cp = camera_point_batch(state, self.positions[pid][None])[0]
            if cp[2] <= z_min:
                continue
            px = pinhole_project(state.intrinsics, cp[None])[0]
            if not (0.0 <= px[0] <= w - 1.0 and 0.0 <= px[1] <= h - 1.0):
                continue
            # keep the measured track; the reprojection only claims space
            # for the exclusion test below
            kept[pid] = tp
            occupied.append(px)

        ids, pts = self.activated_points()
        if len(ids):
            cp = camera_point_batch(state, pts)
            vis = cp[:, 2] > z_min
            px_all = np.full((len(ids), 2), np.nan)
            px_all[vis] = pinhole_project(state.intrinsics, cp[vis])
            vis &= ((px_all[:, 0] >= 0.0) & (px_all[:, 0] <= w - 1.0)
                    & (px_all[:, 1] >= 0.0) & (px_all[:, 1] <= h - 1.0))
            r2 = exclusion_radius**2
            occ = np.array(occupied) if occupied else np.empty((0, 2))
            for j in np.nonzero(vis)[0]:  # ascending point id
                pid = int(ids[j])
                if pid in kept:
                    continue
                px = px_all[j]
                if len(occ) and np.min(np.sum((occ - px) ** 2, axis=1)) < r2:
                    continue
                kept[pid] = TrackedPoint(pid, px.copy(), px.copy())
                occ = np.vstack([occ, px[None]])
        return kept

    # ---------------------------------------------------------------- export

    def export_ply(self, path):
        """Binary little-endian PLY: x,y,z float32 + r,g,b uint8."""
        n = self.n
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {n}\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n"
        )
        xyz = self.positions[:n].astype("<f4")
        rgb = np.clip(self.colors[:n] * 255.0 + 0.5, 0, 255).astype(np.uint8)
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            for i in range(n):
                f.write(xyz[i].tobytes())
                f.write(rgb[i].tobytes())

    def export_pcd(self, path):
        """Binary PCD with x,y,z float32 and rgb packed into a float32."""
        n = self.n
        header = (
            "# .PCD v0.7 - Point Cloud Data file format\n"
            "VERSION 0.7\nFIELDS x y z rgb\nSIZE 4 4 4 4\nTYPE F F F F\n"
            f"COUNT 1 1 1 1\nWIDTH {n}\nHEIGHT 1\n"
            "VIEWPOINT 0 0 0 1 0 0 0\n"
            f"POINTS {n}\nDATA binary\n"
        )
        rgb = np.clip(self.colors[:n] * 255.0 + 0.5, 0, 255).astype(np.uint32)
        packed = (rgb[:, 0] << 16) | (rgb[:, 1] << 8) | rgb[:, 2]
        rec = np.empty((n, 4), dtype="<f4")
        rec[:, :3] = self.positions[:n]
        rec[:, 3] = packed.view(np.float32) if packed.dtype == np.uint32 else 0
        rec[:, 3] = np.frombuffer(packed.astype("<u4").tobytes(), dtype="<f4")
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(rec.tobytes())


def interpolate_color(frame, px, sigma_pix=0.03):
    """Bilinear color and its covariance at (possibly batched) pixel locations.

    px is (..., 2) as (x, y) with x along image width.  Out-of-bounds
    locations raise; the covariance is the configured diagonal per-pixel
    noise model.
    """
    img = frame.image
    h, w = img.shape[:2]
    px = np.asarray(px, dtype=float)
    single = px.ndim == 1
    px = np.atleast_2d(px)
    if np.any((px[:, 0] < 0) | (px[:, 0] > w - 1)
              | (px[:, 1] < 0) | (px[:, 1] > h - 1)):
        raise ValueError("pixel location outside image bounds")
    x0 = np.clip(np.floor(px[:, 0]).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(px[:, 1]).astype(int), 0, h - 2)
    fx = px[:, 0] - x0
    fy = px[:, 1] - y0
    c00 = img[y0, x0]
    c10 = img[y0, x0 + 1]
    c01 = img[y0 + 1, x0]
    c11 = img[y0 + 1, x0 + 1]
    gamma = ((1 - fx) * (1 - fy))[:, None] * c00 + (fx * (1 - fy))[:, None] * c10 \
        + ((1 - fx) * fy)[:, None] * c01 + (fx * fy)[:, None] * c11
    cov = np.broadcast_to(np.eye(3) * sigma_pix**2, (len(px), 3, 3)).copy()
    if single:
        return gamma[0], cov[0]
    return gamma, cov


def interpolate_color_gradient(frame, px):
    """Derivative of the bilinear interpolant w.r.t. pixel location.

    Returns (..., 3, 2) arrays: d(color)/d(x, y), piecewise constant in x
    and y inside each pixel cell (the analytic gradient of the residual's
    own interpolation, not a smoothed image derivative).
    """
    img = frame.image
    h, w = img.shape[:2]
    px = np.asarray(px, dtype=float)
    single = px.ndim == 1
    px = np.atleast_2d(px)
    x0 = np.clip(np.floor(px[:, 0]).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(px[:, 1]).astype(int), 0, h - 2)
    fx = (px[:, 0] - x0)[:, None]
    fy = (px[:, 1] - y0)[:, None]
    c00 = img[y0, x0]
    c10 = img[y0, x0 + 1]
    c01 = img[y0 + 1, x0]
    c11 = img[y0 + 1, x0 + 1]
    ddx = (1 - fy) * (c10 - c00) + fy * (c11 - c01)
    ddy = (1 - fx) * (c01 - c00) + fx * (c11 - c10)
    grad = np.stack([ddx, ddy], axis=-1)
    if single:
        return grad[0]
    return grad
