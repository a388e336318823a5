import numpy as np
import pytest

from livo.manifold import FullState
from livo.mapping import (
    UNCOLORED_COV,
    TrackedPoint,
    VoxelMap,
    interpolate_color,
    interpolate_color_gradient,
)
from livo.sim import CameraFrame


def brute_force_knn(positions, query, k):
    d2 = np.sum((positions - query) ** 2, axis=1)
    return np.argsort(d2, kind="stable")[:k]


def fresh_map(**kwargs):
    defaults = dict(voxel_size=0.2, min_spacing=0.05, activation_window=1.0)
    defaults.update(kwargs)
    return VoxelMap(**defaults)


class TestInsertion:
    def test_append_and_count(self):
        m = fresh_map()
        rep = m.insert_scan(np.array([[0.0, 0, 0], [1.0, 0, 0]]),
                            np.eye(3) * 1e-4, t_now=0.0)
        assert rep.appended == 2
        assert len(m) == 2

    def test_min_spacing_rejects_close_point(self):
        m = fresh_map(min_spacing=0.1)
        m.insert_scan(np.array([[0.0, 0, 0]]), np.eye(3) * 1e-4, 0.0)
        rep = m.insert_scan(np.array([[0.05, 0, 0]]), np.eye(3) * 1e-4, 0.1)
        assert rep.appended == 0
        assert rep.rejected_spacing == 1

    def test_min_spacing_across_voxel_boundary(self):
        # points straddling a boundary are still checked against neighbors
        m = fresh_map(voxel_size=0.2, min_spacing=0.1)
        m.insert_scan(np.array([[0.19, 0, 0]]), np.eye(3) * 1e-4, 0.0)
        rep = m.insert_scan(np.array([[0.21, 0, 0]]), np.eye(3) * 1e-4, 0.1)
        assert rep.rejected_spacing == 1

    def test_spacing_brute_force_agreement(self, rng):
        m = fresh_map(voxel_size=0.3, min_spacing=0.12)
        accepted = []
        pts = rng.uniform(-1, 1, size=(400, 3))
        for p in pts:
            rep = m.insert_scan(p[None], np.eye(3) * 1e-4, 0.0)
            if accepted:
                d = np.linalg.norm(np.array(accepted) - p, axis=1).min()
            else:
                d = np.inf
            if d >= m.min_spacing:
                assert rep.appended == 1
                accepted.append(p)
            else:
                assert rep.appended == 0
        assert len(m) == len(accepted)

    def test_rejects_non_finite(self):
        m = fresh_map()
        rep = m.insert_scan(np.array([[np.nan, 0, 0]]), np.eye(3) * 1e-4, 0.0)
        assert rep.rejected_invalid == 1
        assert len(m) == 0

    def test_growth_preserves_data(self, rng):
        m = fresh_map(min_spacing=0.0)
        pts = rng.uniform(-20, 20, size=(3000, 3))
        m.insert_scan(pts, np.eye(3) * 1e-4, 0.0)
        assert len(m) == 3000
        assert np.array_equal(m.positions[:3000], pts)


class TestActivation:
    def test_window_boundary(self):
        m = fresh_map(activation_window=1.0)
        m.insert_scan(np.array([[0.0, 0, 0]]), np.eye(3) * 1e-4, t_now=0.0)
        m.insert_scan(np.array([[5.0, 0, 0]]), np.eye(3) * 1e-4, t_now=1.0)
        m.set_activation(t_now=1.5)   # first voxel 1.5 s old: inactive
        assert list(m.activated_point_ids()) == [1]
        m.set_activation(t_now=1.0)   # exactly at the window edge: active
        assert list(m.activated_point_ids()) == [0, 1]

    def test_reappend_reactivates(self):
        m = fresh_map(activation_window=0.5, min_spacing=0.0)
        m.insert_scan(np.array([[0.0, 0, 0]]), np.eye(3) * 1e-4, 0.0)
        m.set_activation(2.0)
        assert len(m.activated_point_ids()) == 0
        m.insert_scan(np.array([[0.01, 0, 0]]), np.eye(3) * 1e-4, 2.0)
        assert set(m.activated_point_ids()) == {0, 1}

    def test_linear_scan_oracle(self, rng):
        m = fresh_map(activation_window=1.0, min_spacing=0.0, voxel_size=0.5)
        pts = rng.uniform(-3, 3, size=(200, 3))
        times = rng.uniform(0.0, 4.0, size=200)
        for p, t in zip(pts[np.argsort(times)], np.sort(times)):
            m.insert_scan(p[None], np.eye(3) * 1e-4, t)
        t_now = 4.0
        m.set_activation(t_now)
        # oracle: a point is active iff its voxel's newest append is recent
        last = {}
        for i in range(len(m)):
            key = m.voxel_index(m.positions[i])
            last[key] = max(last.get(key, -np.inf), m.t_created[i])
        expect = [i for i in range(len(m))
                  if t_now - last[m.voxel_index(m.positions[i])] <= 1.0]
        assert list(m.activated_point_ids()) == sorted(expect)


class TestKnn:
    def test_matches_brute_force(self, rng):
        m = fresh_map(voxel_size=0.25, min_spacing=0.0, max_shells=3)
        pts = rng.uniform(-1.0, 1.0, size=(500, 3))
        m.insert_scan(pts, np.eye(3) * 1e-4, 0.0)
        for _ in range(50):
            q = rng.uniform(-1.0, 1.0, size=3)
            got = m.knn(q, 5)
            want = brute_force_knn(pts, q, 5)
            d_got = np.linalg.norm(pts[got] - q, axis=1)
            d_want = np.linalg.norm(pts[want] - q, axis=1)
            assert np.allclose(d_got, d_want, atol=1e-12)

    def test_insufficient_points(self):
        m = fresh_map()
        m.insert_scan(np.array([[0.0, 0, 0]]), np.eye(3) * 1e-4, 0.0)
        assert len(m.knn(np.zeros(3), 5)) == 0

    def test_far_query_within_shells(self):
        m = fresh_map(voxel_size=0.5, min_spacing=0.0, max_shells=3)
        pts = np.array([[1.0, 0, 0], [1.1, 0, 0], [1.2, 0, 0]])
        m.insert_scan(pts, np.eye(3) * 1e-4, 0.0)
        ids = m.knn(np.zeros(3), 3)
        assert set(ids) == {0, 1, 2}


class TestPlaneFit:
    def test_recovers_plane(self, rng):
        m = fresh_map(voxel_size=0.3, min_spacing=0.0)
        n_true = np.array([1.0, 2.0, -1.0])
        n_true /= np.linalg.norm(n_true)
        d_true = 0.7
        basis = np.linalg.svd(n_true[None])[2][1:]
        g = np.linspace(-0.5, 0.5, 6)
        uv = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
        pts = uv @ basis - d_true * n_true
        m.insert_scan(pts, np.eye(3) * 1e-4, 0.0)
        ids, n, d, valid = m.plane_neighbors(pts[0], k=5)
        assert valid
        sign = np.sign(n @ n_true)
        assert np.allclose(sign * n, n_true, atol=1e-6)
        assert np.isclose(sign * d, d_true, atol=1e-6)
        assert np.allclose(pts[ids] @ n + d, 0.0, atol=1e-9)

    def test_non_planar_invalid(self, rng):
        m = fresh_map(voxel_size=0.5, min_spacing=0.0,
                      plane_fit_threshold=0.02)
        pts = rng.uniform(-0.3, 0.3, size=(20, 3))
        m.insert_scan(pts, np.eye(3) * 1e-4, 0.0)
        _, _, _, valid = m.plane_neighbors(np.zeros(3), k=5)
        assert not valid

    def test_collinear_points_invalid(self):
        m = fresh_map(voxel_size=0.5, min_spacing=0.0)
        pts = np.linspace(0.0, 1.0, 10)[:, None] * np.array([1.0, 0.2, 0.0])
        m.insert_scan(pts, np.eye(3) * 1e-4, 0.0)
        _, _, _, valid = m.plane_neighbors(pts[0], k=5)
        assert not valid

    def test_too_few_points_invalid(self):
        m = fresh_map()
        m.insert_scan(np.array([[0.0, 0, 0], [0.1, 0, 0]]),
                      np.eye(3) * 1e-4, 0.0)
        _, _, _, valid = m.plane_neighbors(np.zeros(3), k=5)
        assert not valid


class TestInterpolation:
    def _frame(self):
        img = np.zeros((4, 4, 3))
        img[0, 0] = [1.0, 0.0, 0.0]
        img[0, 1] = [0.0, 1.0, 0.0]
        img[1, 0] = [0.0, 0.0, 1.0]
        img[1, 1] = [1.0, 1.0, 1.0]
        return CameraFrame(t=0.0, image=img)

    def test_exact_at_pixel_centers(self):
        f = self._frame()
        c, _ = interpolate_color(f, np.array([0.0, 0.0]))
        assert np.allclose(c, [1.0, 0.0, 0.0])

    def test_hand_weights(self):
        # x=0.25, y=0: 0.75*img[0,0] + 0.25*img[0,1]
        f = self._frame()
        c, cov = interpolate_color(f, np.array([0.25, 0.0]), sigma_pix=0.03)
        assert np.allclose(c, [0.75, 0.25, 0.0], atol=1e-12)
        assert np.allclose(cov, np.eye(3) * 0.03**2)

    def test_out_of_bounds_raises(self):
        with pytest.raises(ValueError):
            interpolate_color(self._frame(), np.array([5.0, 0.0]))

    def test_gradient_matches_finite_difference(self, rng):
        img = rng.uniform(0, 1, size=(8, 8, 3))
        f = CameraFrame(t=0.0, image=img)
        for _ in range(20):
            px = rng.uniform(0.55, 6.45, size=2)
            # keep the probe inside one interpolation cell
            if abs(px[0] - round(px[0])) < 0.1 or abs(px[1] - round(px[1])) < 0.1:
                continue
            g = interpolate_color_gradient(f, px)
            h = 1e-6
            for axis in range(2):
                e = np.zeros(2)
                e[axis] = h
                cp, _ = interpolate_color(f, px + e)
                cm, _ = interpolate_color(f, px - e)
                assert np.allclose((cp - cm) / (2 * h), g[:, axis], atol=1e-6)


class TestRendering:
    def _looking_down_state(self):
        # camera frame equal to body frame, both aligned with world: points
        # in front of the camera have z > 0
        return FullState(intrinsics=np.array([50.0, 50.0, 32.0, 24.0]))

    def test_first_render_takes_image_color(self):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[0.0, 0.0, 2.0]]), np.eye(3) * 1e-4, 0.0)
        img = np.full((48, 64, 3), 0.6)
        f = CameraFrame(t=0.1, image=img)
        st = self._looking_down_state()
        out = m.render_point_colors(f, st, sigma_color=0.05, t_now=0.1)
        assert out["rendered"] == 1
        # prior covariance is the huge uncolored sentinel: posterior ~ image
        assert np.allclose(m.colors[0], 0.6, atol=1e-3)
        assert m.cov_c[0, 0, 0] < 1e-2

    def test_fusion_midpoint_equal_covariances(self):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[0.0, 0.0, 2.0]]), np.eye(3) * 1e-4, 0.0)
        m.colors[0] = np.array([0.2, 0.2, 0.2])
        m.cov_c[0] = np.eye(3) * 0.03**2
        m.t_rendered[0] = 0.1   # dt = 0 at render time: no inflation
        img = np.full((48, 64, 3), 0.4)
        f = CameraFrame(t=0.1, image=img)
        st = self._looking_down_state()
        m.render_point_colors(f, st, sigma_color=0.0, t_now=0.1,
                              sigma_pix=0.03)
        assert np.allclose(m.colors[0], 0.3, atol=1e-12)
        assert np.allclose(m.cov_c[0], np.eye(3) * 0.5 * 0.03**2, atol=1e-15)

    def test_random_walk_inflation(self):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[0.0, 0.0, 2.0]]), np.eye(3) * 1e-4, 0.0)
        m.colors[0] = np.array([0.2, 0.2, 0.2])
        base = 0.03**2
        m.cov_c[0] = np.eye(3) * base
        m.t_rendered[0] = 0.0
        sigma_c, dt = 0.05, 2.0
        img = np.full((48, 64, 3), 0.4)
        f = CameraFrame(t=dt, image=img)
        m.render_point_colors(f, self._looking_down_state(), sigma_color=sigma_c,
                              t_now=dt, sigma_pix=0.03)
        prior = base + sigma_c**2 * dt
        expect_cov = 1.0 / (1.0 / prior + 1.0 / base)
        expect_col = expect_cov * (0.2 / prior + 0.4 / base)
        assert np.allclose(m.cov_c[0], np.eye(3) * expect_cov, atol=1e-15)
        assert np.allclose(m.colors[0], expect_col, atol=1e-12)

    def test_behind_camera_skipped(self):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[0.0, 0.0, -2.0]]), np.eye(3) * 1e-4, 0.0)
        img = np.full((48, 64, 3), 0.6)
        f = CameraFrame(t=0.1, image=img)
        out = m.render_point_colors(f, self._looking_down_state(), 0.05, 0.1)
        assert out["rendered"] == 0
        assert m.cov_c[0, 0, 0] == UNCOLORED_COV


class TestTrackedPoints:
    def _state(self):
        return FullState(intrinsics=np.array([50.0, 50.0, 100.0, 100.0]))

    def test_adds_isolated_points_only(self):
        m = fresh_map(min_spacing=0.0)
        # two points projecting 25 px apart, one far away
        m.insert_scan(np.array([[0.0, 0.0, 2.0],
                                [1.0, 0.0, 2.0],
                                [3.0, 0.0, 2.0]]), np.eye(3) * 1e-4, 0.0)
        kept = m.update_tracked_points({}, self._state(), (201, 201),
                                       exclusion_radius=50.0)
        # projections: x = 100, 125, 175; point 0 wins, point 1 blocked,
        # point 2 is 50 px from point 1 but 75 from point 0: added
        assert set(kept) == {0, 2}

    def test_existing_tracked_point_blocks(self):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[0.0, 0.0, 2.0], [1.0, 0.0, 2.0]]),
                      np.eye(3) * 1e-4, 0.0)
        tracked = {1: TrackedPoint(1, [125.0, 100.0], [125.0, 100.0])}
        kept = m.update_tracked_points(tracked, self._state(), (201, 201),
                                       exclusion_radius=50.0)
        assert 1 in kept
        assert 0 not in kept   # 25 px from the kept track

    def test_residual_gating_removes(self):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[0.0, 0.0, 2.0]]), np.eye(3) * 1e-4, 0.0)
        tracked = {0: TrackedPoint(0, [100.0, 100.0], [100.0, 100.0])}
        kept = m.update_tracked_points(tracked, self._state(), (201, 201),
                                       pnp_residuals={0: 10.0}, tau_pnp=4.0,
                                       exclusion_radius=0.0)
        # removed for residual, then re-added as a fresh candidate
        assert kept[0].px_prev is not tracked[0].px_curr
        assert np.allclose(kept[0].px_curr, [100.0, 100.0])

    def test_out_of_view_removed(self):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[0.0, 0.0, -2.0]]), np.eye(3) * 1e-4, 0.0)
        tracked = {0: TrackedPoint(0, [100.0, 100.0], [100.0, 100.0])}
        kept = m.update_tracked_points(tracked, self._state(), (201, 201))
        assert kept == {}


class TestExport:
    def test_ply_roundtrip(self, tmp_path):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 0.25]]),
                      np.eye(3) * 1e-4, 0.0)
        m.colors[0] = [1.0, 0.5, 0.0]
        path = tmp_path / "map.ply"
        m.export_ply(path)
        raw = path.read_bytes()
        header, _, body = raw.partition(b"end_header\n")
        assert b"element vertex 2" in header
        assert len(body) == 2 * (12 + 3)
        x, y, z = np.frombuffer(body[:12], dtype="<f4")
        assert (x, y, z) == (1.0, 2.0, 3.0)
        r, g, b = body[12:15]
        assert (r, g, b) == (255, 128, 0)

    def test_pcd_roundtrip(self, tmp_path):
        m = fresh_map(min_spacing=0.0)
        m.insert_scan(np.array([[1.0, 2.0, 3.0]]), np.eye(3) * 1e-4, 0.0)
        m.colors[0] = [1.0, 0.0, 1.0]
        path = tmp_path / "map.pcd"
        m.export_pcd(path)
        raw = path.read_bytes()
        header, _, body = raw.partition(b"DATA binary\n")
        assert b"POINTS 1" in header
        rec = np.frombuffer(body, dtype="<f4")
        assert np.allclose(rec[:3], [1.0, 2.0, 3.0])
        packed = rec[3:].view("<u4")[0]
        assert (packed >> 16) & 0xFF == 255
        assert (packed >> 8) & 0xFF == 0
        assert packed & 0xFF == 255
