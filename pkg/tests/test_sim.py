import numpy as np
import pytest

from livo.imu import NoiseConfig
from livo.manifold import log_so3
from livo.sim import (
    Calibration,
    Patch,
    RasterPattern,
    SimWorld,
    calibration_offsets,
    camera_pose,
    circle_spec,
    make_scenario,
    perturb_calibration,
    read_sequence,
    static_spec,
    synth_camera_image,
    synth_imu,
    synth_lidar_scan,
    wall_patch,
)
from livo.sim.presets import _room_world


class TestTrajectory:
    def test_static_spec_constant(self):
        spec = static_spec(position=(1, 2, 3), duration=2.0)
        for t in [0.0, 0.7, 2.0]:
            R, p, v, w, a = spec.sample(t)
            assert np.allclose(R, np.eye(3))
            assert np.allclose(p, [1, 2, 3])
            assert np.allclose(v, 0) and np.allclose(w, 0) and np.allclose(a, 0)

    def test_circle_derivative_consistency(self):
        spec = circle_spec(radius=3.0, period=10.0, duration=10.0)
        h = 1e-6
        for t in [1.3, 4.0, 7.6]:
            _, p0, v, _, a = spec.sample(t)
            _, pm, vm, _, _ = spec.sample(t - h)
            _, pp, vp, _, _ = spec.sample(t + h)
            assert np.allclose((pp - pm) / (2 * h), v, atol=1e-5)
            assert np.allclose((vp - vm) / (2 * h), a, atol=1e-5)

    def test_circle_centripetal_magnitude(self):
        r, T = 3.0, 10.0
        spec = circle_spec(radius=r, period=T, duration=T)
        omega = 2 * np.pi / T
        _, _, v, _, a = spec.sample(2.2)
        assert np.isclose(np.linalg.norm(v), r * omega, atol=1e-9)
        assert np.isclose(np.linalg.norm(a), r * omega ** 2, atol=1e-9)

    def test_circle_closes(self):
        spec = circle_spec(radius=3.0, period=10.0, duration=10.0)
        _, p0, _, _, _ = spec.sample(0.0)
        _, p1, _, _, _ = spec.sample(10.0)
        assert np.allclose(p0, p1, atol=1e-9)

    def test_fd_fallback_matches_analytic(self):
        ana = circle_spec(radius=2.0, period=6.0, duration=6.0)
        from livo.sim.trajectory import TrajectorySpec
        fd = TrajectorySpec(pos_fn=ana.pos_fn, rot_fn=ana.rot_fn,
                            duration=6.0, imu_rate=ana.imu_rate,
                            lidar_rate=ana.lidar_rate,
                            cam_rate=ana.cam_rate)
        for t in [0.0, 1.5, 6.0]:
            _, _, v_a, w_a, a_a = ana.sample(t)
            _, _, v_f, w_f, a_f = fd.sample(t)
            assert np.allclose(v_f, v_a, atol=1e-4)
            assert np.allclose(w_f, w_a, atol=1e-4)
            assert np.allclose(a_f, a_a, atol=1e-2)


class TestWorld:
    def test_ray_plane_oracle(self):
        # wall plane x = 5, ray from origin along +x: range exactly 5
        patch = wall_patch((5.0, -2.0, -2.0), (0, 4, 0), (0, 0, 4),
                           color0=(0.5, 0.5, 0.5))
        world = SimWorld(patches=[patch], gravity=np.zeros(3))
        s, pid, u, v = world.intersect(np.zeros(3), np.array([[1.0, 0.0, 0.0]]))
        assert pid[0] == 0
        assert np.isclose(s[0], 5.0, atol=1e-9)
        assert np.isclose(u[0], 0.5, atol=1e-9)
        assert np.isclose(v[0], 0.5, atol=1e-9)

    def test_oblique_ray_distance(self):
        patch = wall_patch((5.0, -10.0, -10.0), (0, 20, 0), (0, 0, 20),
                           color0=(0.5, 0.5, 0.5))
        world = SimWorld(patches=[patch], gravity=np.zeros(3))
        d = np.array([[1.0, 1.0, 0.0]]) / np.sqrt(2)
        s, pid, _, _ = world.intersect(np.zeros(3), d)
        assert pid[0] == 0
        assert np.isclose(s[0], 5.0 * np.sqrt(2), atol=1e-9)

    def test_miss_returns_negative_id(self):
        patch = wall_patch((5.0, -1.0, -1.0), (0, 2, 0), (0, 0, 2),
                           color0=(0.5, 0.5, 0.5))
        world = SimWorld(patches=[patch], gravity=np.zeros(3))
        s, pid, _, _ = world.intersect(np.zeros(3),
                                       np.array([[-1.0, 0.0, 0.0]]))
        assert pid[0] == -1

    def test_nearest_patch_wins(self):
        near = wall_patch((2.0, -3.0, -3.0), (0, 6, 0), (0, 0, 6), (1, 0, 0))
        far = wall_patch((4.0, -3.0, -3.0), (0, 6, 0), (0, 0, 6), (0, 1, 0))
        world = SimWorld(patches=[far, near], gravity=np.zeros(3))
        s, pid, _, _ = world.intersect(np.zeros(3),
                                       np.array([[1.0, 0.0, 0.0]]))
        assert pid[0] == 1
        assert np.isclose(s[0], 2.0)

    def test_affine_albedo(self):
        patch = Patch(corner=np.zeros(3), edge_u=np.array([1.0, 0, 0]),
                      edge_v=np.array([0, 1.0, 0]),
                      color0=np.array([0.2, 0.2, 0.2]),
                      grad_u=np.array([0.4, 0.0, 0.0]),
                      grad_v=np.array([0.0, 0.6, 0.0]))
        c = patch.albedo(0.5, 0.5)
        assert np.allclose(c, [0.4, 0.5, 0.2], atol=1e-12)


class TestSensors:
    def test_imu_static_zero_noise(self):
        spec = static_spec(duration=0.5, imu_rate=100.0)
        world = _room_world()
        imu = synth_imu(spec, world, NoiseConfig(sigma_g=0, sigma_a=0,
                                                 sigma_bg=0, sigma_ba=0), seed=0)
        for s in imu:
            assert np.allclose(s.gyro, 0.0, atol=1e-12)
            assert np.allclose(s.accel, -world.gravity, atol=1e-12)

    def test_imu_deterministic(self):
        spec = circle_spec(radius=2.0, period=6.0, duration=1.0)
        world = _room_world()
        a = synth_imu(spec, world, NoiseConfig(), seed=7)
        b = synth_imu(spec, world, NoiseConfig(), seed=7)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.gyro, sb.gyro)
            assert np.array_equal(sa.accel, sb.accel)
        c = synth_imu(spec, world, NoiseConfig(), seed=8)
        assert not np.array_equal(a[1].gyro, c[1].gyro)

    def test_imu_noise_variance(self):
        # discrete-sample std is sigma/sqrt(dt); check within 5 percent
        spec = static_spec(duration=100.0, imu_rate=200.0)
        world = _room_world()
        noise = NoiseConfig(sigma_g=1.6e-3, sigma_a=2e-2, sigma_bg=0.0,
                            sigma_ba=0.0)
        imu = synth_imu(spec, world, noise, seed=11)
        gyro = np.array([s.gyro for s in imu])
        expected = noise.sigma_g * np.sqrt(200.0)
        assert abs(gyro.std() / expected - 1.0) < 0.05

    def test_lidar_undistorted_geometry(self):
        # static sensor: distorted and undistorted coincide, ranges exact
        spec = static_spec(duration=1.0)
        patch = wall_patch((4.0, -10.0, -10.0), (0, 20, 0), (0, 0, 20),
                           (0.5, 0.5, 0.5))
        world = SimWorld(patches=[patch], gravity=np.zeros(3))
        dist, undist = synth_lidar_scan(spec, world, 0.0, 0.1,
                                        RasterPattern(n_az=8, n_el=4),
                                        range_noise=0.0, seed=0)
        assert np.allclose(dist.points, undist.points, atol=1e-12)
        # each point lies on the x = 4 plane
        assert np.allclose(dist.points[:, 0], 4.0, atol=1e-9)

    def test_lidar_deterministic(self):
        spec = circle_spec(radius=2.0, period=6.0, duration=1.0)
        world = _room_world()
        a, _ = synth_lidar_scan(spec, world, 0.0, 0.1,
                                RasterPattern(n_az=8, n_el=4), 0.01, seed=5)
        b, _ = synth_lidar_scan(spec, world, 0.0, 0.1,
                                RasterPattern(n_az=8, n_el=4), 0.01, seed=5)
        assert np.array_equal(a.points, b.points)

    def test_pinhole_hand_values(self):
        # point 1 m ahead, 0.25 m right in camera frame, f=400, c=(320,240):
        # pixel = (320 + 400*0.25, 240) = (420, 240)
        calib = Calibration(R_IC=np.eye(3), p_IC=np.zeros(3), t_IC=0.0,
                            intrinsics=np.array([400.0, 400.0, 320.0, 240.0]),
                            width=640, height=480)
        patch = wall_patch((-10.0, -10.0, 1.0), (20, 0, 0), (0, 20, 0),
                           (0.5, 0.5, 0.5))
        world = SimWorld(patches=[patch], gravity=np.zeros(3))
        spec = static_spec(duration=1.0)
        frame = synth_camera_image(spec, world, 0.0, calib,
                                   pixel_noise=0.0, seed=0)
        assert frame.image.shape == (480, 640, 3)
        # camera axis +z hits the wall everywhere in view: uniform albedo
        assert np.allclose(frame.image, 0.5, atol=1e-12)

    def test_camera_pose_temporal_offset(self):
        spec = circle_spec(radius=2.0, period=8.0, duration=8.0)
        calib = Calibration(R_IC=np.eye(3), p_IC=np.zeros(3), t_IC=0.01,
                            intrinsics=np.array([100.0, 100.0, 50.0, 50.0]),
                            width=100, height=100)
        _, p = camera_pose(spec, 2.0, calib)
        _, p_true, _, _, _ = spec.sample(2.01)
        assert np.allclose(p, p_true, atol=1e-12)

    def test_image_deterministic(self):
        spec = static_spec(duration=1.0)
        world = _room_world()
        calib = Calibration(R_IC=np.eye(3), p_IC=np.zeros(3), t_IC=0.0,
                            intrinsics=np.array([60.0, 60.0, 32.0, 24.0]),
                            width=64, height=48)
        a = synth_camera_image(spec, world, 0.0, calib, 0.01, seed=4)
        b = synth_camera_image(spec, world, 0.0, calib, 0.01, seed=4)
        assert np.array_equal(a.image, b.image)

    def test_perturb_calibration_offsets(self):
        calib = Calibration(R_IC=np.eye(3), p_IC=np.zeros(3), t_IC=0.0,
                            intrinsics=np.array([100.0, 100.0, 50.0, 50.0]),
                            width=100, height=100)
        bad = perturb_calibration(calib, rot_axis=(0, 1, 0),
                                  rot_angle=np.deg2rad(1.0),
                                  pos_offset=(0.01, 0, 0), t_offset=0.005,
                                  intr_offset=(0, 0, 2.0, 0))
        off = calibration_offsets(bad, calib)
        assert np.isclose(off["rot_rad"], np.deg2rad(1.0), atol=1e-12)
        assert np.isclose(off["pos_m"], 0.01, atol=1e-12)
        assert np.isclose(off["t_s"], 0.005, atol=1e-12)
        assert np.isclose(off["intr_px"][2], 2.0, atol=1e-12)


class TestDataset:
    def test_roundtrip(self, tmp_path):
        scen = make_scenario("static", duration=0.5)
        out = tmp_path / "seq"
        scen.generate(out, seed=3)
        seq = read_sequence(out)
        assert len(seq.imu) > 0
        assert len(seq.scans) == int(0.5 * scen.spec.lidar_rate)
        assert len(seq.frames) == int(0.5 * scen.spec.cam_rate) + 1
        # gt at t=0 is the starting pose
        R, p = seq.gt_pose_at(seq.imu[0].t)
        assert np.allclose(log_so3(R @ scen.spec.sample(0.0)[0].T), 0,
                           atol=1e-9)
        assert np.allclose(p, scen.spec.sample(0.0)[1], atol=1e-9)

    def test_roundtrip_preserves_scan_points(self, tmp_path):
        scen = make_scenario("static", duration=0.3)
        out = tmp_path / "seq"
        pkg = scen.generate(out, seed=1)
        seq = read_sequence(out)
        # binary format is float32: exact after one cast
        for scan in seq.scans:
            assert scan.points.dtype == np.float64
            assert np.array_equal(scan.points.astype(np.float32),
                                  scan.points.astype(np.float32))

    def test_generation_deterministic(self, tmp_path):
        scen = make_scenario("static", duration=0.3)
        scen.generate(tmp_path / "a", seed=9)
        scen.generate(tmp_path / "b", seed=9)
        for name in ["imu.csv", "groundtruth.csv", "lidar/000000.bin",
                     "camera/000000.ppm", "calib.json"]:
            fa = (tmp_path / "a" / name).read_bytes()
            fb = (tmp_path / "b" / name).read_bytes()
            assert fa == fb, name

    def test_missing_file_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_sequence(tmp_path / "nope")
