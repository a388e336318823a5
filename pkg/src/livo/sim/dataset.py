"""On-disk sequence format: write from the simulator, read for replay.

Layout of a sequence directory:

    imu.csv            t, wx, wy, wz, ax, ay, az            (plain text)
    lidar/NNNNNN.bin   little-endian float32 records t,x,y,z (sensor frame)
    lidar.csv          index, t_start, t_end
    camera/NNNNNN.ppm  binary P6, maxval 255
    camera.csv         index, t
    groundtruth.csv    t, px, py, pz, qx, qy, qz, qw         (IMU pose)
    calib.json         gravity, rates, image size, noise, true + initial calib
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..imu import ImuSample, NoiseConfig
from ..manifold import quat_from_rot, rot_from_quat
from .sensors import Calibration, CameraFrame, LidarScan


def _calib_to_dict(c: Calibration):
    return {
        "R_IC": c.R_IC.reshape(-1).tolist(),
        "p_IC": c.p_IC.tolist(),
        "t_IC": float(c.t_IC),
        "intrinsics": c.intrinsics.tolist(),
        "width": int(c.width),
        "height": int(c.height),
    }


def _calib_from_dict(d) -> Calibration:
    return Calibration(
        R_IC=np.array(d["R_IC"], dtype=float).reshape(3, 3),
        p_IC=np.array(d["p_IC"], dtype=float),
        t_IC=float(d["t_IC"]),
        intrinsics=np.array(d["intrinsics"], dtype=float),
        width=int(d["width"]),
        height=int(d["height"]),
    )


def write_ppm(path, image):
    """Binary P6 image from float RGB in [0, 1]."""
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(float) / float(maxval)


def write_scan_bin(path, scan: LidarScan):
    rec = np.empty((len(scan), 4), dtype="<f4")
    rec[:, 0] = scan.times
    rec[:, 1:] = scan.points
    rec.tofile(path)


def read_scan_bin(path, t_start, t_end):
    rec = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    # float32 storage can round a boundary timestamp just outside the scan
    # interval; clamp to keep the invariant t_start <= t <= t_end
    times = np.clip(rec[:, 0].astype(float), t_start, t_end)
    return LidarScan(times=times, points=rec[:, 1:].astype(float),
                     t_start=t_start, t_end=t_end)


@dataclass
class SequenceData:
    """A fully loaded sequence directory."""

    imu: List[ImuSample]
    scans: List[LidarScan]
    frames: List[CameraFrame]
    gt_times: np.ndarray
    gt_rot: np.ndarray        # (N,3,3)
    gt_pos: np.ndarray        # (N,3)
    calib_true: Calibration
    calib_init: Calibration
    gravity: np.ndarray
    meta: dict = field(default_factory=dict)

    def gt_pose_at(self, t, tol=0.01):
        """Nearest ground-truth pose within tol seconds."""
        i = int(np.argmin(np.abs(self.gt_times - t)))
        if abs(self.gt_times[i] - t) > tol:
            raise ValueError(f"no ground-truth pose within {tol}s of t={t}")
        return self.gt_rot[i], self.gt_pos[i]


def write_sequence(out_dir, imu, scans, frames, gt_times, gt_rot, gt_pos,
                   calib_true: Calibration, calib_init: Calibration,
                   gravity, noise: Optional[NoiseConfig] = None, meta=None):
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "lidar"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "camera"), exist_ok=True)

    with open(os.path.join(out_dir, "imu.csv"), "w") as f:
        f.write("t,wx,wy,wz,ax,ay,az\n")
        for s in imu:
            f.write(f"{s.t:.9f},{s.gyro[0]:.12g},{s.gyro[1]:.12g},{s.gyro[2]:.12g},"
                    f"{s.accel[0]:.12g},{s.accel[1]:.12g},{s.accel[2]:.12g}\n")

    with open(os.path.join(out_dir, "lidar.csv"), "w") as f:
        f.write("index,t_start,t_end\n")
        for i, sc in enumerate(scans):
            write_scan_bin(os.path.join(out_dir, "lidar", f"{i:06d}.bin"), sc)
            f.write(f"{i},{sc.t_start:.9f},{sc.t_end:.9f}\n")

    with open(os.path.join(out_dir, "camera.csv"), "w") as f:
        f.write("index,t\n")
        for i, fr in enumerate(frames):
            write_ppm(os.path.join(out_dir, "camera", f"{i:06d}.ppm"), fr.image)
            f.write(f"{i},{fr.t:.9f}\n")

    with open(os.path.join(out_dir, "groundtruth.csv"), "w") as f:
        f.write("t,px,py,pz,qx,qy,qz,qw\n")
        for t, R, p in zip(gt_times, gt_rot, gt_pos):
            q = quat_from_rot(R)
            f.write(f"{t:.9f},{p[0]:.12g},{p[1]:.12g},{p[2]:.12g},"
                    f"{q[0]:.15g},{q[1]:.15g},{q[2]:.15g},{q[3]:.15g}\n")

    calib = {
        "gravity": np.asarray(gravity, dtype=float).tolist(),
        "true": _calib_to_dict(calib_true),
        "initial": _calib_to_dict(calib_init),
        "meta": meta or {},
    }
    if noise is not None:
        calib["imu_noise"] = {k: float(v) for k, v in vars(noise).items()}
    with open(os.path.join(out_dir, "calib.json"), "w") as f:
        json.dump(calib, f, indent=2)


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"sequence is missing required file: {path}")
    return path


def read_sequence(seq_dir) -> SequenceData:
    imu_rows = np.loadtxt(_require(os.path.join(seq_dir, "imu.csv")),
                          delimiter=",", skiprows=1, ndmin=2)
    if np.any(np.diff(imu_rows[:, 0]) <= 0):
        raise ValueError("imu.csv timestamps are not strictly increasing")
    imu = [ImuSample(t=r[0], gyro=r[1:4].copy(), accel=r[4:7].copy())
           for r in imu_rows]

    scans = []
    lidar_csv = os.path.join(seq_dir, "lidar.csv")
    if os.path.exists(lidar_csv):
        rows = np.loadtxt(lidar_csv, delimiter=",", skiprows=1, ndmin=2)
        for r in rows:
            idx = int(r[0])
            scans.append(read_scan_bin(
                _require(os.path.join(seq_dir, "lidar", f"{idx:06d}.bin")),
                t_start=r[1], t_end=r[2]))

    frames = []
    cam_csv = os.path.join(seq_dir, "camera.csv")
    if os.path.exists(cam_csv):
        rows = np.loadtxt(cam_csv, delimiter=",", skiprows=1, ndmin=2)
        if rows.size:
            for r in rows:
                idx = int(r[0])
                img = read_ppm(_require(
                    os.path.join(seq_dir, "camera", f"{idx:06d}.ppm")))
                frames.append(CameraFrame(t=r[1], image=img))

    gt = np.loadtxt(_require(os.path.join(seq_dir, "groundtruth.csv")),
                    delimiter=",", skiprows=1, ndmin=2)
    gt_rot = np.stack([rot_from_quat(r[4:8]) for r in gt])

    with open(_require(os.path.join(seq_dir, "calib.json"))) as f:
        calib = json.load(f)
    return SequenceData(
        imu=imu, scans=scans, frames=frames,
        gt_times=gt[:, 0], gt_rot=gt_rot, gt_pos=gt[:, 1:4],
        calib_true=_calib_from_dict(calib["true"]),
        calib_init=_calib_from_dict(calib["initial"]),
        gravity=np.array(calib["gravity"], dtype=float),
        meta=calib.get("meta", {}),
    )
