"""SO(3) primitives and the 29-DOF composite estimator state.

The state bundles IMU pose/velocity/biases, gravity, camera extrinsics,
the camera-IMU time offset and the pinhole intrinsics.  All tangent-space
vectors follow the block layout in ``BLOCKS``; rotation blocks use
rotation vectors (radians) composed on the right: R boxplus d = R @ Exp(d).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# A tangent-space increment ("error state") is a plain 29-vector.
ErrorState = np.ndarray

# Tangent-space layout: name -> (start, size). Total dimension 29.
BLOCKS = {
    "rot": (0, 3),        # attitude of IMU in global frame
    "pos": (3, 3),        # IMU position, global frame
    "vel": (6, 3),        # velocity, global frame
    "bg": (9, 3),         # gyro bias
    "ba": (12, 3),        # accelerometer bias
    "grav": (15, 3),      # gravity vector, global frame
    "rot_ic": (18, 3),    # camera-to-IMU rotation
    "pos_ic": (21, 3),    # camera-to-IMU translation
    "t_ic": (24, 1),      # camera-IMU time offset
    "intr": (25, 4),      # fx, fy, cx, cy
}
STATE_DIM = 29

_ROT_BLOCKS = ("rot", "rot_ic")


def block_slice(name):
    start, size = BLOCKS[name]
    return slice(start, start + size)


def skew(v):
    """Cross-product matrix [v]x such that skew(v) @ u = v x u."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def exp_so3(omega):
    """Rodrigues map from a rotation vector to a rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < 1e-7:
        # second-order series, accurate to O(theta^4)
        return np.eye(3) + W + 0.5 * (W @ W)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * W
        + ((1.0 - np.cos(theta)) / theta**2) * (W @ W)
    )


def log_so3(R):
    """Principal logarithm of a rotation matrix, ||result|| <= pi.

    Near the antipodal case (angle pi) the axis sign is fixed so that its
    largest-magnitude component is positive.
    """
    R = np.asarray(R, dtype=float)
    check_rotation(R)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-7:
        w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return w
    if np.pi - theta < 1e-2:
        # near pi both arccos and the skew part are ill-conditioned; use
        # the symmetric part instead: (R + R^T)/2 - cos(theta) I
        # equals (1 - cos(theta)) aa^T, which stays well-scaled here
        M = ((R + R.T) / 2.0 - cos_theta * np.eye(3)) / (1.0 - cos_theta)
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / np.sqrt(M[k, k])
        axis /= np.linalg.norm(axis)
        if axis[int(np.argmax(np.abs(axis)))] < 0.0:
            axis = -axis
        # theta and the true axis sign from the skew part:
        # [R21-R12, R02-R20, R10-R01] = 2 sin(theta) * axis
        w_raw = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0],
                          R[1, 0] - R[0, 1]])
        s = 0.5 * float(axis @ w_raw)
        if s < 0.0:
            axis = -axis
        theta = np.pi - np.arcsin(min(abs(s), 1.0))
        return theta * axis
    w = (
        theta
        / (2.0 * np.sin(theta))
        * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    )
    return w


def check_rotation(R, tol=1e-9):
    """Raise ValueError unless R is orthonormal with determinant +1."""
    R = np.asarray(R)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > max(tol, 1e-6):
        raise ValueError(f"matrix is not orthonormal (|R^T R - I| = {err:.2e})")
    if abs(np.linalg.det(R) - 1.0) > max(tol, 1e-6):
        raise ValueError("matrix determinant is not +1")
    return R


def right_jacobian(phi):
    """Right Jacobian of SO(3) at rotation vector phi."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    W = skew(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * W + (1.0 / 6.0) * (W @ W)
    return (
        np.eye(3)
        - ((1.0 - np.cos(theta)) / theta**2) * W
        + ((theta - np.sin(theta)) / theta**3) * (W @ W)
    )


def right_jacobian_inv(phi):
    """Inverse of the right Jacobian of SO(3) at phi (needs ||phi|| < 2*pi)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    W = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * W + (1.0 / 12.0) * (W @ W)
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coef * (W @ W)


def quat_from_rot(R):
    """Unit quaternion (x, y, z, w) from a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k]) * 2.0
        q = np.empty(3)
        q[i] = 0.25 * s
        q[j] = (R[j, i] + R[i, j]) / s
        q[k] = (R[k, i] + R[i, k]) / s
        w = (R[k, j] - R[j, k]) / s
        x, y, z = q
    q = np.array([x, y, z, w])
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rot_from_quat(q):
    """Rotation matrix from a unit quaternion (x, y, z, w)."""
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass
class FullState:
    """The composite 29-DOF state shared by the LiDAR and visual updates."""

    R_GI: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_GI: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_G: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g_G: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    R_IC: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_IC: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_IC: float = 0.0
    intrinsics: np.ndarray = field(
        default_factory=lambda: np.array([500.0, 500.0, 320.0, 240.0])
    )

    def copy(self):
        return FullState(
            R_GI=self.R_GI.copy(),
            p_GI=self.p_GI.copy(),
            v_G=self.v_G.copy(),
            b_g=self.b_g.copy(),
            b_a=self.b_a.copy(),
            g_G=self.g_G.copy(),
            R_IC=self.R_IC.copy(),
            p_IC=self.p_IC.copy(),
            t_IC=float(self.t_IC),
            intrinsics=self.intrinsics.copy(),
        )

    def validate(self):
        check_rotation(self.R_GI)
        check_rotation(self.R_IC)
        fx, fy = self.intrinsics[0], self.intrinsics[1]
        if fx <= 0.0 or fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        return self


def boxplus(x: FullState, delta) -> FullState:
    """Retract a 29-vector tangent increment onto the state."""
    d = np.asarray(delta, dtype=float)
    if d.shape != (STATE_DIM,):
        raise ValueError(f"tangent increment must have shape ({STATE_DIM},)")
    if not np.all(np.isfinite(d)):
        raise ValueError("tangent increment has non-finite entries")
    return FullState(
        R_GI=x.R_GI @ exp_so3(d[block_slice("rot")]),
        p_GI=x.p_GI + d[block_slice("pos")],
        v_G=x.v_G + d[block_slice("vel")],
        b_g=x.b_g + d[block_slice("bg")],
        b_a=x.b_a + d[block_slice("ba")],
        g_G=x.g_G + d[block_slice("grav")],
        R_IC=x.R_IC @ exp_so3(d[block_slice("rot_ic")]),
        p_IC=x.p_IC + d[block_slice("pos_ic")],
        t_IC=x.t_IC + d[BLOCKS["t_ic"][0]],
        intrinsics=x.intrinsics + d[block_slice("intr")],
    )


def boxminus(y: FullState, x: FullState):
    """Tangent vector delta with x boxplus delta = y (rotations via Log)."""
    d = np.zeros(STATE_DIM)
    d[block_slice("rot")] = log_so3(x.R_GI.T @ y.R_GI)
    d[block_slice("pos")] = y.p_GI - x.p_GI
    d[block_slice("vel")] = y.v_G - x.v_G
    d[block_slice("bg")] = y.b_g - x.b_g
    d[block_slice("ba")] = y.b_a - x.b_a
    d[block_slice("grav")] = y.g_G - x.g_G
    d[block_slice("rot_ic")] = log_so3(x.R_IC.T @ y.R_IC)
    d[block_slice("pos_ic")] = y.p_IC - x.p_IC
    d[BLOCKS["t_ic"][0]] = y.t_IC - x.t_IC
    d[block_slice("intr")] = y.intrinsics - x.intrinsics
    return d


def tangent_projection(x_check: FullState, x_hat: FullState):
    """Jacobian of d -> (x_check boxplus d) boxminus x_hat at d = 0.

    Block diagonal: the inverse right Jacobian at each rotation residual,
    identity on every additive block.
    """
    H = np.eye(STATE_DIM)
    for name in _ROT_BLOCKS:
        sl = block_slice(name)
        if name == "rot":
            phi = log_so3(x_hat.R_GI.T @ x_check.R_GI)
        else:
            phi = log_so3(x_hat.R_IC.T @ x_check.R_IC)
        H[sl, sl] = right_jacobian_inv(phi)
    return H


@dataclass
class StateWithCov:
    """A state estimate with its 29x29 tangent-space covariance."""

    x: FullState
    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"covariance must be {STATE_DIM}x{STATE_DIM}")

    def copy(self):
        return StateWithCov(self.x.copy(), self.cov.copy())

    def symmetrized(self):
        return replace(self, cov=0.5 * (self.cov + self.cov.T))
