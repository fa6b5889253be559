"""
Quaternion and SO(3) helpers.

Quaternions are numpy arrays in scalar-first order [w, x, y, z] (Hamilton
convention) and q_wb maps body-frame vectors into the world frame. Attitude
errors are right perturbations: q_true = q ⊗ Exp(δθ).

scipy's Rotation stores quaternions scalar-last, so conversions go through
to_scipy / from_scipy.
"""

from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

_SMALL_ANGLE = 1e-8

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v×]."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Stacked cross-product matrices for an (N, 3) array."""
    out = np.zeros((v.shape[0], 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product p ⊗ q."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_left(q: np.ndarray) -> np.ndarray:
    """Matrix L(q) such that q ⊗ p = L(q) p."""
    w, v = q[0], q[1:]
    out = np.empty((4, 4))
    out[0, 0] = w
    out[0, 1:] = -v
    out[1:, 0] = v
    out[1:, 1:] = w * np.eye(3) + skew(v)
    return out


def quat_right(q: np.ndarray) -> np.ndarray:
    """Matrix R(q) such that p ⊗ q = R(q) p."""
    w, v = q[0], q[1:]
    out = np.empty((4, 4))
    out[0, 0] = w
    out[0, 1:] = -v
    out[1:, 0] = v
    out[1:, 1:] = w * np.eye(3) - skew(v)
    return out


def quat_exp(phi: np.ndarray) -> np.ndarray:
    """Unit quaternion of the rotation vector phi."""
    theta = float(np.linalg.norm(phi))
    if theta < _SMALL_ANGLE:
        return quat_normalize(
            np.concatenate(([1.0 - theta * theta / 8.0], 0.5 * phi))
        )
    half = 0.5 * theta
    return np.concatenate(([np.cos(half)], np.sin(half) / theta * phi))


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion (shortest arc)."""
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        return 2.0 * v / q[0]
    return 2.0 * np.arctan2(n, q[0]) / n * v


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_rotmat(q) @ v


def to_scipy(q: np.ndarray) -> Rotation:
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


def from_scipy(rot: Rotation) -> np.ndarray:
    x, y, z, w = rot.as_quat()
    return quat_normalize(np.array([w, x, y, z]))


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rotation matrix of the rotation vector phi (Rodrigues)."""
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * K @ K


def so3_log(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian: Exp(phi + d) ≈ Exp(phi) Exp(Jr(phi) d)."""
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        - (1.0 - np.cos(theta)) / t2 * K
        + (theta - np.sin(theta)) / (t2 * theta) * K @ K
    )


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    coeff = 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (
        2.0 * theta * np.sin(theta)
    )
    return np.eye(3) + 0.5 * K + coeff * K @ K


def euler_to_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-world quaternion from ZYX Euler angles (R = Rz(yaw) Ry(pitch) Rx(roll))."""
    return from_scipy(Rotation.from_euler("ZYX", [yaw, pitch, roll]))


def quat_to_euler(q: np.ndarray) -> Tuple[float, float, float]:
    """(roll, pitch, yaw) of a body-to-world quaternion."""
    yaw, pitch, roll = to_scipy(q).as_euler("ZYX")
    return float(roll), float(pitch), float(yaw)


def rotation_angle(R: np.ndarray) -> float:
    """Angle of a rotation matrix in radians."""
    return float(Rotation.from_matrix(R).magnitude())
