"""Rotation helpers on SO(3).

Quaternions are stored as ``(x, y, z, w)`` everywhere, matching the on-disk
ground-truth layout. Canonical quaternions have ``w >= 0``.
"""

from __future__ import annotations

import numpy as np


def hat(v):
    """Skew-symmetric matrix such that ``hat(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S):
    return np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]]) / 2.0


def exp(w):
    """Rodrigues formula: rotation vector -> rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = hat(w)
    if theta < 1e-8:
        # second-order Taylor keeps orthonormality to ~1e-16 here
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * K @ K
    )


def angle(R):
    """Geodesic angle of a rotation, in [0, pi].

    Uses atan2 of the sine and cosine parts; this is the arccos of
    ``(trace - 1) / 2`` without its loss of precision near 0 and pi.
    """
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    s = np.linalg.norm(vee(R))
    return float(np.arctan2(s, c))


def log(R):
    """Rotation matrix -> rotation vector (inverse of :func:`exp`)."""
    theta = angle(R)
    if theta < 1e-8:
        return vee(R)
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(B[k, k])
        axis /= np.linalg.norm(axis)
        w = axis * theta
        # fix the sign so that exp(w) reproduces R
        if np.linalg.norm(exp(w) - R) > np.linalg.norm(exp(-w) - R):
            w = -w
        return w
    return theta / np.sin(theta) * vee(R)


def geodesic(R1, R2):
    """Angle of ``R1^T R2``; symmetric in its arguments."""
    return angle(np.asarray(R1).T @ np.asarray(R2))


def orthonormalize(R):
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (
        np.linalg.norm(R.T @ R - np.eye(3)) < tol
        and abs(np.linalg.det(R) - 1.0) < tol
    )


def quat_to_matrix(q):
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Rotation matrix -> canonical unit quaternion ``(x, y, z, w)``, w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    # Shepperd's method: branch on the largest diagonal term for stability
    if tr > max(R[0, 0], R[1, 1], R[2, 2]):
        s = 2.0 * np.sqrt(1.0 + tr)
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, s / 4.0]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array(
            [s / 4.0, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array(
            [(R[0, 1] + R[1, 0]) / s, s / 4.0, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
        )
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array(
            [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, s / 4.0, (R[1, 0] - R[0, 1]) / s]
        )
    return canonical_quat(q)


def canonical_quat(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    return -q if q[3] < 0 else q


def slerp(R0, R1, s):
    """Geodesic interpolation: ``s = 0`` gives R0 exactly, ``s = 1`` gives R1."""
    if s == 0.0:
        return np.array(R0, dtype=float)
    if s == 1.0:
        return np.array(R1, dtype=float)
    return R0 @ exp(s * log(R0.T @ R1))


def from_euler(roll, pitch, yaw):
    """Intrinsic Z-Y-X composition ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def to_euler(R, gimbal_tol=1e-9):
    """Rotation matrix -> ``(roll, pitch, yaw)`` for the intrinsic Z-Y-X order.

    At gimbal lock (``|pitch| = pi/2``) roll is set to 0 and the remaining
    rotation about the shared axis is folded into yaw.
    """
    R = np.asarray(R, dtype=float)
    sp = -R[2, 0]
    if abs(sp) >= 1.0 - gimbal_tol:
        pitch = np.copysign(np.pi / 2, sp)
        yaw = np.arctan2(-R[0, 1], R[1, 1])
        return 0.0, float(pitch), float(yaw)
    roll = np.arctan2(R[2, 1], R[2, 2])
    pitch = np.arctan2(sp, np.hypot(R[0, 0], R[1, 0]))
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return float(roll), float(pitch), float(yaw)
