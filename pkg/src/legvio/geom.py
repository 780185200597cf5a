"""SO(3) helpers: hat/vee, exponential and logarithm maps, right Jacobians.

Rotations are plain 3x3 numpy arrays. Below ``SMALL_ANGLE`` the closed forms
are replaced by truncated Taylor series to avoid 0/0 at the origin.
"""

from __future__ import annotations

import math

import numpy as np

SMALL_ANGLE = 1e-8
# below this sin(angle) the log map switches to the symmetric-matrix branch
_NEAR_PI_SIN = 1e-6
_I3 = np.eye(3)


def skew(v):
    """Hat operator: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(M):
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def exp_so3(phi):
    """Rodrigues' formula for the rotation with axis-angle vector ``phi``."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(phi @ phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return _I3 + K
    s = math.sin(theta) / theta
    c = (1.0 - math.cos(theta)) / (theta * theta)
    return _I3 + s * K + c * (K @ K)


def log_so3(R, return_branch=False):
    """Axis-angle vector of ``R`` with norm in [0, pi].

    With ``return_branch=True`` also returns which formula was used:
    ``"small"``, ``"regular"`` or ``"near_pi"``.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * vee(R - R.T)  # sin(theta) * axis
    sin_t = math.sqrt(w @ w)
    cos_t = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    theta = math.atan2(sin_t, cos_t)
    if theta < SMALL_ANGLE:
        phi, branch = w, "small"
    elif sin_t > _NEAR_PI_SIN or cos_t > 0.0:
        phi, branch = (theta / sin_t) * w, "regular"
    else:
        # R + R^T = 2 cos(t) I + 2 (1 - cos(t)) n n^T
        S = 0.5 * (R + R.T) - cos_t * np.eye(3)
        k = int(np.argmax(np.diag(S)))
        n = S[:, k] / np.linalg.norm(S[:, k])
        if n @ w < 0.0:
            n = -n
        phi, branch = theta * n, "near_pi"
    if return_branch:
        return phi, branch
    return phi


def right_jacobian_so3(phi):
    """J_r(phi) with ``exp(phi + d) ~= exp(phi) @ exp(J_r(phi) @ d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(phi @ phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return _I3 - 0.5 * K
    a = (1.0 - math.cos(theta)) / theta**2
    b = (theta - math.sin(theta)) / theta**3
    return _I3 - a * K + b * (K @ K)


def right_jacobian_inv_so3(phi):
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(phi @ phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return _I3 + 0.5 * K
    b = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return _I3 + 0.5 * K + b * (K @ K)


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R @ R.T, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) < tol
    )


def project_to_so3(R):
    """Closest rotation in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def quat_to_rot(q):
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R):
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return q if q[0] >= 0.0 else -q


def rot_z(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
