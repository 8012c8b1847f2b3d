"""SO(3) primitives: skew, exp/log maps, quaternion conversion.

Rotations are plain ``(3, 3)`` float64 arrays mapping body vectors into the
navigation frame. Rotation vectors are ``(3,)`` arrays in radians.
"""
from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-9
# looser gate for accepting caller-supplied matrices in so3_log
_LOG_INPUT_TOL = 1e-6


class RotationError(ValueError):
    """Raised when a matrix is not a proper rotation."""


def _as_vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite vector component")
    return v


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = _as_vec3(v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(v) -> np.ndarray:
    """Rodrigues' formula, with a 2nd-order series below 1e-8 rad."""
    v = _as_vec3(v)
    theta = float(np.linalg.norm(v))
    k = skew(v)
    if theta < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def orthonormality_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m.T @ m - np.eye(3))))


def is_rotation(m, tol: float = ORTHO_TOL) -> bool:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return orthonormality_error(m) <= tol and abs(np.linalg.det(m) - 1.0) <= tol


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (symmetric orthogonalization)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def maybe_orthonormalize(m: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    if orthonormality_error(m) > tol:
        return orthonormalize(m)
    return m


def so3_log(R) -> np.ndarray:
    """Inverse of :func:`so3_exp`, returning the representative with norm <= pi.

    At exactly pi the axis sign is chosen so its largest-magnitude component
    is positive.
    """
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R, _LOG_INPUT_TOL):
        raise RotationError("so3_log: input is not a proper rotation matrix")
    w = 0.5 * vee(R - R.T)
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(s, c))
    if theta < SMALL_ANGLE:
        return w
    if theta < 0.5 * np.pi:
        return w * (theta / s)
    # axis from the symmetric part: (R + R^T)/2 = cos(theta) I + (1 - cos(theta)) a a^T
    aat = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
    k = int(np.argmax(np.diag(aat)))
    axis = aat[:, k] / np.sqrt(aat[k, k])
    axis /= np.linalg.norm(axis)
    d = float(axis @ w)
    if abs(d) > 1e-12:
        if d < 0:
            axis = -axis
    else:
        j = int(np.argmax(np.abs(axis)))
        if axis[j] < 0:
            axis = -axis
    return axis * theta


def rot_from_quaternion(q) -> np.ndarray:
    """Hamilton, scalar-first ``[w, x, y, z]`` quaternion to rotation matrix."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise ValueError(f"expected a finite 4-vector, got {q!r}")
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quaternion_from_rot(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion ``[w, x, y, z]`` with ``w >= 0``."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def yaw_of(R: np.ndarray, fallback: float = 0.0) -> float:
    """Heading of the body x axis projected on the horizontal plane."""
    x = R[:, 0]
    h = np.hypot(x[0], x[1])
    if h < 1e-9:
        return fallback
    return float(np.arctan2(x[1], x[0]))
