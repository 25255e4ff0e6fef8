"""SO(3) primitives.

Attitude convention used throughout the package: ``C_bn`` is a 3x3 direction
cosine matrix mapping body-frame coordinates to navigation-frame coordinates,
``v_n = C_bn @ v_b``. It obeys ``dC_bn/dt = C_bn @ skew(omega_nb_b)``.

The navigation frame is local level with axes ordered (North, Up, East).

Euler angles follow the rotation sequence reference -> body: first about
the y axis (yaw), then about z (pitch), then about x (roll), so that::

    C_bn = Ay(yaw) @ Az(pitch) @ Ax(roll)

with ``Ak`` the elementary rotation about axis k.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-9


def skew(v):
    """Return the cross-product matrix of `v`, so that ``skew(v) @ w == cross(v, w)``.

    Accepts a single vector of shape (3,) or a stack of shape (..., 3).
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def unskew(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def so3_exp(rotvec):
    """Matrix exponential of ``skew(rotvec)`` by the Rodrigues formula.

    Parameters
    ----------
    rotvec : array_like, shape (3,) or (..., 3)
        Rotation vector(s) in radians.

    Returns
    -------
    ndarray, shape (3, 3) or (..., 3, 3)
        Rotation matrices. Below ``SMALL_ANGLE`` rad the trigonometric
        coefficients are replaced by their second-order series.
    """
    rotvec = np.asarray(rotvec, dtype=float)
    theta2 = np.sum(rotvec * rotvec, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = skew(rotvec)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def so3_log(c):
    """Rotation vector of a rotation matrix (inverse of :func:`so3_exp`)."""
    c = np.asarray(c, dtype=float)
    cos_t = np.clip(0.5 * (np.trace(c) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = unskew(c)
    if theta < 1e-6:
        return w * (1.0 + theta * theta / 6.0)
    if np.pi - theta > 1e-4:
        return w * (theta / np.sin(theta))
    # near pi: axis from the symmetric part
    s = 0.5 * (c + c.T) - cos_t * np.eye(3)
    i = int(np.argmax(np.diag(s)))
    axis = s[:, i] / np.sqrt(max(s[i, i], 1e-300))
    if np.dot(axis, w) < 0:
        axis = -axis
    return axis / np.linalg.norm(axis) * theta


def rotation_angle(c1, c2) -> float:
    """Angle in radians of the relative rotation ``c1.T @ c2``."""
    r = np.asarray(c1).T @ np.asarray(c2)
    cos_t = 0.5 * (np.trace(r) - 1.0)
    sin_t = np.linalg.norm(unskew(r))
    return float(np.arctan2(sin_t, cos_t))


def project_to_so3(m):
    """Nearest rotation matrix in the Frobenius sense (polar decomposition).

    Accepts a single matrix or a stack of shape (..., 3, 3).
    """
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


def orthonormality_error(c) -> float:
    c = np.asarray(c, dtype=float)
    return float(np.max(np.abs(c.T @ c - np.eye(3))))


def is_rotation(c, tol: float = ORTHO_TOL) -> bool:
    c = np.asarray(c, dtype=float)
    return c.shape == (3, 3) and orthonormality_error(c) < tol and abs(np.linalg.det(c) - 1.0) < tol


def euler_to_dcm(roll: float, yaw: float, pitch: float):
    """``C_bn`` from (roll, yaw, pitch) in radians; see the module docstring."""
    return (
        so3_exp(np.array([0.0, yaw, 0.0]))
        @ so3_exp(np.array([0.0, 0.0, pitch]))
        @ so3_exp(np.array([roll, 0.0, 0.0]))
    )


def dcm_to_euler(c):
    """Inverse of :func:`euler_to_dcm`; returns (roll, yaw, pitch) in radians.

    Pitch is confined to [-pi/2, pi/2]; roll and yaw to (-pi, pi].
    Works on a single matrix or a stack of shape (..., 3, 3).
    """
    c = np.asarray(c, dtype=float)
    pitch = np.arcsin(np.clip(c[..., 1, 0], -1.0, 1.0))
    roll = np.arctan2(-c[..., 1, 2], c[..., 1, 1])
    yaw = np.arctan2(-c[..., 2, 0], c[..., 0, 0])
    return roll, yaw, pitch
