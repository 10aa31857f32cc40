"""Rotation-group primitives shared by all dynamics modules.

Everything operates on plain numpy arrays: 3-vectors and 3x3 rotation
matrices. Functions are pure and safe for concurrent use.
"""

import numpy as np

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])

# mirror about the x-z plane; conjugation by MIRROR_Y maps right-wing
# rotations to left-wing rotations
MIRROR_Y = np.diag([1.0, -1.0, 1.0])


def cross3(a, b):
    """Cross product over the last axis; faster than numpy's general
    implementation for the plain 3-vectors used throughout."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def hat(v):
    """Skew-symmetric matrix of a 3-vector: hat(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(S):
    """Inverse of hat: extract the 3-vector from a skew matrix."""
    S = np.asarray(S, dtype=float)
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def expm_so3(v):
    """Rodrigues rotation about axis v/|v| by angle |v|.

    Falls back to a 2nd-order Taylor expansion of the sinc terms below
    |v| = 1e-8 so the angle -> 0 limit is exact.
    """
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    S = hat(v)
    if angle < 1e-8:
        # sin(a)/a ~ 1 - a^2/6, (1-cos(a))/a^2 ~ 1/2 - a^2/24
        a2 = angle * angle
        return np.eye(3) + (1.0 - a2 / 6.0) * S + (0.5 - a2 / 24.0) * (S @ S)
    return (
        np.eye(3)
        + (np.sin(angle) / angle) * S
        + ((1.0 - np.cos(angle)) / angle**2) * (S @ S)
    )


def rot_y(angle):
    """Rotation exp(angle * hat(e2)) about the pitch axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_132_right(beta, phi, psi, theta):
    """Right-wing attitude relative to the body.

    Product exp(beta e2^) exp(phi e1^) exp(-psi e3^) exp(theta e2^),
    i.e. stroke-plane tilt, then flapping, deviation, and pitch.
    """
    return rot_y(beta) @ rot_x(phi) @ rot_z(-psi) @ rot_y(theta)


def euler_132_left(beta, phi, psi, theta):
    """Left-wing attitude: sign-flipped flapping and deviation factors."""
    return rot_y(beta) @ rot_x(-phi) @ rot_z(psi) @ rot_y(theta)


def is_rotation(R, tol=1e-12):
    """True when R^T R = I and det(R) = 1 within tol."""
    R = np.asarray(R, dtype=float)
    return (
        np.abs(R.T @ R - np.eye(3)).max() <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def project_rotation(A):
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    U, _, Vt = np.linalg.svd(np.asarray(A, dtype=float))
    R = U @ Vt
    if np.linalg.det(R) < 0.0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R


def angular_velocity(Q, Qdot, skew_tol=1e-6):
    """Body-frame angular velocity from an attitude and its derivative.

    Returns vee of the skew part of Q^T Qdot. A symmetric residual above
    skew_tol means the inputs are not a consistent (Q, Qdot) pair.
    """
    W = np.asarray(Q, dtype=float).T @ np.asarray(Qdot, dtype=float)
    sym = 0.5 * (W + W.T)
    resid = np.abs(sym).max()
    if resid > skew_tol:
        raise ValueError(
            f"Q^T Qdot has non-skew residual {resid:.3e} > {skew_tol:.1e}; "
            "inputs are not a consistent attitude/derivative pair"
        )
    return vee(0.5 * (W - W.T))
