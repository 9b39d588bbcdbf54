"""Small SO(3) toolkit: skew matrices, Rodrigues maps, elementary rotations."""

import numpy as np


def hat(v):
    """Skew-symmetric matrix such that ``hat(v) @ a == np.cross(v, a)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_map(omega):
    """Rotation matrix for the axis-angle vector ``omega`` (Rodrigues)."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    K = hat(omega)
    if theta < 1e-8:
        # second-order Taylor expansion; exact to machine precision here
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def log_map(R):
    """Axis-angle vector of a rotation matrix, angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta < 1e-8:
        return w
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if np.dot(axis, w) < 0:
            axis = -axis
        return theta * axis
    return w * (theta / s)


def rotation_angle(R):
    """Rotation angle of ``R`` in radians, accurate near 0 and pi."""
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def geodesic_distance(R1, R2):
    return rotation_angle(np.asarray(R1).T @ np.asarray(R2))


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# exact so that flipping twice is an exact involution
RZ_PI = np.diag([-1.0, -1.0, 1.0])


def is_rotation(R, tol=1e-10):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    return bool(ortho <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def random_rotation(rng):
    """Uniformly distributed rotation (Haar measure) from a numpy Generator."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
