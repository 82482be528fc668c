"""SE(3) primitives: rigid-body poses, exponential/logarithm maps, quaternions.

Tangent vectors are 6-vectors ordered (rotation, translation): the first three
components are the rotation vector (radians), the last three the translation
part (meters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Below this angle the closed-form exp/log coefficients are replaced by their
# Taylor series to avoid 0/0.
_SMALL_ANGLE = 1e-8

# se3_log is undefined (non-unique axis) at rotation angle pi; reject earlier.
_MAX_LOG_ANGLE = math.pi - 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that skew(v) @ u == cross(v, u)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix for a rotation vector (Rodrigues formula)."""
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    k = skew(omega)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix.

    Raises:
        ValueError: if the rotation angle is within 1e-6 of pi, where the
            logarithm is not unique.
    """
    trace = float(np.trace(rotation))
    cos_angle = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    angle = math.acos(cos_angle)
    if angle >= _MAX_LOG_ANGLE:
        raise ValueError(f"rotation angle {angle:.9f} too close to pi for log map")
    axis_raw = np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )
    if angle < _SMALL_ANGLE:
        return 0.5 * axis_raw
    return (angle / (2.0 * math.sin(angle))) * axis_raw


def _so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    # V in exp((w, v)) = (exp(w), V v).
    angle = float(np.linalg.norm(omega))
    k = skew(omega)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a2 = angle * angle
    b = (1.0 - math.cos(angle)) / a2
    c = (angle - math.sin(angle)) / (a2 * angle)
    return np.eye(3) + b * k + c * (k @ k)


def _so3_left_jacobian_inverse(omega: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(omega))
    k = skew(omega)
    if angle < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    half = 0.5 * angle
    cot_term = (1.0 - half * math.cos(half) / math.sin(half)) / (angle * angle)
    return np.eye(3) - 0.5 * k + cot_term * (k @ k)


def quat_to_rotation(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Rotation matrix of a quaternion given in (qx, qy, qz, qw) order.

    The quaternion is normalized first; a zero quaternion is rejected.
    """
    norm = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if norm < 1e-12:
        raise ValueError("zero-norm quaternion")
    x, y, z, w = qx / norm, qy / norm, qz / norm, qw / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(rotation: np.ndarray) -> tuple[float, float, float, float]:
    """Quaternion (qx, qy, qz, qw) of a rotation matrix, qw >= 0.

    Uses the largest-pivot (Shepperd) branch selection, stable for any input.
    """
    r = rotation
    trace = r[0, 0] + r[1, 1] + r[2, 2]
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        qw = 0.25 * s
        qx = (r[2, 1] - r[1, 2]) / s
        qy = (r[0, 2] - r[2, 0]) / s
        qz = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        qw = (r[2, 1] - r[1, 2]) / s
        qx = 0.25 * s
        qy = (r[0, 1] + r[1, 0]) / s
        qz = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        qw = (r[0, 2] - r[2, 0]) / s
        qx = (r[0, 1] + r[1, 0]) / s
        qy = 0.25 * s
        qz = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        qw = (r[1, 0] - r[0, 1]) / s
        qx = (r[0, 2] + r[2, 0]) / s
        qy = (r[1, 2] + r[2, 1]) / s
        qz = 0.25 * s
    if qw < 0.0:
        qx, qy, qz, qw = -qx, -qy, -qz, -qw
    return float(qx), float(qy), float(qz), float(qw)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_world = rotation @ p_local + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        """Group product self * other."""
        return Pose(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rot_t = self.rotation.T
        return Pose(rotation=rot_t, translation=-(rot_t @ self.translation))

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return Pose(rotation=matrix[:3, :3].copy(), translation=matrix[:3, 3].copy())

    @staticmethod
    def from_quat(
        tx: float, ty: float, tz: float, qx: float, qy: float, qz: float, qw: float
    ) -> "Pose":
        return Pose(rotation=quat_to_rotation(qx, qy, qz, qw), translation=np.array([tx, ty, tz]))

    def to_quat(self) -> tuple[float, float, float, float, float, float, float]:
        """(tx, ty, tz, qx, qy, qz, qw) tuple, the order used by text formats."""
        qx, qy, qz, qw = rotation_to_quat(self.rotation)
        tx, ty, tz = (float(x) for x in self.translation)
        return tx, ty, tz, qx, qy, qz, qw

    def rotation_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        orthonormal = float(np.linalg.norm(r.T @ r - np.eye(3))) <= tol
        return orthonormal and abs(float(np.linalg.det(r)) - 1.0) <= tol

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (
            float(np.abs(self.rotation - other.rotation).max()) <= tol
            and float(np.abs(self.translation - other.translation).max()) <= tol
        )


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def se3_exp(xi: np.ndarray) -> Pose:
    """Exponential map of a (rotation, translation) tangent 6-vector."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    omega, rho = xi[:3], xi[3:]
    return Pose(rotation=so3_exp(omega), translation=_so3_left_jacobian(omega) @ rho)


def se3_log(p: Pose) -> np.ndarray:
    """Tangent 6-vector of a pose; inverse of :func:`se3_exp`.

    Raises:
        ValueError: if the rotation angle is within 1e-6 of pi.
    """
    omega = so3_log(p.rotation)
    rho = _so3_left_jacobian_inverse(omega) @ p.translation
    return np.concatenate([omega, rho])


def rot_x(angle: float) -> np.ndarray:
    return so3_exp(np.array([angle, 0.0, 0.0]))


def rot_y(angle: float) -> np.ndarray:
    return so3_exp(np.array([0.0, angle, 0.0]))


def rot_z(angle: float) -> np.ndarray:
    return so3_exp(np.array([0.0, 0.0, angle]))
