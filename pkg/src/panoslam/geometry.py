"""Rigid-body transforms stored as unit quaternion plus translation.

Quaternions use ``(x, y, z, w)`` component order throughout, matching the
trajectory and pose-graph text formats. Twists are 6-vectors ordered
``(rx, ry, rz, tx, ty, tz)``: rotation first, then translation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousRotationError

SMALL_ANGLE = 1e-6


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _qmul(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return (
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    )


def _qnormalize(q):
    x, y, z, w = q
    n2 = x * x + y * y + z * z + w * w
    # already unit to rounding: leave the bits alone so stored poses round-trip exactly
    n = 1.0 if abs(n2 - 1.0) <= 4e-16 else math.sqrt(n2)
    if w < 0.0:
        n = -n
    return (x / n, y / n, z / n, w / n)


def quat_to_matrix(q) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> tuple:
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = ((m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = (0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s)
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = ((m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s)
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = ((m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s)
    return _qnormalize(q)


def rotvec_to_quat(w) -> tuple:
    wx, wy, wz = (float(c) for c in w)
    theta = math.sqrt(wx * wx + wy * wy + wz * wz)
    if theta < SMALL_ANGLE:
        # sin(theta/2)/theta and cos(theta/2) by Taylor expansion
        k = 0.5 - theta * theta / 48.0
        c = 1.0 - theta * theta / 8.0
    else:
        k = math.sin(0.5 * theta) / theta
        c = math.cos(0.5 * theta)
    return _qnormalize((k * wx, k * wy, k * wz, c))


def quat_to_rotvec(q) -> np.ndarray:
    x, y, z, w = q
    if w < 0.0:
        x, y, z, w = -x, -y, -z, -w
    n = math.sqrt(x * x + y * y + z * z)
    if w < 1e-12:
        raise AmbiguousRotationError("rotation angle is pi; logarithm is ambiguous")
    if n < 0.5 * SMALL_ANGLE:
        k = 2.0 / w * (1.0 - n * n / (3.0 * w * w))
    else:
        k = 2.0 * math.atan2(n, w) / n
    return np.array([k * x, k * y, k * z])


def so3_exp(w) -> np.ndarray:
    return quat_to_matrix(rotvec_to_quat(w))


def so3_log(m) -> np.ndarray:
    return quat_to_rotvec(matrix_to_quat(m))


def so3_right_jacobian_inv(phi) -> np.ndarray:
    """Inverse right Jacobian of SO(3) at rotation vector ``phi``."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < SMALL_ANGLE:
        coef = 1.0 / 12.0
    else:
        coef = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * k + coef * (k @ k)


def _v_coeffs(theta):
    if theta < SMALL_ANGLE:
        return 0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0
    t2 = theta * theta
    s = math.sin(0.5 * theta)
    return 2.0 * s * s / t2, (theta - math.sin(theta)) / (t2 * theta)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping points from a child frame into a parent frame.

    ``q`` is a unit quaternion ``(x, y, z, w)`` with ``w >= 0``; ``t`` is the
    translation in meters.
    """

    q: tuple = (0.0, 0.0, 0.0, 1.0)
    t: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "q", _qnormalize(tuple(float(c) for c in self.q)))
        object.__setattr__(self, "t", tuple(float(c) for c in self.t))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rt(cls, rotation, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(matrix_to_quat(rotation), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(rotvec_to_quat(rotvec), translation)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    @property
    def translation(self) -> np.ndarray:
        return np.array(self.t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.t
        return m

    def rotate(self, v) -> np.ndarray:
        return self.rotation @ np.asarray(v, dtype=float)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def inverse(self) -> Pose:
        return inverse(self)

    def angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        x, y, z, w = self.q
        return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))

    def __repr__(self) -> str:
        q = ", ".join(f"{c:.6g}" for c in self.q)
        t = ", ".join(f"{c:.6g}" for c in self.t)
        return f"Pose(q=({q}), t=({t}))"


def compose(a: Pose, b: Pose) -> Pose:
    """Return ``a * b``: apply ``b`` first, then ``a``."""
    tb = _rotate_tuple(a.q, b.t)
    return Pose(_qmul(a.q, b.q), (tb[0] + a.t[0], tb[1] + a.t[1], tb[2] + a.t[2]))


def _rotate_tuple(q, v):
    x, y, z, w = q
    vx, vy, vz = v
    # v + 2w (u x v) + 2 u x (u x v)
    cx = y * vz - z * vy
    cy = z * vx - x * vz
    cz = x * vy - y * vx
    return (
        vx + 2.0 * (w * cx + y * cz - z * cy),
        vy + 2.0 * (w * cy + z * cx - x * cz),
        vz + 2.0 * (w * cz + x * cy - y * cx),
    )


def inverse(p: Pose) -> Pose:
    x, y, z, w = p.q
    qi = (-x, -y, -z, w)
    ti = _rotate_tuple(qi, p.t)
    return Pose(qi, (-ti[0], -ti[1], -ti[2]))


def transform_point(p: Pose, x) -> np.ndarray:
    return np.array(_rotate_tuple(p.q, tuple(float(c) for c in x))) + np.array(p.t)


def transform_points(p: Pose, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ p.rotation.T + np.array(p.t)


def exp(xi) -> Pose:
    """SE(3) exponential of a twist ``(rotation, translation)``."""
    xi = np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    a, b = _v_coeffs(theta)
    k = skew(w)
    vmat = np.eye(3) + a * k + b * (k @ k)
    return Pose(rotvec_to_quat(w), vmat @ v)


def log(p: Pose) -> np.ndarray:
    """SE(3) logarithm; raises :class:`AmbiguousRotationError` at angle pi."""
    w = quat_to_rotvec(p.q)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < SMALL_ANGLE:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        s = math.sin(0.5 * theta)
        c = (1.0 - theta * math.sin(theta) / (4.0 * s * s)) / (theta * theta)
    vinv = np.eye(3) - 0.5 * k + c * (k @ k)
    return np.concatenate([w, vinv @ np.array(p.t)])


def yaw_pitch_roll(p: Pose) -> tuple:
    """ZYX Euler angles of the rotation, in radians."""
    r = p.rotation
    yaw = math.atan2(r[1, 0], r[0, 0])
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    roll = math.atan2(r[2, 1], r[2, 2])
    return yaw, pitch, roll


def from_ypr(yaw: float, pitch: float, roll: float, translation=(0.0, 0.0, 0.0)) -> Pose:
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    q = (
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
        cr * cp * cy + sr * sp * sy,
    )
    return Pose(q, translation)


def rotation_angle_between(a: Pose, b: Pose) -> float:
    return compose(inverse(a), b).angle()


def translation_distance(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(np.subtract(a.t, b.t)))
