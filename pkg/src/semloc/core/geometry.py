"""Rigid-body geometry: quaternions, SO(3)/SE(3) exponential maps and the Pose type.

Twists are ordered translation first: ``xi = (rho_x, rho_y, rho_z, phi_x, phi_y, phi_z)``.
Quaternions are stored ``(w, x, y, z)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

_SMALL_ANGLE = 0.05


class BranchCutWarning(RuntimeWarning):
    """log() was evaluated at a rotation angle of pi, where the branch is ambiguous."""


def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def so3_exp(phi):
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * K @ K


def so3_log(R):
    q = matrix_to_quat(R)
    return quat_log(q)


def quat_log(q):
    w, v = q[0], np.asarray(q[1:], dtype=float)
    if w < 0:
        w, v = -w, -v
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        # sin(theta/2)/(theta/2) ~ 1
        return 2.0 * v / w
    theta = 2.0 * math.atan2(n, w)
    return theta * v / n


def quat_exp(phi):
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    half = 0.5 * theta
    if theta < 1e-8:
        s = 0.5 - theta * theta / 48.0
    else:
        s = math.sin(half) / theta
    return np.array([math.cos(half), s * phi[0], s * phi[1], s * phi[2]])


def so3_left_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        b = (1.0 - math.cos(theta)) / theta**2
        c = (theta - math.sin(theta)) / theta**3
    return np.eye(3) + b * K + c * K @ K


def so3_left_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        d = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) - 0.5 * K + d * K @ K


def _se3_q_block(rho, phi):
    theta = float(np.linalg.norm(phi))
    P = skew(phi)
    Rh = skew(rho)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        b = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c = 1.0 / 120.0 - t2 / 2520.0
    else:
        s, co = math.sin(theta), math.cos(theta)
        a = (theta - s) / theta**3
        b = (theta * theta + 2 * co - 2) / (2 * theta**4)
        c = (2 * theta - 3 * s + theta * co) / (2 * theta**5)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    return 0.5 * Rh + a * (PR + RP + PRP) + b * (P @ PR + RP @ P - 3 * PRP) + c * (PRP @ P + P @ PRP)


def se3_left_jacobian(xi):
    xi = np.asarray(xi, dtype=float)
    J = so3_left_jacobian(xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[:3, 3:] = _se3_q_block(xi[:3], xi[3:])
    return out


def se3_left_jacobian_inv(xi):
    xi = np.asarray(xi, dtype=float)
    Ji = so3_left_jacobian_inv(xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = Ji
    out[3:, 3:] = Ji
    out[:3, 3:] = -Ji @ _se3_q_block(xi[:3], xi[3:]) @ Ji
    return out


def se3_right_jacobian_inv(xi):
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


def se3_adjoint(T):
    """Adjoint of a 4x4 transform acting on (rho, phi) twists."""
    R, t = T[:3, :3], T[:3, 3]
    out = np.zeros((6, 6))
    out[:3, :3] = R
    out[3:, 3:] = R
    out[:3, 3:] = skew(t) @ R
    return out


def se3_exp_matrix(xi):
    xi = np.asarray(xi, dtype=float)
    T = np.eye(4)
    T[:3, :3] = so3_exp(xi[3:])
    T[:3, 3] = so3_left_jacobian(xi[3:]) @ xi[:3]
    return T


def se3_log_matrix(T):
    phi = so3_log(T[:3, :3])
    rho = so3_left_jacobian_inv(phi) @ T[:3, 3]
    return np.concatenate([rho, phi])


def _quat_rotate(w, x, y, z, vx, vy, vz):
    # v + 2w (u x v) + 2 u x (u x v), u = (x, y, z)
    cx = y * vz - z * vy
    cy = z * vx - x * vz
    cz = x * vy - y * vx
    ddx = y * cz - z * cy
    ddy = z * cx - x * cz
    ddz = x * cy - y * cx
    return vx + 2 * (w * cx + ddx), vy + 2 * (w * cy + ddy), vz + 2 * (w * cz + ddz)


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t`` with a unit quaternion rotation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        n = math.sqrt(float(q @ q))
        if n == 0 or not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
            raise ValueError("pose needs a finite non-zero quaternion and finite translation")
        q = q / n
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "rotation", _freeze(q))
        object.__setattr__(self, "translation", _freeze(t))

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_translation(cls, t):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), t)

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_xyz_quat(cls, txyz, qxyzw):
        """Build from translation and an ``(x, y, z, w)`` quaternion as used in TUM files."""
        qx, qy, qz, qw = qxyzw
        return cls(np.array([qw, qx, qy, qz]), txyz)

    @classmethod
    def from_rpy(cls, roll, pitch, yaw, translation=(0.0, 0.0, 0.0)):
        R = so3_exp([0, 0, yaw]) @ so3_exp([0, pitch, 0]) @ so3_exp([roll, 0, 0])
        return cls(matrix_to_quat(R), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls(quat_exp(rotvec), translation)

    @property
    def R(self):
        return quat_to_matrix(self.rotation)

    @property
    def t(self):
        return self.translation

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def xyz_quat(self):
        """``(tx, ty, tz, qx, qy, qz, qw)``."""
        w, x, y, z = self.rotation
        return (*self.translation.tolist(), x, y, z, w)

    def yaw(self):
        R = self.R
        return math.atan2(R[1, 0], R[0, 0])

    def angle(self):
        """Rotation angle in radians, in [0, pi]."""
        w = min(1.0, abs(float(self.rotation[0])))
        return 2.0 * math.acos(w)

    @classmethod
    def _raw(cls, q, t):
        """Trusted constructor: ``q`` is renormalised, no other validation."""
        w, x, y, z = q
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if w < 0:
            n = -n
        qa = np.array((w / n, x / n, y / n, z / n))
        ta = np.array(t, dtype=float)
        qa.setflags(write=False)
        ta.setflags(write=False)
        obj = object.__new__(cls)
        object.__setattr__(obj, "rotation", qa)
        object.__setattr__(obj, "translation", ta)
        return obj

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        aw, ax, ay, az = self.rotation.tolist()
        bw, bx, by, bz = other.rotation.tolist()
        q = (
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
        rx, ry, rz = _quat_rotate(aw, ax, ay, az, *other.translation.tolist())
        tx, ty, tz = self.translation.tolist()
        return Pose._raw(q, (tx + rx, ty + ry, tz + rz))

    __matmul__ = compose

    def inverse(self) -> "Pose":
        w, x, y, z = self.rotation.tolist()
        rx, ry, rz = _quat_rotate(w, -x, -y, -z, *self.translation.tolist())
        return Pose._raw((w, -x, -y, -z), (-rx, -ry, -rz))

    def transform_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts @ self.R.T + self.translation

    def transform_point(self, p):
        return self.R @ np.asarray(p, dtype=float) + self.translation

    def almost_equal(self, other, tol=1e-9):
        dq = min(np.linalg.norm(self.rotation - other.rotation), np.linalg.norm(self.rotation + other.rotation))
        return dq <= tol and np.linalg.norm(self.translation - other.translation) <= tol

    def __repr__(self):
        return f"Pose(q={np.round(self.rotation, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def exp_se3(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    return Pose(quat_exp(xi[3:]), so3_left_jacobian(xi[3:]) @ xi[:3])


def log_se3(pose: Pose) -> np.ndarray:
    """Inverse of :func:`exp_se3` for rotation angles below pi.

    At exactly pi the rotation axis sign is ambiguous; the branch with a
    non-negative quaternion scalar is returned and a :class:`BranchCutWarning`
    is issued.
    """
    if pose.angle() >= math.pi - 1e-9:
        warnings.warn("log_se3 evaluated at rotation angle pi; returning nearest branch", BranchCutWarning,
                      stacklevel=2)
    phi = quat_log(pose.rotation)
    rho = so3_left_jacobian_inv(phi) @ pose.translation
    return np.concatenate([rho, phi])


def transform_point(pose: Pose, p):
    return pose.transform_point(p)


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    """Geodesic interpolation, ``s=0`` gives ``a`` and ``s=1`` gives ``b``."""
    return a @ exp_se3(s * log_se3(a.inverse() @ b))
