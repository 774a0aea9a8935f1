"""Rigid-body pose algebra on SO(3) x R^3.

Euler angles follow the intrinsic x-y-z (roll, pitch, yaw) convention
everywhere in the package, i.e. ``R = Rx(roll) @ Ry(pitch) @ Rz(yaw)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

GIMBAL_EPS = 1e-6


class GimbalLockWarning(RuntimeWarning):
    pass


class DispersedRotationsWarning(RuntimeWarning):
    pass


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R @ x + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation must be finite")

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        e = rotation_to_euler(self.rotation, warn=False)
        return f"Pose(rpy={np.round(e, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """Apply ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def transform_points(p: Pose, points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ p.rotation.T + p.translation


def rotation_error(r: np.ndarray) -> float:
    """Largest entry of ``|R^T R - I|``, plus the determinant's distance from 1."""
    r = np.asarray(r, dtype=np.float64)
    return float(np.max(np.abs(r.T @ r - np.eye(3))) + abs(np.linalg.det(r) - 1.0))


def is_rotation(r, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=np.float64)
    return r.shape == (3, 3) and bool(np.all(np.isfinite(r))) and rotation_error(r) <= tol


def orthonormalize(r) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (SVD projection)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(euler: Sequence[float]) -> np.ndarray:
    roll, pitch, yaw = euler
    return rot_x(roll) @ rot_y(pitch) @ rot_z(yaw)


def rotation_to_euler(r, warn: bool = True) -> np.ndarray:
    """Return ``(roll, pitch, yaw)`` with pitch in [-pi/2, pi/2].

    At gimbal lock the roll/yaw split is ambiguous; roll is set to 0 and a
    :class:`GimbalLockWarning` is emitted.
    """
    r = np.asarray(r, dtype=np.float64)
    cp = np.hypot(r[1, 2], r[2, 2])
    pitch = np.arctan2(r[0, 2], cp)
    if cp < GIMBAL_EPS:
        if warn:
            warnings.warn("rotation is at gimbal lock; roll fixed to 0", GimbalLockWarning, stacklevel=2)
        return np.array([0.0, pitch, np.arctan2(r[1, 0], r[1, 1])])
    roll = np.arctan2(-r[1, 2], r[2, 2])
    yaw = np.arctan2(-r[0, 1], r[0, 0])
    return np.array([roll, pitch, yaw])


def rotation_angle(r) -> float:
    """Rotation magnitude in [0, pi].

    Uses atan2(sin, cos) rather than a bare arccos of the trace so that
    angles near 0 and pi keep full precision; the cosine term is clamped.
    """
    r = np.asarray(r, dtype=np.float64)
    cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    sin = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.arctan2(sin, cos))


def geodesic_distance(a, b) -> float:
    """Angle of ``a^-1 b`` in radians."""
    a = a.rotation if isinstance(a, Pose) else np.asarray(a, dtype=np.float64)
    b = b.rotation if isinstance(b, Pose) else np.asarray(b, dtype=np.float64)
    return rotation_angle(a.T @ b)


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def mean_rotation(rotations: Sequence[np.ndarray]) -> np.ndarray:
    """Average rotations by averaging their Euler angles.

    Each angle is unwrapped relative to the first rotation's before the
    arithmetic mean, so inputs straddling the +-pi seam average correctly.
    Inputs more than pi/2 apart (pairwise geodesic) trigger a warning; the
    result is still returned.
    """
    rs = [np.asarray(r.rotation if isinstance(r, Pose) else r, dtype=np.float64) for r in rotations]
    if not rs:
        raise ValueError("mean_rotation of an empty list")
    stack = np.stack(rs)
    # pairwise relative rotations via batched R_i^T R_j
    rel = np.einsum("iba,jbc->ijac", stack, stack)
    cos = np.clip((np.trace(rel, axis1=2, axis2=3) - 1.0) / 2.0, -1.0, 1.0)
    if np.any(cos <= 1e-12):
        warnings.warn(
            "rotations are dispersed beyond pi/2; Euler averaging is ill-posed",
            DispersedRotationsWarning,
            stacklevel=2,
        )
    eulers = np.stack([rotation_to_euler(r) for r in rs])
    ref = eulers[0]
    eulers = ref + _wrap(eulers - ref)
    return euler_to_rotation(eulers.mean(axis=0))


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    """Rotation with uniform axis and angle uniform in [0, max_angle]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis_angle_to_rotation(axis * rng.uniform(0.0, max_angle))


def axis_angle_to_rotation(rotvec) -> np.ndarray:
    """Rodrigues' formula."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec)
    k = np.array(
        [[0.0, -rotvec[2], rotvec[1]], [rotvec[2], 0.0, -rotvec[0]], [-rotvec[1], rotvec[0], 0.0]]
    )
    if angle < 1e-12:
        return np.eye(3) + k
    k /= angle
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def random_pose(rng: np.random.Generator, max_angle: float = np.pi, max_trans: float = 10.0) -> Pose:
    return Pose(random_rotation(rng, max_angle), rng.uniform(-max_trans, max_trans, size=3))
