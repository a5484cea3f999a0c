"""Rigid transforms and SO(3) helpers shared by the spatial memory and the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidTransformError

ORTHO_TOL = 1e-9


def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues' formula; series expansion near zero."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * K @ K


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    c = max(-1.0, min(1.0, (np.trace(R) - 1.0) / 2.0))
    theta = math.acos(c)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * v
    if math.pi - theta < 1e-6:
        # near pi: recover the axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        i = int(np.argmax(axis))
        axis = B[i] / axis[i]
        axis /= np.linalg.norm(axis)
        if np.dot(axis, v) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * math.sin(theta)) * v


def rotation_angle(Ra, Rb) -> float:
    """Geodesic angle (radians) between two rotations."""
    return float(np.linalg.norm(so3_log(np.asarray(Ra).T @ np.asarray(Rb))))


def is_rotation(R, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class Transform:
    """Rigid transform ``x -> R x + t``; rotation stored row-major."""

    rotation: tuple = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))

    @classmethod
    def identity(cls) -> Transform:
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> Transform:
        R = np.asarray(R, dtype=float).reshape(3, 3)
        t = np.asarray(t, dtype=float).reshape(3)
        return cls(tuple(float(v) for v in R.ravel()), tuple(float(v) for v in t))

    @classmethod
    def from_translation(cls, x: float, y: float, z: float = 0.0) -> Transform:
        return cls(translation=(float(x), float(y), float(z)))

    @classmethod
    def from_yaw(cls, yaw: float, x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Transform:
        c, s = math.cos(yaw), math.sin(yaw)
        return cls((c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0), (float(x), float(y), float(z)))

    @classmethod
    def from_rotvec(cls, w, t=(0.0, 0.0, 0.0)) -> Transform:
        return cls.from_matrix(so3_exp(w), t)

    @property
    def R(self) -> np.ndarray:
        return np.array(self.rotation, dtype=float).reshape(3, 3)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation, dtype=float)

    def is_valid(self, tol: float = ORTHO_TOL) -> bool:
        return len(self.rotation) == 9 and len(self.translation) == 3 and is_rotation(self.R, tol) \
            and all(math.isfinite(v) for v in self.translation)

    def validate(self) -> Transform:
        if not self.is_valid():
            raise InvalidTransformError("rotation must be orthonormal with det +1")
        return self

    def compose(self, other: Transform) -> Transform:
        """``self ∘ other``: apply ``other`` first."""
        R = self.R @ other.R
        t = self.R @ other.t + self.t
        return Transform.from_matrix(R, t)

    __matmul__ = compose

    def inverse(self) -> Transform:
        Rt = self.R.T
        return Transform.from_matrix(Rt, -Rt @ self.t)

    def apply(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        return P @ self.R.T + self.t

    def to_dict(self) -> dict:
        return {"R": list(self.rotation), "t": list(self.translation)}

    @classmethod
    def from_dict(cls, d: dict) -> Transform:
        R, t = d["R"], d["t"]
        if len(R) != 9 or len(t) != 3:
            raise InvalidTransformError("transform needs 9 rotation and 3 translation entries")
        return cls(tuple(float(v) for v in R), tuple(float(v) for v in t))
