"""
Shared geometric types.

Frames: the LiDAR frame is x forward (toward the face), y left, z up. The
camera frame is the pinhole convention, z forward, x right, y down.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .exception import GeometryException

_ORTHONORMAL_TOLERANCE = 1e-9


class Point3(NamedTuple):
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


class Timestamp(NamedTuple):
    """Nanoseconds since the simulation epoch."""

    nanos: int

    @classmethod
    def from_seconds(cls, seconds: float) -> "Timestamp":
        return cls(int(round(seconds * 1e9)))

    @property
    def seconds(self) -> float:
        return self.nanos / 1e9

    @property
    def millis(self) -> float:
        return self.nanos / 1e6


Vector = Union[Point3, Sequence[float], np.ndarray]


def _vec(value: Vector) -> np.ndarray:
    return np.asarray(value, dtype=np.float64).reshape(3)


@dataclass(frozen=True)
class RigidTransform:
    """
    RigidTransform.

    Maps p to rotation @ p + translation. Both arrays are copied and made
    read-only so transforms can be shared freely between threads.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = _vec(self.translation).copy()
        if not np.all(np.isfinite(rotation)) or not np.all(
            np.isfinite(translation)
        ):
            raise GeometryException("transform entries must be finite")
        if (
            np.max(np.abs(rotation @ rotation.T - np.eye(3)))
            > _ORTHONORMAL_TOLERANCE
            or abs(np.linalg.det(rotation) - 1.0) > _ORTHONORMAL_TOLERANCE
        ):
            raise GeometryException(
                "rotation is not orthonormal with determinant +1"
            )
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_translation(cls, translation: Vector) -> "RigidTransform":
        return cls(np.eye(3), _vec(translation))

    @classmethod
    def from_euler(
        cls,
        seq: str,
        angles: Union[float, Sequence[float]],
        translation: Vector = (0.0, 0.0, 0.0),
        degrees: bool = True,
    ) -> "RigidTransform":
        matrix = Rotation.from_euler(seq, angles, degrees=degrees).as_matrix()
        # re-orthonormalise so the 1e-9 invariant holds after float rounding
        u, _, vt = np.linalg.svd(matrix)
        return cls(u @ vt, _vec(translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_direction(self, directions: np.ndarray) -> np.ndarray:
        return np.asarray(directions, dtype=np.float64) @ self.rotation.T

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix


def transform_point(t: RigidTransform, p: Vector) -> Point3:
    x, y, z = t.rotation @ _vec(p) + t.translation
    return Point3(float(x), float(y), float(z))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """compose(a, b) applied to p equals a applied to (b applied to p)."""
    return RigidTransform(
        a.rotation @ b.rotation, a.rotation @ b.translation + a.translation
    )


def invert(t: RigidTransform) -> RigidTransform:
    rotation_t = t.rotation.T
    return RigidTransform(rotation_t, -(rotation_t @ t.translation))


# LiDAR (x fwd, y left, z up) to camera optical axes (x right, y down, z fwd)
LIDAR_TO_OPTICAL = np.array(
    [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]
)


def lidar_to_camera(
    baseline: Vector = (0.0, 0.05, 0.0), roll_deg: float = 0.0
) -> RigidTransform:
    """
    Extrinsic from the LiDAR frame into the camera optical frame.

    baseline is the camera centre expressed in the LiDAR frame. roll_deg
    rotates the camera about its optical axis; 90 gives the rotated
    mounting where the LiDAR horizontal axis lies along camera vertical.
    """
    roll = Rotation.from_euler("z", roll_deg, degrees=True).as_matrix()
    rotation = roll @ LIDAR_TO_OPTICAL
    u, _, vt = np.linalg.svd(rotation)
    rotation = u @ vt
    return RigidTransform(rotation, -(rotation @ _vec(baseline)))
