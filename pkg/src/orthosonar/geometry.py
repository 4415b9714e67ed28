"""Spherical/Cartesian conversions, rigid transforms and match fusion.

Frames follow the horizontal sonar: +x forward, +y left, +z up.  Bearing is
measured in the x-y plane from +x toward +y, elevation from the x-y plane
toward +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial.transform import Rotation

if TYPE_CHECKING:
    from .sonar_image import Detection

_ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for degenerate geometric inputs."""


@dataclass(frozen=True)
class SphericalPoint:
    range: float
    bearing: float
    elevation: float

    def __post_init__(self) -> None:
        if not self.range >= 0.0:
            raise ValueError(f"range must be >= 0, got {self.range}")
        for name in ("bearing", "elevation"):
            value = getattr(self, name)
            if not -math.pi <= value < math.pi:
                raise ValueError(f"{name} must lie in [-pi, pi), got {value}")


@dataclass(frozen=True)
class CartesianPoint:
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("Cartesian components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def _wrap_angle(angle: np.ndarray) -> np.ndarray:
    # arctan2 returns (-pi, pi]; fold +pi onto -pi
    return np.where(angle >= np.pi, angle - 2.0 * np.pi, angle)


def spherical_to_cartesian_array(
    ranges: np.ndarray, bearings: np.ndarray, elevations: np.ndarray
) -> np.ndarray:
    """Vectorised spherical to Cartesian conversion, returns ``(N, 3)``."""
    r = np.asarray(ranges, dtype=np.float64)
    theta = np.asarray(bearings, dtype=np.float64)
    phi = np.asarray(elevations, dtype=np.float64)
    cos_phi = np.cos(phi)
    return np.stack(
        [r * cos_phi * np.cos(theta), r * cos_phi * np.sin(theta), r * np.sin(phi)],
        axis=-1,
    )


def cartesian_to_spherical_array(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised inverse of :func:`spherical_to_cartesian_array`.

    Points on the z axis get bearing 0.  Zero-norm points raise.
    """
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    r = np.hypot(rho, z)
    if np.any(r == 0.0):
        raise GeometryError("degenerate point")
    bearing = np.where(rho == 0.0, 0.0, _wrap_angle(np.arctan2(y, x)))
    elevation = _wrap_angle(np.arctan2(z, rho))
    return r, bearing, elevation


def spherical_to_cartesian(p: SphericalPoint) -> CartesianPoint:
    x, y, z = spherical_to_cartesian_array(p.range, p.bearing, p.elevation)
    return CartesianPoint(float(x), float(y), float(z))


def cartesian_to_spherical(p: CartesianPoint) -> SphericalPoint:
    r, theta, phi = cartesian_to_spherical_array(p.as_array())
    return SphericalPoint(float(r), float(theta), float(phi))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation followed by translation, ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        rot = np.array(self.rotation, dtype=np.float64)
        trans = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("transform entries must be finite")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_rpy(
        cls,
        roll: float = 0.0,
        pitch: float = 0.0,
        yaw: float = 0.0,
        translation=(0.0, 0.0, 0.0),
        degrees: bool = False,
    ) -> RigidTransform:
        """Build from extrinsic roll (x), pitch (y), yaw (z) angles."""
        rot = Rotation.from_euler("xyz", [roll, pitch, yaw], degrees=degrees).as_matrix()
        return cls(rot, np.asarray(translation, dtype=np.float64))

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> RigidTransform:
        """Accepts ``rotation`` (3x3) or ``rpy_deg`` plus ``translation``."""
        translation = data.get("translation", [0.0, 0.0, 0.0])
        if "rotation" in data:
            return cls(np.asarray(data["rotation"], dtype=np.float64), translation)
        rpy = data.get("rpy_deg", [0.0, 0.0, 0.0])
        return cls.from_rpy(*rpy, translation=translation, degrees=True)

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def _default_mount() -> RigidTransform:
    # vertical sonar 10 cm above the horizontal one, rolled +90 deg about x
    return RigidTransform.from_rpy(math.pi / 2, 0.0, 0.0, translation=(0.0, 0.0, 0.10))


@dataclass(frozen=True)
class SonarExtrinsics:
    """Mounting of the vertical sonar relative to the horizontal sonar."""

    transform_v_to_h: RigidTransform = field(default_factory=_default_mount)

    @property
    def swept_angle_kind(self) -> str:
        """Which horizontal-frame angle the vertical sonar's swept plane maps onto.

        The swept plane is the vertical sonar's own x-y plane; its normal is
        the local z axis.  If that normal lands closer to the horizontal
        frame's z axis the swept angle is a bearing, otherwise an elevation.
        """
        normal = self.transform_v_to_h.rotation[:, 2]
        return "bearing" if abs(normal[2]) >= abs(normal[1]) else "elevation"

    def to_dict(self) -> dict:
        return self.transform_v_to_h.to_dict()

    @classmethod
    def from_dict(cls, data: dict) -> SonarExtrinsics:
        return cls(RigidTransform.from_dict(data))


def compensate_array(
    ranges: np.ndarray, angles: np.ndarray, extrinsics: SonarExtrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Move vertical-sonar (range, swept angle) pairs into the horizontal frame.

    The unmeasured angle is taken as zero.  Returns the new ranges and the
    swept angle re-expressed in the horizontal frame.
    """
    local = spherical_to_cartesian_array(ranges, angles, np.zeros_like(np.asarray(ranges, dtype=float)))
    moved = extrinsics.transform_v_to_h.apply(local)
    r, bearing, elevation = cartesian_to_spherical_array(moved)
    angle = bearing if extrinsics.swept_angle_kind == "bearing" else elevation
    return r, angle


def compensate_extrinsics(d: Detection, e: SonarExtrinsics) -> Detection:
    """Return ``d`` re-expressed in the horizontal sonar frame."""
    r, angle = compensate_array(np.array([d.range]), np.array([d.angle]), e)
    return replace(d, range=float(r[0]), angle=float(angle[0]))


def fuse_match(z_h: Detection, z_v: Detection) -> SphericalPoint:
    """Mean range with the horizontal bearing and the vertical elevation."""
    return SphericalPoint(0.5 * (z_h.range + z_v.range), z_h.angle, z_v.angle)


def transform_to_world(cloud: np.ndarray, pose: RigidTransform) -> np.ndarray:
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    return pose.apply(pts)
