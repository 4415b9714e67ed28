"""Polar intensity images, raster/polar mapping and overlap gating."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

Orientation = Literal["horizontal", "vertical"]

# slack for bin centres that sit exactly on a gate boundary
_GATE_EPS = 1e-12


@dataclass(frozen=True)
class SonarIntrinsics:
    """Raster geometry of one imaging sonar.

    ``angular_aperture`` is the swept span centred on zero; ``vertical_aperture``
    is the beam width along the unmeasured axis.  Both in radians.
    """

    min_range: float = 0.0
    max_range: float = 10.0
    num_range_bins: int = 512
    num_beams: int = 256
    angular_aperture: float = math.radians(130.0)
    vertical_aperture: float = math.radians(20.0)

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_range < self.max_range:
            raise ValueError("need 0 <= min_range < max_range")
        if self.num_range_bins < 2 or self.num_beams < 2:
            raise ValueError("need at least 2 range bins and 2 beams")
        for name in ("angular_aperture", "vertical_aperture"):
            value = getattr(self, name)
            if not 0.0 < value < math.pi:
                raise ValueError(f"{name} must lie in (0, pi)")

    @property
    def range_resolution(self) -> float:
        return (self.max_range - self.min_range) / self.num_range_bins

    @property
    def beam_spacing(self) -> float:
        return self.angular_aperture / self.num_beams

    def range_centers(self) -> np.ndarray:
        i = np.arange(self.num_range_bins, dtype=np.float64)
        return self.min_range + (i + 0.5) * (self.max_range - self.min_range) / self.num_range_bins

    def beam_angles(self) -> np.ndarray:
        j = np.arange(self.num_beams, dtype=np.float64)
        return -0.5 * self.angular_aperture + (j + 0.5) * self.angular_aperture / self.num_beams

    def to_dict(self) -> dict:
        return {
            "min_range": self.min_range,
            "max_range": self.max_range,
            "num_range_bins": self.num_range_bins,
            "num_beams": self.num_beams,
            "angular_aperture": self.angular_aperture,
            "vertical_aperture": self.vertical_aperture,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SonarIntrinsics:
        """Build from a mapping; apertures may be given as ``*_deg``."""
        kwargs = {}
        for key in ("min_range", "max_range"):
            if key in data:
                kwargs[key] = float(data[key])
        for key in ("num_range_bins", "num_beams"):
            if key in data:
                kwargs[key] = int(data[key])
        for key in ("angular_aperture", "vertical_aperture"):
            if key in data:
                kwargs[key] = float(data[key])
            elif key + "_deg" in data:
                kwargs[key] = math.radians(float(data[key + "_deg"]))
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class PolarImage:
    """Range x beam intensity raster; rows are range bins, columns beams."""

    intrinsics: SonarIntrinsics
    intensities: np.ndarray
    orientation: Orientation = "horizontal"

    def __post_init__(self) -> None:
        data = np.array(self.intensities, dtype=np.float64)
        k = self.intrinsics
        if data.shape != (k.num_range_bins, k.num_beams):
            raise ValueError(
                f"intensity grid {data.shape} does not match intrinsics "
                f"({k.num_range_bins}, {k.num_beams})"
            )
        if not np.all(np.isfinite(data)) or np.any(data < 0.0):
            raise ValueError("intensities must be finite and non-negative")
        if self.orientation not in ("horizontal", "vertical"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        data.setflags(write=False)
        object.__setattr__(self, "intensities", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape

    def with_intensities(self, intensities: np.ndarray) -> PolarImage:
        return PolarImage(self.intrinsics, intensities, self.orientation)


@dataclass(frozen=True)
class Detection:
    """A contact pixel.

    ``angle`` is the bearing for a horizontal image and the swept
    (elevation-plane) angle for a vertical one.
    """

    range_bin: int
    beam_index: int
    range: float
    angle: float
    intensity: float = 0.0

    @property
    def key(self) -> tuple[int, int]:
        return (self.range_bin, self.beam_index)


def bin_to_polar(i: int, j: int, k: SonarIntrinsics) -> tuple[float, float]:
    """Centre of raster cell ``(i, j)`` as ``(range, angle)``."""
    if not (0 <= i < k.num_range_bins and 0 <= j < k.num_beams):
        raise IndexError(f"cell ({i}, {j}) outside {k.num_range_bins}x{k.num_beams} raster")
    rng = k.min_range + (i + 0.5) * (k.max_range - k.min_range) / k.num_range_bins
    ang = -0.5 * k.angular_aperture + (j + 0.5) * k.angular_aperture / k.num_beams
    return rng, ang


def overlap_mask(own: SonarIntrinsics, companion: SonarIntrinsics) -> np.ndarray:
    """Boolean mask over ``own`` beams lying inside the companion's vertical aperture."""
    half = 0.5 * companion.vertical_aperture
    return np.abs(own.beam_angles()) <= half + _GATE_EPS
