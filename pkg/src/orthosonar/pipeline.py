"""Per-frame reconstruction and multi-frame map accumulation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Sequence

import numpy as np

from . import association as assoc
from .association import Cluster, DbscanParams, Match
from .cfar import CfarParams, detect
from .geometry import (
    RigidTransform,
    SonarExtrinsics,
    compensate_array,
    spherical_to_cartesian_array,
    transform_to_world,
)
from .sonar_image import Detection, PolarImage, overlap_mask

logger = logging.getLogger(__name__)

_GATE_EPS = 1e-12


class ConfigError(ValueError):
    """Raised for malformed configuration mappings."""


@dataclass(frozen=True)
class PipelineConfig:
    cfar: CfarParams = field(default_factory=CfarParams)
    dbscan: DbscanParams = field(default_factory=DbscanParams)
    threshold: float = 0.1
    mode: str = "brute"
    sample_count: int = 10
    kernel_halfwidth: int = 2
    extrinsics: SonarExtrinsics = field(default_factory=SonarExtrinsics)
    clustering_enabled: bool = True
    cluster_gate: float = 1.0
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.mode not in ("brute", "fast"):
            raise ValueError(f"mode must be 'brute' or 'fast', got {self.mode!r}")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.kernel_halfwidth < 1:
            raise ValueError("kernel_halfwidth must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "cfar": vars(self.cfar).copy(),
            "dbscan": vars(self.dbscan).copy(),
            "threshold": self.threshold,
            "mode": self.mode,
            "sample_count": self.sample_count,
            "kernel_halfwidth": self.kernel_halfwidth,
            "extrinsics": self.extrinsics.to_dict(),
            "clustering_enabled": self.clustering_enabled,
            "cluster_gate": self.cluster_gate,
            "seed": self.seed,
            "workers": self.workers,
        }

    def merged(self, overrides: dict[str, Any] | None) -> PipelineConfig:
        """Return a copy with ``overrides`` (same layout as :meth:`to_dict`) applied."""
        if not overrides:
            return self
        known = {f.name for f in fields(self)}
        changes: dict[str, Any] = {}
        for key, value in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config field '{key}'")
            try:
                if key == "cfar":
                    changes[key] = replace(self.cfar, **_checked(value, CfarParams, key))
                elif key == "dbscan":
                    changes[key] = replace(self.dbscan, **_checked(value, DbscanParams, key))
                elif key == "extrinsics":
                    changes[key] = SonarExtrinsics.from_dict(value)
                elif key == "clustering_enabled":
                    changes[key] = _parse_flag(value)
                else:
                    current = getattr(self, key)
                    changes[key] = type(current)(value)
            except ConfigError:
                raise
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"field '{key}': {exc}") from exc
        try:
            return replace(self, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _checked(value: Any, cls: type, key: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"field '{key}' must be an object")
    allowed = {f.name for f in fields(cls)}
    for sub in value:
        if sub not in allowed:
            raise ConfigError(f"unknown config field '{key}.{sub}'")
    return value


def _parse_flag(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("on", "true", "yes", "1"):
        return True
    if isinstance(value, str) and value.lower() in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"cannot read {value!r} as on/off")


@dataclass(frozen=True)
class FramePair:
    horizontal: PolarImage
    vertical: PolarImage
    pose: RigidTransform = field(default_factory=RigidTransform)


@dataclass
class FrameResult:
    """Intermediate products of one reconstructed frame, kept for diagnostics."""

    points: np.ndarray
    matches: list[Match]
    detections_h: list[Detection]
    detections_v: list[Detection]
    clusters_h: list[Cluster]
    clusters_v: list[Cluster]
    cluster_pairs: list[tuple[Cluster, Cluster, float]]


def compensate_detections(
    detections: Sequence[Detection], extrinsics: SonarExtrinsics, elevation_limit: float | None = None
) -> list[Detection]:
    """Move vertical detections into the horizontal frame.

    When ``elevation_limit`` is given, detections whose compensated angle
    falls outside ``+-elevation_limit`` are dropped.
    """
    if not detections:
        return []
    ranges = np.array([d.range for d in detections])
    angles = np.array([d.angle for d in detections])
    r, a = compensate_array(ranges, angles, extrinsics)
    out = []
    for d, rr, aa in zip(detections, r, a):
        if elevation_limit is not None and abs(aa) > elevation_limit + _GATE_EPS:
            continue
        out.append(replace(d, range=float(rr), angle=float(aa)))
    return out


def fuse_matches(matches: Sequence[Match]) -> np.ndarray:
    """Cartesian points for a batch of matches, ``(N, 3)``."""
    if not matches:
        return np.zeros((0, 3))
    r = np.array([0.5 * (m.h.range + m.v.range) for m in matches])
    theta = np.array([m.h.angle for m in matches])
    phi = np.array([m.v.angle for m in matches])
    return spherical_to_cartesian_array(r, theta, phi)


def reconstruct_frame_detailed(
    frame: FramePair, cfg: PipelineConfig, seed: int | Sequence[int] | None = None
) -> FrameResult:
    h_img, v_img = frame.horizontal, frame.vertical
    mask_h = overlap_mask(h_img.intrinsics, v_img.intrinsics)
    mask_v = overlap_mask(v_img.intrinsics, h_img.intrinsics)
    det_h = detect(h_img, cfg.cfar, mask_h)
    det_v_raw = detect(v_img, cfg.cfar, mask_v)
    det_v = compensate_detections(det_v_raw, cfg.extrinsics, 0.5 * h_img.intrinsics.vertical_aperture)

    if cfg.clustering_enabled:
        clusters_h, _ = assoc.dbscan(det_h, cfg.dbscan)
        clusters_v, _ = assoc.dbscan(det_v, cfg.dbscan)
        pairs = assoc.associate_clusters(clusters_h, clusters_v, cfg.cluster_gate)
    else:
        clusters_h = assoc.pseudo_cluster(det_h)
        clusters_v = assoc.pseudo_cluster(det_v)
        pairs = [(clusters_h[0], clusters_v[0], 0.0)] if clusters_h and clusters_v else []

    matches = assoc.associate_features(
        pairs,
        h_img,
        v_img,
        mode=cfg.mode,
        threshold=cfg.threshold,
        sample_count=cfg.sample_count,
        seed=cfg.seed if seed is None else seed,
        kernel_halfwidth=cfg.kernel_halfwidth,
        workers=cfg.workers,
    )
    logger.debug(
        "frame: %d/%d detections, %d/%d clusters, %d pairs, %d matches",
        len(det_h), len(det_v), len(clusters_h), len(clusters_v), len(pairs), len(matches),
    )
    return FrameResult(fuse_matches(matches), matches, det_h, det_v, clusters_h, clusters_v, pairs)


def reconstruct_frame(frame: FramePair, cfg: PipelineConfig) -> np.ndarray:
    """3D points, in the robot frame, for one concurrent image pair."""
    return reconstruct_frame_detailed(frame, cfg).points


def frame_seed(seed: int, k: int) -> int | tuple[int, int]:
    """Fast-matching seed for frame ``k``; frame 0 uses ``seed`` itself."""
    return seed if k == 0 else (seed, k)


def accumulate_map(frames: Sequence[FramePair], cfg: PipelineConfig) -> np.ndarray:
    """Union of every frame's cloud mapped into the world frame by its pose.

    Each frame gets its own fast-matching seed from :func:`frame_seed`.
    """
    clouds = []
    for k, frame in enumerate(frames):
        res = reconstruct_frame_detailed(frame, cfg, seed=frame_seed(cfg.seed, k))
        clouds.append(transform_to_world(res.points, frame.pose))
    return np.concatenate(clouds) if clouds else np.zeros((0, 3))
