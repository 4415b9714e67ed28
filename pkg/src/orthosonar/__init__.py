"""3D reconstruction from a pair of orthogonally mounted imaging sonars."""

from .association import DbscanParams
from .cfar import CfarParams
from .geometry import RigidTransform, SonarExtrinsics
from .pipeline import FramePair, PipelineConfig, accumulate_map, reconstruct_frame
from .sonar_image import Detection, PolarImage, SonarIntrinsics

__version__ = "0.1.0"

__all__ = [
    "CfarParams",
    "DbscanParams",
    "Detection",
    "FramePair",
    "PipelineConfig",
    "PolarImage",
    "RigidTransform",
    "SonarExtrinsics",
    "SonarIntrinsics",
    "accumulate_map",
    "reconstruct_frame",
]
