"""Temporally stable parametric face reshaping for portrait videos.

Two stages: (1) video-consistent 3D face fitting (per-frame pose, one shared
identity, per-frame expression), (2) SDF-guided dense contour mapping and
content-aware grid warping of every frame, driven by a single scalar reshape
parameter.
"""

from .camera import Camera, RigidPose, default_camera
from .energies import EnergyWeights, PreviousFrame
from .errors import (ConfigError, DimensionError, GeometryError, MappingError,
                     ModelFormatError, ProjectionError, ReshapeError,
                     SamplingError, TrackingError, WarpError)
from .model import FaceMesh, FaceModel, assemble, load_model, project, reshape, save_model
from .pipeline import PipelineConfig, parse_config, run
from .tracking import FrameObservation, TrackOptions, TrackResult, track

__version__ = "0.1.0"

__all__ = [
    "Camera", "RigidPose", "default_camera",
    "EnergyWeights", "PreviousFrame",
    "ConfigError", "DimensionError", "GeometryError", "MappingError",
    "ModelFormatError", "ProjectionError", "ReshapeError", "SamplingError",
    "TrackingError", "WarpError",
    "FaceMesh", "FaceModel", "assemble", "load_model", "project", "reshape",
    "save_model",
    "PipelineConfig", "parse_config", "run",
    "FrameObservation", "TrackOptions", "TrackResult", "track",
    "__version__",
]
