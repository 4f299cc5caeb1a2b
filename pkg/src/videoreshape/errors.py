"""Exception hierarchy shared across the package.

Exit-code mapping lives in the CLI: ConfigError -> 1, TrackingError -> 2,
WarpError -> 3.
"""


class ReshapeError(Exception):
    """Base class for all package errors."""


class ModelFormatError(ReshapeError):
    """Model file is malformed; message names the offending section."""


class DimensionError(ReshapeError):
    """Array sizes are inconsistent with the declared model dimensions."""


class ProjectionError(ReshapeError):
    """A vertex projected with nonpositive camera depth."""


class SamplingError(ReshapeError):
    """Flow sampled outside the image."""


class GeometryError(ReshapeError):
    """Degenerate geometry (empty raster mask, empty silhouette, ...)."""


class MappingError(ReshapeError):
    """Dense contour mapping failed for too many pixels."""


class TrackingError(ReshapeError):
    """A tracking phase diverged or could not run."""


class WarpError(ReshapeError):
    """Warping stage failed (too few MLS handles, ...)."""


class ConfigError(ReshapeError):
    """Bad configuration or missing/ill-formed inputs."""
