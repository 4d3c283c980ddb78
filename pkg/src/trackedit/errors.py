"""Exception types shared across the package.

All errors derive from ``TrackEditError`` so callers can catch the whole
family; each subclass mirrors one failure mode of the public API.
"""


class TrackEditError(ValueError):
    """Base class for all trackedit errors."""


# geometry
class BehindCamera(TrackEditError):
    """Point has non-positive depth in the camera frame."""


class NonPositiveDepth(TrackEditError):
    """Unprojection requested for a depth <= 0."""


class DegenerateConfiguration(TrackEditError):
    """Homography estimation from a rank-deficient correspondence set."""


# project / file I/O
class MissingFile(TrackEditError):
    """A required project file or directory is absent."""


class SchemaViolation(TrackEditError):
    """A file parsed but violated the documented schema."""


class ShapeMismatch(TrackEditError):
    """Array dimensions are inconsistent across project members."""


# edit engine
class EmptySelection(TrackEditError):
    """A selection resolved to zero tracks."""


class UnknownObject(TrackEditError):
    """An object id was requested that no track carries."""


class CountMismatch(TrackEditError):
    """Replacement track count does not match the selected object."""


class WouldBeEmpty(TrackEditError):
    """Dropping the requested tracks would leave an empty set."""


# augmentation
class TooFewTracks(TrackEditError):
    """Homography perturbation needs at least 4 tracks in the subset."""


class VideoTooShort(TrackEditError):
    """The source video cannot fit two clips under the sampling policy."""


# toy training
class IndivisibleDims(TrackEditError):
    """Video dimensions are not divisible by the patch size."""


# metrics
class EmptyMask(TrackEditError):
    """A masked metric was requested with an all-zero mask."""


class FrameTooSmall(TrackEditError):
    """Frame is smaller than the SSIM window."""


# preview
class MissingDepth(TrackEditError):
    """Preview rendering requires depth maps the project does not have."""
