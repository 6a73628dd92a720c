"""Exception types raised by the depth engine.

All engine errors derive from MotionDepthError so callers can catch the
whole family; the concrete subclasses mirror the failure modes of
individual operations (geometry guards, shape checks, data validation).
"""


class MotionDepthError(Exception):
    """Base class for all engine errors."""


class NonPositiveDepth(MotionDepthError):
    """A depth value at or below the behind-camera guard (1e-6 m)."""


class BehindCamera(MotionDepthError):
    """A reprojected point fell behind the previous camera."""


class ShapeMismatch(MotionDepthError):
    """Tensor shapes incompatible with the requested operation."""


class LengthMismatch(MotionDepthError):
    """Feature vectors of different lengths given to a correlation."""


class DegenerateMotion(MotionDepthError):
    """Camera translation too small for triangulation."""


class EmptyMask(MotionDepthError):
    """No valid pixels to evaluate metrics on."""


class MissingFile(MotionDepthError):
    """A dataset file required by the layout is absent."""


class PoseCountMismatch(MotionDepthError):
    """Pose row count does not match the number of frames on disk."""


class CorruptDepth(MotionDepthError):
    """A stored depth map holds NaN or non-positive values."""


class DegenerateSpec(MotionDepthError):
    """A synthetic scene description that cannot be rendered."""


class NonFiniteLoss(MotionDepthError):
    """Training loss became NaN or infinite; aborts with diagnostics."""


class CorruptCheckpoint(MotionDepthError):
    """Checkpoint bytes do not match the expected layout."""
