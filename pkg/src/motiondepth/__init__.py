"""Motion-based monocular depth estimation on video sequences.

A numpy library implementing a pyramidal recurrent depth network with
geometric warping and correlation cost volumes, trained with
hand-derived gradients, plus a synthetic-scene data pipeline and a
small training / evaluation toolchain.
"""

from .geometry import (
    Intrinsics,
    PixelCoord,
    RigidTransform,
    backproject,
    compose,
    invert,
    project,
    relative_motion,
    reproject_coords,
)

__all__ = [
    "Intrinsics",
    "PixelCoord",
    "RigidTransform",
    "backproject",
    "compose",
    "invert",
    "project",
    "relative_motion",
    "reproject_coords",
]

__version__ = "0.1.0"
