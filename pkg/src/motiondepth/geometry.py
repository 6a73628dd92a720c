"""Pinhole camera model, rigid transforms, and frame-to-frame reprojection.

Conventions used throughout the engine:

- Pixel coordinates are (i, j) with i horizontal (column direction) and
  j vertical (row direction).  Arrays are indexed [row=j, col=i].
- Integer coordinates address pixel centers, so an identity warp lands
  exactly on the source grid.
- The camera looks along +z; depth is the z-coordinate in the camera
  frame, in meters.
- A RigidTransform maps coordinates in one camera frame to another as
  p_out = R @ (p_in + t).  The per-step motion of a sequence maps the
  current frame's coordinates to the previous frame's coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import BehindCamera, MissingFile, NonPositiveDepth, ShapeMismatch

# Behind-camera guard (meters): depths at or below this are rejected to
# avoid division blow-ups in the projective division.
EPS_Z = 1e-6

# Relative focal-length mismatch tolerated by the reprojection path,
# which is derived under fx == fy and zero skew.
_FOCAL_TOL = 1e-6


class PixelCoord(NamedTuple):
    """Sub-pixel image location; may lie outside the visible frame."""

    i: float
    j: float


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters; all lengths in pixels.

    fx, fy: focal lengths along the horizontal / vertical axis
    s:      pixel skew
    cx, cy: principal point
    width, height: sensor size in pixels
    """

    fx: float
    fy: float
    s: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")

    @property
    def matrix(self) -> np.ndarray:
        """The 3x3 upper-triangular projection matrix K."""
        return np.array(
            [[self.fx, self.s, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def scaled(self, new_width: int, new_height: int) -> "Intrinsics":
        """Intrinsics after resampling the image to a new size.

        Follows the pixel-center convention: full-resolution coordinate i
        maps to (i + 0.5) * scale - 0.5 in the resized image.
        """
        sx = new_width / self.width
        sy = new_height / self.height
        return Intrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            s=self.s * sx,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            width=new_width,
            height=new_height,
        )

    def halved(self) -> "Intrinsics":
        """Intrinsics of the next (2x downsampled) pyramid level."""
        return self.scaled(self.width // 2, self.height // 2)


def save_camera_file(k: Intrinsics, path) -> None:
    """Write a one-line ``camera.txt``: fx fy s cx cy width height."""
    fields = [repr(float(v)) for v in (k.fx, k.fy, k.s, k.cx, k.cy)]
    fields += [str(k.width), str(k.height)]
    Path(path).write_text(" ".join(fields) + "\n")


def load_camera_file(path) -> Intrinsics:
    """Parse a one-line ``camera.txt`` written by save_camera_file."""
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"camera file not found: {path}")
    parts = p.read_text().split()
    if len(parts) != 7:
        raise ValueError(f"camera file {path} must hold 7 fields, got {len(parts)}")
    fx, fy, s, cx, cy = (float(p) for p in parts[:5])
    return Intrinsics(fx, fy, s, cx, cy, int(parts[5]), int(parts[6]))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation applied as p_out = R @ (p_in + t)."""

    rotation: np.ndarray
    translation: np.ndarray
    _skip_checks: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not self._skip_checks:
            err = np.abs(r.T @ r - np.eye(3)).max()
            if err >= 1e-6:
                raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
            if np.linalg.det(r) <= 0:
                raise ValueError("rotation must be proper (det +1)")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3), _skip_checks=True)

    @property
    def is_identity(self) -> bool:
        """Exact identity check; used to keep identity warps bit-exact."""
        return bool((self.rotation == np.eye(3)).all() and (self.translation == 0.0).all())

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        p = np.asarray(points, dtype=np.float64)
        return (p + self.translation) @ self.rotation.T

    @staticmethod
    def from_world_pose(position, quaternion) -> "RigidTransform":
        """Camera-to-world transform from a world-frame pose.

        position: camera origin in world coordinates
        quaternion: camera orientation as (qw, qx, qy, qz), unit norm
        """
        r = rotation_from_quaternion(*quaternion)
        p = np.asarray(position, dtype=np.float64).reshape(3)
        return RigidTransform(r, r.T @ p)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a: (a o b)(p) = a(b(p))."""
    rot = a.rotation @ b.rotation
    t = b.translation + b.rotation.T @ a.translation
    return RigidTransform(rot, t, _skip_checks=True)


def invert(a: RigidTransform) -> RigidTransform:
    """Inverse transform: invert(a)(a(p)) = p."""
    return RigidTransform(a.rotation.T, -(a.rotation @ a.translation), _skip_checks=True)


def relative_motion(pose_prev: RigidTransform, pose_cur: RigidTransform) -> RigidTransform:
    """Per-step motion mapping current-frame coordinates to previous-frame ones.

    Both arguments are camera-to-world transforms of consecutive frames.
    """
    return compose(invert(pose_prev), pose_cur)


def rotation_from_quaternion(qw: float, qx: float, qy: float, qz: float) -> np.ndarray:
    """3x3 rotation matrix of a quaternion; normalizes the input."""
    n = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if n == 0:
        raise ValueError("zero quaternion")
    qw, qx, qy, qz = qw / n, qx / n, qy / n, qz / n
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ],
        dtype=np.float64,
    )


def rotation_to_axis_angle(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector (radians) of a rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-12:
        return np.zeros(3)
    axis_raw = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_theta = np.sin(theta)
    if abs(sin_theta) < 1e-8:
        # Near pi: fall back to the dominant diagonal column.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = m[:, k] / axis[k]
        return theta * axis / np.linalg.norm(axis)
    return theta * axis_raw / (2.0 * sin_theta)


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (qw, qx, qy, qz) with qw >= 0 of a rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    trace = np.trace(r)
    if trace > 0:
        s = np.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    else:
        k = int(np.argmax(np.diag(r)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = np.sqrt(max(r[k, k] - r[i, i] - r[j, j] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[j, i] - r[i, j]) / s
        q[1 + k] = 0.25 * s
        q[1 + i] = (r[i, k] + r[k, i]) / s
        q[1 + j] = (r[j, k] + r[k, j]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def require_reprojectable(k: Intrinsics) -> float:
    """Check the fx == fy, zero-skew assumption of the reprojection math.

    Returns the common focal length.
    """
    if abs(k.fx - k.fy) / k.fx >= _FOCAL_TOL:
        raise ValueError(
            f"reprojection requires square pixels (fx={k.fx}, fy={k.fy} differ)"
        )
    if k.s != 0.0:
        raise ValueError(f"reprojection requires zero skew, got s={k.s}")
    return k.fx


def project(point, k: Intrinsics):
    """Project a camera-frame 3D point to the sensor.

    Returns (PixelCoord, depth) where depth is the point's z-coordinate.
    Raises NonPositiveDepth when z <= EPS_Z.
    """
    x, y, z = np.asarray(point, dtype=np.float64).reshape(3)
    if z <= EPS_Z:
        raise NonPositiveDepth(f"point depth {z} <= {EPS_Z}")
    i = (k.fx * x + k.s * y) / z + k.cx
    j = (k.fy * y) / z + k.cy
    return PixelCoord(float(i), float(j)), float(z)


def backproject(p, depth: float, k: Intrinsics) -> np.ndarray:
    """Camera-frame 3D point of a pixel at a known depth.

    Exact inverse of `project` for the full upper-triangular K, so the
    round trip holds for any skew; the zero-skew case reduces to
    ((i - cx)/fx, (j - cy)/fy, 1) * depth.
    """
    if depth <= EPS_Z:
        raise NonPositiveDepth(f"depth {depth} <= {EPS_Z}")
    i, j = float(p[0]), float(p[1])
    y = (j - k.cy) / k.fy * depth
    x = ((i - k.cx) * depth - k.s * y) / k.fx
    return np.array([x, y, depth], dtype=np.float64)


def reproject_coords(p_t, d_t: float, motion: RigidTransform, k: Intrinsics):
    """Map a pixel + depth in the current frame to the previous frame.

    Returns ((i_prev, j_prev), d_prev): the location where the same 3D
    point projects in the previous camera, and its depth there.  With
    identity motion the input is returned unchanged (exactly).
    Raises BehindCamera when the transformed point has z <= EPS_Z.
    """
    if d_t <= EPS_Z:
        raise NonPositiveDepth(f"depth {d_t} <= {EPS_Z}")
    f = require_reprojectable(k)
    if motion.is_identity:
        return PixelCoord(float(p_t[0]), float(p_t[1])), float(d_t)
    i, j = float(p_t[0]), float(p_t[1])
    direction = np.array([(i - k.cx) / f, (j - k.cy) / f, 1.0])
    p_prev = motion.rotation @ (direction * d_t + motion.translation)
    z = p_prev[2]
    if z <= EPS_Z:
        raise BehindCamera(f"reprojected depth {z} <= {EPS_Z}")
    i_prev = f * p_prev[0] / z + k.cx
    j_prev = f * p_prev[1] / z + k.cy
    return PixelCoord(float(i_prev), float(j_prev)), float(z)


def reprojection_field(depth: np.ndarray, motion: RigidTransform, k: Intrinsics):
    """Vectorized reprojection of every pixel of a depth map.

    depth: (H, W) or (H, W, 1) array of per-pixel depths (> 0).

    Returns (i_prev, j_prev, d_prev, valid), each (H, W) float64 /
    bool.  Pixels whose transformed point falls behind the previous
    camera are flagged invalid instead of raising; their coordinates
    are set to -1 so any bilinear gather treats them as out of frame.
    """
    f = require_reprojectable(k)
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3:
        if d.shape[2] != 1:
            raise ShapeMismatch(f"depth map must have one channel, got {d.shape}")
        d = d[:, :, 0]
    h, w = d.shape
    jj, ii = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    if motion.is_identity:
        valid = np.ones((h, w), dtype=bool)
        return ii, jj, d.copy(), valid
    dir_x = (ii - k.cx) / f
    dir_y = (jj - k.cy) / f
    px = dir_x * d + motion.translation[0]
    py = dir_y * d + motion.translation[1]
    pz = d + motion.translation[2]
    r = motion.rotation
    qx = r[0, 0] * px + r[0, 1] * py + r[0, 2] * pz
    qy = r[1, 0] * px + r[1, 1] * py + r[1, 2] * pz
    qz = r[2, 0] * px + r[2, 1] * py + r[2, 2] * pz
    valid = qz > EPS_Z
    safe_z = np.where(valid, qz, 1.0)
    i_prev = np.where(valid, f * qx / safe_z + k.cx, -1.0)
    j_prev = np.where(valid, f * qy / safe_z + k.cy, -1.0)
    d_prev = np.where(valid, qz, 0.0)
    return i_prev, j_prev, d_prev, valid
