"""Parameter-free geometric layers: motion warping and the cost volume.

Both layers connect two frames of a sequence.  ``warp`` pulls data from
the previous frame onto the current pixel grid using the current depth
estimate and the relative camera motion; ``cost_volume`` scores feature
similarity over a square neighbourhood of pixel offsets.

The warp is deliberately non-differentiable with respect to the depth
map that drives the sampling coordinates: its backward pass routes
gradients only into the sampled source values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import LengthMismatch, ShapeMismatch
from .geometry import Intrinsics, RigidTransform, reprojection_field, require_reprojectable


@dataclass
class WarpResult:
    """Warped tensor plus a {0,1} mask of pixels sampled inside the frame."""

    warped: np.ndarray
    validity: np.ndarray


@dataclass
class WarpPlan:
    """Frozen bilinear sampling plan produced from one depth/motion pair.

    Index arrays are flat offsets into an (H*W, C) source view; weights
    are zeroed wherever sampling left the frame, so applying a plan
    never touches out-of-frame texture.  ``depth_scale``/``t_z`` carry
    the per-pixel linear map that re-expresses a sampled z-depth in the
    frame the plan warps into.
    """

    height: int
    width: int
    idx00: np.ndarray
    idx01: np.ndarray
    idx10: np.ndarray
    idx11: np.ndarray
    w00: np.ndarray
    w01: np.ndarray
    w10: np.ndarray
    w11: np.ndarray
    valid: np.ndarray
    depth_scale: np.ndarray
    t_z: float


def build_warp_plan(depth_t, motion: RigidTransform, k: Intrinsics) -> WarpPlan:
    """Resolve per-pixel source coordinates for warping frame t-1 onto frame t.

    depth_t: (H, W) or (H, W, 1) positive depths on the current grid.
    """
    i_prev, j_prev, _, valid = reprojection_field(depth_t, motion, k)
    h, w = i_prev.shape
    inside = valid & (i_prev >= 0.0) & (i_prev <= w - 1.0) & (j_prev >= 0.0) & (j_prev <= h - 1.0)

    ic = np.where(inside, i_prev, 0.0)
    jc = np.where(inside, j_prev, 0.0)
    i0 = np.floor(ic).astype(np.int64)
    j0 = np.floor(jc).astype(np.int64)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    fi = ic - i0
    fj = jc - j0

    mask = inside.astype(np.float64)
    w00 = (1.0 - fi) * (1.0 - fj) * mask
    w01 = fi * (1.0 - fj) * mask
    w10 = (1.0 - fi) * fj * mask
    w11 = fi * fj * mask

    f = require_reprojectable(k)
    r = motion.rotation
    scale = (
        r[0, 2] * (i_prev - k.cx) / f
        + r[1, 2] * (j_prev - k.cy) / f
        + r[2, 2]
    )
    return WarpPlan(
        height=h,
        width=w,
        idx00=j0 * w + i0,
        idx01=j0 * w + i1,
        idx10=j1 * w + i0,
        idx11=j1 * w + i1,
        w00=w00,
        w01=w01,
        w10=w10,
        w11=w11,
        valid=inside.astype(np.float32),
        depth_scale=scale,
        t_z=float(motion.translation[2]),
    )


def _check_source(plan: WarpPlan, source):
    source = np.asarray(source)
    if source.ndim != 3:
        raise ShapeMismatch(f"warp source must be (H, W, C), got shape {source.shape}")
    if source.shape[:2] != (plan.height, plan.width):
        raise ShapeMismatch(
            f"warp source is {source.shape[:2]}, plan was built for "
            f"{(plan.height, plan.width)}"
        )
    return source


def apply_warp_plan(plan: WarpPlan, source, transform_depth_values=False):
    """Gather source values through the plan's bilinear taps.

    With transform_depth_values, the single-channel input is treated as
    a z-depth stored in the source frame and is converted to a z-depth
    in the frame the plan targets.
    """
    source = _check_source(plan, source)
    if transform_depth_values and source.shape[2] != 1:
        raise ShapeMismatch("depth transform expects a single-channel source")
    flat = source.reshape(-1, source.shape[2])
    dt = source.dtype if source.dtype in (np.float32, np.float64) else np.float64
    gathered = (
        plan.w00.astype(dt)[..., None] * flat[plan.idx00]
        + plan.w01.astype(dt)[..., None] * flat[plan.idx01]
        + plan.w10.astype(dt)[..., None] * flat[plan.idx10]
        + plan.w11.astype(dt)[..., None] * flat[plan.idx11]
    )
    if transform_depth_values:
        zeroer = plan.valid.astype(dt)[..., None]
        gathered = (gathered * plan.depth_scale.astype(dt)[..., None] - plan.t_z) * zeroer
    return gathered


def apply_warp_plan_backward(plan: WarpPlan, grad_out, source_shape, transform_depth_values=False):
    """Scatter output gradients back through the plan into the source."""
    g = np.asarray(grad_out)
    dt = g.dtype
    if transform_depth_values:
        g = g * plan.depth_scale.astype(dt)[..., None] * plan.valid.astype(dt)[..., None]
    c = source_shape[2]
    gflat = g.reshape(-1, c)
    gsrc = np.zeros((source_shape[0] * source_shape[1], c), dtype=dt)
    for idx, wgt in (
        (plan.idx00, plan.w00),
        (plan.idx01, plan.w01),
        (plan.idx10, plan.w10),
        (plan.idx11, plan.w11),
    ):
        np.add.at(gsrc, idx.reshape(-1), gflat * wgt.astype(dt).reshape(-1, 1))
    return gsrc.reshape(source_shape)


def warp(source_prev, depth_t, motion: RigidTransform, k: Intrinsics, transform_depth_values=False):
    """Warp the previous frame's tensor onto the current pixel grid.

    Sampling coordinates come from reprojecting each current pixel with
    depth_t; values are gathered from source_prev by bilinear
    interpolation, zero-filled outside the frame.  Returns
    (WarpResult, cache).  The backward pass sends gradients into
    source_prev only; the gradient w.r.t. depth_t is identically zero.
    """
    source_prev = np.asarray(source_prev)
    depth_arr = np.asarray(depth_t)
    d_hw = depth_arr[..., 0] if depth_arr.ndim == 3 else depth_arr
    if d_hw.shape != source_prev.shape[:2]:
        raise ShapeMismatch(
            f"depth grid {d_hw.shape} does not match source grid {source_prev.shape[:2]}"
        )
    plan = build_warp_plan(depth_arr, motion, k)
    warped = apply_warp_plan(plan, source_prev, transform_depth_values)
    result = WarpResult(warped=warped, validity=plan.valid[..., None].copy())
    cache = (plan, source_prev.shape, depth_arr.shape, transform_depth_values)
    return result, cache


def warp_backward(cache, grad_warped):
    """Gradients of warp: (grad_source, grad_depth); grad_depth is all zero."""
    plan, source_shape, depth_shape, transform_depth_values = cache
    gsrc = apply_warp_plan_backward(plan, grad_warped, source_shape, transform_depth_values)
    gdepth = np.zeros(depth_shape, dtype=np.asarray(grad_warped).dtype)
    return gsrc, gdepth


# ---------------------------------------------------------------------------
# Correlation cost volume


def cost(x1, x2):
    """Length-normalized correlation of two equal-length vectors."""
    x1 = np.asarray(x1)
    x2 = np.asarray(x2)
    if x1.ndim != 1 or x2.ndim != 1 or x1.shape != x2.shape:
        raise LengthMismatch(f"cost needs equal-length vectors, got {x1.shape} and {x2.shape}")
    if x1.size == 0:
        raise LengthMismatch("cost needs length >= 1")
    return np.sum(x1 * x2) / x1.size


def cost_volume(f1, f2, r):
    """Correlation of f1 against f2 over all offsets in [-r, r]^2.

    f1, f2: (H, W, L) or (B, H, W, L).  Output channel
    (k_j + r) * (2r + 1) + (k_i + r) holds the correlation between
    f1 at (i, j) and f2 at (i + k_i, j + k_j); offsets that leave the
    frame score 0.  Returns (volume, cache).
    """
    f1 = np.asarray(f1)
    f2 = np.asarray(f2)
    if f1.shape != f2.shape:
        raise ShapeMismatch(f"feature shapes differ: {f1.shape} vs {f2.shape}")
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    had_batch = f1.ndim == 4
    if not had_batch:
        if f1.ndim != 3:
            raise ShapeMismatch(f"expected (H, W, L) or (B, H, W, L), got {f1.shape}")
        f1 = f1[None]
        f2 = f2[None]
    b, h, w, l = f1.shape
    side = 2 * r + 1
    f2p = np.pad(f2, ((0, 0), (r, r), (r, r), (0, 0)))
    out = np.empty((b, h, w, side * side), dtype=f1.dtype)
    for kj in range(-r, r + 1):
        for ki in range(-r, r + 1):
            c = (kj + r) * side + (ki + r)
            shifted = f2p[:, r + kj : r + kj + h, r + ki : r + ki + w]
            out[..., c] = (f1 * shifted).sum(axis=-1) / l
    cache = (f1, f2p, r, had_batch)
    return (out if had_batch else out[0]), cache


def cost_volume_backward(cache, grad_out):
    """Gradients of cost_volume w.r.t. (f1, f2)."""
    f1, f2p, r, had_batch = cache
    b, h, w, l = f1.shape
    side = 2 * r + 1
    gy = np.asarray(grad_out)
    if not had_batch:
        gy = gy[None]
    g1 = np.zeros_like(f1)
    g2p = np.zeros_like(f2p)
    for kj in range(-r, r + 1):
        for ki in range(-r, r + 1):
            c = (kj + r) * side + (ki + r)
            gc = gy[..., c : c + 1] / l
            shifted = f2p[:, r + kj : r + kj + h, r + ki : r + ki + w]
            g1 += gc * shifted
            g2p[:, r + kj : r + kj + h, r + ki : r + ki + w] += gc * f1
    g2 = g2p[:, r : r + h, r : r + w] if r else g2p
    if not had_batch:
        return g1[0], g2[0]
    return g1, g2
