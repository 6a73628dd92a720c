"""Dense H x W x C tensor kernels with hand-derived backward passes.

Feature maps, depth maps and cost volumes are plain numpy arrays shaped
(H, W, C), row-major with channels fastest; every kernel also accepts a
leading batch axis (B, H, W, C).  Forward functions that participate in
training return an opaque cache consumed by the paired ``*_backward``
function.  Kernels compute in the dtype of their inputs: float32 for
training, float64 for finite-difference verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeMismatch

# Depth clamp range (meters) for the log-depth codec.  Outdoor scenes;
# the floor keeps logs finite for zero-filled invalid pixels.
D_MIN = 0.1
D_MAX = 200.0


@dataclass
class ParamTensor:
    """A learnable tensor paired with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeMismatch(
                f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    def zero_grad(self):
        self.grad[...] = 0.0


def zero_grads(params):
    """Clear the gradient of every ParamTensor in a dict or sequence."""
    it = params.values() if hasattr(params, "values") else params
    for p in it:
        p.zero_grad()


def _with_batch(x):
    """Normalize to (B, H, W, C); returns (array, had_batch_axis)."""
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ShapeMismatch(f"expected (H, W, C) or (B, H, W, C), got shape {x.shape}")


def _restore(x, had_batch):
    return x if had_batch else x[0]


# ---------------------------------------------------------------------------
# 3x3 convolution, zero padding 1, stride 1 or 2


def _im2col(x, stride):
    """Patch matrix of shape (B*Ho*Wo, 9*Cin) for a padded input."""
    b, h, w, c = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (B, Ho, Wo, Cin, 3, 3)
    bo, ho, wo = windows.shape[:3]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(bo * ho * wo, 9 * c)
    return cols, (ho, wo)


def conv3x3(x, weights, bias, stride=1):
    """3x3 convolution; output spatial size is ceil(H/stride) x ceil(W/stride).

    x: (..., H, W, Cin); weights: (3, 3, Cin, Cout); bias: (Cout,).
    Returns (y, cache).
    """
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    xb, had_batch = _with_batch(np.asarray(x))
    w = np.asarray(weights)
    bvec = np.asarray(bias)
    if w.ndim != 4 or w.shape[:2] != (3, 3):
        raise ShapeMismatch(f"weights must be (3, 3, Cin, Cout), got {w.shape}")
    c_in, c_out = w.shape[2], w.shape[3]
    if xb.shape[3] != c_in:
        raise ShapeMismatch(f"input has {xb.shape[3]} channels, weights expect {c_in}")
    if bvec.shape != (c_out,):
        raise ShapeMismatch(f"bias must be ({c_out},), got {bvec.shape}")
    cols, (ho, wo) = _im2col(xb, stride)
    y = cols @ w.reshape(9 * c_in, c_out)
    y += bvec
    y = y.reshape(xb.shape[0], ho, wo, c_out)
    cache = (cols, xb.shape, w, stride, had_batch)
    return _restore(y, had_batch), cache


def conv3x3_backward(cache, grad_out):
    """Gradients of conv3x3 w.r.t. (input, weights, bias)."""
    cols, x_shape, w, stride, had_batch = cache
    b, h, wdt, c_in = x_shape
    c_out = w.shape[3]
    gy, _ = _with_batch(np.asarray(grad_out))
    ho, wo = gy.shape[1], gy.shape[2]
    gy_flat = gy.reshape(b * ho * wo, c_out)

    gb = gy_flat.sum(axis=0, dtype=np.float64).astype(gy.dtype)
    gw = (cols.T @ gy_flat).reshape(3, 3, c_in, c_out)

    gcols = gy_flat @ w.reshape(9 * c_in, c_out).T
    gcols = gcols.reshape(b, ho, wo, 3, 3, c_in)
    gpad = np.zeros((b, h + 2, wdt + 2, c_in), dtype=gy.dtype)
    for ky in range(3):
        for kx in range(3):
            gpad[:, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride] += gcols[
                :, :, :, ky, kx
            ]
    gx = gpad[:, 1 : h + 1, 1 : wdt + 1]
    return _restore(gx, had_batch), gw, gb


# ---------------------------------------------------------------------------
# Leaky ReLU


def leaky_relu(x, slope=0.1):
    x = np.asarray(x)
    neg = x < 0
    y = np.where(neg, x * np.asarray(slope, dtype=x.dtype), x)
    return y, (neg, slope)


def leaky_relu_backward(cache, grad_out):
    neg, slope = cache
    g = np.asarray(grad_out)
    return np.where(neg, g * np.asarray(slope, dtype=g.dtype), g)


# ---------------------------------------------------------------------------
# Resampling (align-corners-false)


def _axis_plan(in_size, out_size):
    """Two-tap sample plan along one axis: indices i0, i1 and weight of i1."""
    o = np.arange(out_size, dtype=np.float64)
    s = (o + 0.5) * (in_size / out_size) - 0.5
    s = np.clip(s, 0.0, in_size - 1.0)
    i0 = np.floor(s).astype(np.int64)
    frac = s - i0
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, frac


def _resize_axis(x, axis, out_size):
    in_size = x.shape[axis]
    if out_size == in_size:
        return x
    i0, i1, frac = _axis_plan(in_size, out_size)
    frac = frac.astype(x.dtype)
    shape = [1] * x.ndim
    shape[axis] = out_size
    w1 = frac.reshape(shape)
    return np.take(x, i0, axis=axis) * (1 - w1) + np.take(x, i1, axis=axis) * w1


def resize_bilinear(x, out_h, out_w):
    """Bilinear resize of (..., H, W, C); constants map to constants."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be >= 1, got {out_h}x{out_w}")
    xb, had_batch = _with_batch(np.asarray(x))
    y = _resize_axis(_resize_axis(xb, 1, out_h), 2, out_w)
    return _restore(y, had_batch)


def resize_bilinear_backward(grad_out, in_h, in_w):
    """Transpose of resize_bilinear: scatter output grads to the input grid."""
    gy, had_batch = _with_batch(np.asarray(grad_out))

    def scatter_axis(g, axis, in_size):
        out_size = g.shape[axis]
        if out_size == in_size:
            return g
        i0, i1, frac = _axis_plan(in_size, out_size)
        frac = frac.astype(g.dtype)
        shape = [1] * g.ndim
        shape[axis] = out_size
        w1 = frac.reshape(shape)
        gx_shape = list(g.shape)
        gx_shape[axis] = in_size
        gx = np.zeros(gx_shape, dtype=g.dtype)
        gm = np.moveaxis(gx, axis, 0)
        np.add.at(gm, i0, np.moveaxis(g * (1 - w1), axis, 0))
        np.add.at(gm, i1, np.moveaxis(g * w1, axis, 0))
        return gx

    gx = scatter_axis(scatter_axis(gy, 2, in_w), 1, in_h)
    return _restore(gx, had_batch)


def resize_nearest(x, out_h, out_w):
    """Nearest-neighbour resize of (..., H, W, C); exact copy at identity size."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be >= 1, got {out_h}x{out_w}")
    xb, had_batch = _with_batch(np.asarray(x))
    in_h, in_w = xb.shape[1], xb.shape[2]
    rows = np.minimum(((np.arange(out_h) + 0.5) * (in_h / out_h)).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * (in_w / out_w)).astype(np.int64), in_w - 1)
    y = xb[:, rows][:, :, cols]
    return _restore(y, had_batch)


# ---------------------------------------------------------------------------
# Log-depth codec


def log_depth_encode(d, d_min=D_MIN, d_max=D_MAX):
    """Natural log of depth, clamped into [d_min, d_max] first."""
    d = np.asarray(d)
    clamped = np.clip(d, d_min, d_max)
    return np.log(clamped), (d, d_min, d_max)


def log_depth_encode_backward(cache, grad_out):
    d, d_min, d_max = cache
    inside = (d >= d_min) & (d <= d_max)
    g = np.asarray(grad_out)
    return np.where(inside, g / np.clip(d, d_min, d_max), np.zeros((), dtype=g.dtype))


def log_depth_decode(x, d_min=D_MIN, d_max=D_MAX):
    """Exponential back to linear meters, clamped into [d_min, d_max]."""
    x = np.asarray(x)
    e = np.exp(x)
    d = np.clip(e, d_min, d_max)
    return d, (e, d_min, d_max)


def log_depth_decode_backward(cache, grad_out):
    e, d_min, d_max = cache
    inside = (e >= d_min) & (e <= d_max)
    g = np.asarray(grad_out)
    return np.where(inside, g * e, np.zeros((), dtype=g.dtype))


# ---------------------------------------------------------------------------
# Initialization and optimization


def he_init(shape, rng, fan_in=None, dtype=np.float32):
    """He-normal initialization: zero mean, variance 2 / fan_in.

    rng: seed or np.random.Generator.  fan_in defaults to the receptive
    field size: prod(shape[:-1]) (e.g. 9 * Cin for 3x3 conv weights).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    shape = tuple(int(s) for s in shape)
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update over the given ParamTensors; mutates values in place.

    Moments start at zero, so a first step with zero gradients leaves
    parameters unchanged.  Returns the updated state.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    it = params.values() if hasattr(params, "values") else params
    for p in it:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
        v = state.v.get(p.name)
        if v is None:
            v = state.v[p.name] = np.zeros_like(p.value)
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
