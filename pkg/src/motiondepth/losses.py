"""Multi-scale log-depth training loss and standard depth evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyMask, ShapeMismatch
from .ops import resize_bilinear

METRICS_HEADER = "abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3"


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.64
    gamma: float = 0.0004

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def csv_row(self) -> str:
        vals = (self.abs_rel, self.sq_rel, self.rmse, self.rmse_log,
                self.delta1, self.delta2, self.delta3)
        return ",".join(format(v, ".9g") for v in vals)


def save_metrics_csv(path, report: MetricReport):
    with open(path, "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        fh.write(report.csv_row() + "\n")


def _as_maps(x):
    """Normalize to (B, H, W): accepts (H,W), (H,W,1), (B,H,W,1)."""
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3 and x.shape[2] == 1:
        return x[:, :, 0][None]
    if x.ndim == 4 and x.shape[3] == 1:
        return x[:, :, :, 0]
    raise ShapeMismatch(f"expected a single-channel depth map, got shape {x.shape}")


def level_weights(num_levels, coarse_heavy=True):
    """Per-level factors 2^(l+1), index 0 = finest map.

    The default reading gives the finest level weight 4 and each coarser
    level double the previous; the flag flips the orientation.
    """
    ws = [2.0 ** (l + 1) for l in range(1, num_levels + 1)]
    if not coarse_heavy:
        ws = ws[::-1]
    return ws


def frame_loss(estimates, gt, w: LossWeights = LossWeights(), normalization="per_level",
               coarse_heavy=True):
    """Weighted multi-scale L1 distance between log-depths for one frame.

    estimates: list of depth maps, finest first, each (H_l, W_l[, 1]) or
    batched (B, H_l, W_l, 1); values strictly positive.  gt is the
    full-resolution ground truth, resized per level by bilinear
    interpolation.  Each level's pixel sum is normalized by that level's
    own pixel count ("per_level") or by the full-resolution count
    ("full_res").  Returns (loss, cache) for the backward pass.
    """
    if len(estimates) < 1:
        raise ShapeMismatch("need at least one estimate level")
    if normalization not in ("per_level", "full_res"):
        raise ValueError(f"unknown normalization {normalization!r}")
    gt_maps = _as_maps(gt)
    b = gt_maps.shape[0]
    full_hw = gt_maps.shape[1] * gt_maps.shape[2]
    ws = level_weights(len(estimates), coarse_heavy)

    loss = 0.0
    grads = []
    shapes = []
    for est, weight in zip(estimates, ws):
        arr = np.asarray(est)
        shapes.append(arr.shape)
        est_maps = _as_maps(est)
        if est_maps.shape[0] != b:
            raise ShapeMismatch(
                f"estimate batch {est_maps.shape[0]} does not match gt batch {b}"
            )
        hl, wl = est_maps.shape[1], est_maps.shape[2]
        gt_l = resize_bilinear(gt_maps[..., None], hl, wl)[..., 0]
        diff = np.log(est_maps) - np.log(gt_l)
        denom = (hl * wl) if normalization == "per_level" else full_hw
        coeff = w.alpha * weight / (denom * b)
        loss += coeff * np.abs(diff, dtype=np.float64).sum()
        grads.append((coeff * np.sign(diff) / est_maps).astype(est_maps.dtype))
    cache = (grads, shapes)
    return float(loss), cache


def frame_loss_backward(cache, grad_scalar=1.0):
    """Per-level gradients w.r.t. the linear-depth estimates."""
    grads, shapes = cache
    return [(grad_scalar * g).reshape(shape) for g, shape in zip(grads, shapes)]


def regularization_term(weight_params, w: LossWeights):
    """gamma times the summed squared L2 norm of the given weight tensors."""
    total = 0.0
    for p in weight_params:
        value = getattr(p, "value", p)
        total += float(np.sum(np.square(value, dtype=np.float64)))
    return w.gamma * total


def total_loss(frame_losses, weight_params, w: LossWeights = LossWeights()):
    """Mean of the per-frame losses plus the L2 weight penalty.

    weight_params: the weight tensors only; biases are the caller's to
    exclude.
    """
    if len(frame_losses) < 1:
        raise ValueError("need at least one frame loss")
    return float(np.mean(frame_losses) + regularization_term(weight_params, w))


def add_regularization_grads(weight_params, w: LossWeights):
    """Accumulate d(gamma * |W|^2)/dW = 2 * gamma * W into each grad."""
    for p in weight_params:
        p.grad += (2.0 * w.gamma) * p.value


def eigen_metrics(est, gt, valid_mask=None) -> MetricReport:
    """Standard scale-aware depth metrics over the masked pixels.

    AbsRel, SqRel, RMSE, RMSE of log depth, and the strict ratio
    thresholds delta_k: fraction of pixels with max(est/gt, gt/est)
    < 1.25^k.
    """
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    if est.shape != gt.shape:
        raise ShapeMismatch(f"est has {est.size} values, gt has {gt.size}")
    if valid_mask is not None:
        mask = np.asarray(valid_mask).reshape(-1).astype(bool)
        if mask.shape != gt.shape:
            raise ShapeMismatch(f"mask has {mask.size} values, maps have {gt.size}")
        est = est[mask]
        gt = gt[mask]
    if est.size == 0:
        raise EmptyMask("no valid pixels to score")

    diff = est - gt
    ratio = np.maximum(est / gt, gt / est)
    log_diff = np.log(est) - np.log(gt)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / gt)),
        sq_rel=float(np.mean(np.square(diff) / gt)),
        rmse=float(np.sqrt(np.mean(np.square(diff)))),
        rmse_log=float(np.sqrt(np.mean(np.square(log_diff)))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
    )
