"""Recurrent multi-scale depth network.

A pyramid of M levels runs over a video sequence.  Per frame, a shared
convolutional encoder produces feature maps at each level; per level, a
preprocessing stage warps the previous frame's features and depth onto
the current grid (using the coarser level's upsampled estimate and the
camera motion), correlates them with the current features, and a stack
of seven convolutions regresses an absolute log-depth map.  Levels run
coarse to fine inside a frame; features and depths are carried to the
next frame as recurrent state.

Everything here is written for batched tensors (B, H, W, C); motions
are per-sample.  Forward functions return explicit caches, and
``step_backward`` drives gradients through the full structure,
including the recurrent paths across time.  Warp sampling coordinates
are a gradient stop by construction (see layers.warp).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import CorruptCheckpoint, DegenerateMotion, ShapeMismatch
from .geometry import (
    Intrinsics,
    RigidTransform,
    reprojection_field,
    require_reprojectable,
    rotation_to_axis_angle,
)
from .layers import (
    apply_warp_plan,
    apply_warp_plan_backward,
    build_warp_plan,
    cost_volume,
    cost_volume_backward,
)
from .ops import (
    ParamTensor,
    conv3x3,
    conv3x3_backward,
    he_init,
    leaky_relu,
    leaky_relu_backward,
    log_depth_decode,
    log_depth_decode_backward,
    log_depth_encode,
    log_depth_encode_backward,
    resize_bilinear,
    resize_bilinear_backward,
)

ESTIMATOR_CHANNELS = (128, 128, 128, 96, 64, 32, 1)
ENCODER_CHANNELS = (16, 32, 64, 96, 128, 192)

CONFIG_KEY = "__network_config__"


@dataclass(frozen=True)
class NetworkConfig:
    num_levels: int = 2
    encoder_channels: tuple = ENCODER_CHANNELS
    estimator_channels: tuple = ESTIMATOR_CHANNELS
    cost_radius: int = 4
    d_init: float = 50.0
    leaky_slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "estimator_channels", tuple(int(c) for c in self.estimator_channels))
        if not (1 <= self.num_levels <= len(self.encoder_channels)):
            raise ValueError(
                f"num_levels must be in [1, {len(self.encoder_channels)}], got {self.num_levels}"
            )
        if self.estimator_channels[-1] != 1:
            raise ValueError("estimator channel list must end in 1")
        if self.cost_radius < 0:
            raise ValueError("cost_radius must be >= 0")
        if self.d_init <= 0:
            raise ValueError("d_init must be positive")

    @property
    def estimator_in_channels(self):
        side = 2 * self.cost_radius + 1
        return [self.encoder_channels[l] + side * side + 1 + 1 + 2 + 6
                for l in range(self.num_levels)]

    def to_text(self):
        return "\n".join(
            [
                f"num_levels={self.num_levels}",
                "encoder_channels=" + ",".join(str(c) for c in self.encoder_channels),
                "estimator_channels=" + ",".join(str(c) for c in self.estimator_channels),
                f"cost_radius={self.cost_radius}",
                f"d_init={self.d_init!r}",
                f"leaky_slope={self.leaky_slope!r}",
            ]
        )

    @staticmethod
    def from_text(text):
        fields = {}
        for line in text.strip().splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        try:
            return NetworkConfig(
                num_levels=int(fields["num_levels"]),
                encoder_channels=tuple(int(v) for v in fields["encoder_channels"].split(",")),
                estimator_channels=tuple(int(v) for v in fields["estimator_channels"].split(",")),
                cost_radius=int(fields["cost_radius"]),
                d_init=float(fields["d_init"]),
                leaky_slope=float(fields["leaky_slope"]),
            )
        except KeyError as exc:
            raise CorruptCheckpoint(f"network config is missing field {exc}") from exc


@dataclass
class LevelState:
    features: np.ndarray  # (B, h_l, w_l, C_l) from the previous frame
    depth: np.ndarray     # (B, h_l, w_l, 1) linear meters from the previous frame


@dataclass
class SequenceState:
    levels: list
    timestep: int = 0


# ---------------------------------------------------------------------------
# Parameters


def init_params(cfg: NetworkConfig, seed=0, scale=1.0, dtype=np.float32):
    """He-initialized weights, zero biases, deterministic given the seed."""
    root = np.random.SeedSequence(seed)
    params = {}

    def add_conv(name, c_in, c_out, rng):
        w = he_init((3, 3, c_in, c_out), rng, dtype=dtype) * dtype(scale)
        params[f"{name}/w"] = ParamTensor(f"{name}/w", w.astype(dtype))
        params[f"{name}/b"] = ParamTensor(f"{name}/b", np.zeros(c_out, dtype=dtype))

    streams = iter(root.spawn(cfg.num_levels * (2 + len(cfg.estimator_channels))))
    for l in range(1, cfg.num_levels + 1):
        c_in = 3 if l == 1 else cfg.encoder_channels[l - 2]
        c_out = cfg.encoder_channels[l - 1]
        add_conv(f"enc{l}/c0", c_in, c_out, np.random.default_rng(next(streams)))
        add_conv(f"enc{l}/c1", c_out, c_out, np.random.default_rng(next(streams)))
    for l in range(1, cfg.num_levels + 1):
        c_prev = cfg.estimator_in_channels[l - 1]
        for i, c_out in enumerate(cfg.estimator_channels):
            add_conv(f"est{l}/c{i}", c_prev, c_out, np.random.default_rng(next(streams)))
            c_prev = c_out
    return params


def weight_tensors(params):
    """The convolution kernels only; biases stay unregularized."""
    return [p for name, p in params.items() if name.endswith("/w")]


def save_model(path, cfg: NetworkConfig, params):
    tensors = {
        CONFIG_KEY: np.frombuffer(cfg.to_text().encode("utf-8"), dtype=np.uint8).astype(
            np.float32
        )
    }
    for name, p in params.items():
        tensors[name] = p.value
    save_checkpoint(path, tensors)


def load_model(path):
    tensors = load_checkpoint(path)
    if CONFIG_KEY not in tensors:
        raise CorruptCheckpoint(f"{path}: no embedded network config")
    raw = tensors.pop(CONFIG_KEY)
    text = bytes(np.asarray(raw, dtype=np.float32).astype(np.uint8)).decode("utf-8")
    cfg = NetworkConfig.from_text(text)
    params = {name: ParamTensor(name, value) for name, value in tensors.items()}
    return cfg, params


# ---------------------------------------------------------------------------
# Encoder


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ShapeMismatch(f"expected (H, W, C) or (B, H, W, C), got {x.shape}")


def encode(images, cfg: NetworkConfig, params, want_cache=False):
    """Per-level feature maps; level l is H/2^l x W/2^l with C_l channels."""
    x, _ = _as_batch(images)
    h, w = x.shape[1], x.shape[2]
    div = 2 ** cfg.num_levels
    if h % div or w % div:
        raise ShapeMismatch(f"input {h}x{w} not divisible by 2^{cfg.num_levels}")
    feats = []
    caches = []
    for l in range(1, cfg.num_levels + 1):
        y, c0 = conv3x3(x, params[f"enc{l}/c0/w"].value, params[f"enc{l}/c0/b"].value, stride=2)
        a, ca0 = leaky_relu(y, cfg.leaky_slope)
        y, c1 = conv3x3(a, params[f"enc{l}/c1/w"].value, params[f"enc{l}/c1/b"].value, stride=1)
        a, ca1 = leaky_relu(y, cfg.leaky_slope)
        feats.append(a)
        if want_cache:
            caches.append((c0, ca0, c1, ca1))
        x = a
    return (feats, caches) if want_cache else (feats, None)


def encode_backward(caches, grad_feats, cfg: NetworkConfig, params):
    """Accumulate encoder parameter grads given per-level feature grads."""
    carry = None
    for l in range(cfg.num_levels, 0, -1):
        c0, ca0, c1, ca1 = caches[l - 1]
        g = grad_feats[l - 1]
        if carry is not None:
            g = g + carry
        g = leaky_relu_backward(ca1, g)
        g, gw, gb = conv3x3_backward(c1, g)
        params[f"enc{l}/c1/w"].grad += gw
        params[f"enc{l}/c1/b"].grad += gb
        g = leaky_relu_backward(ca0, g)
        g, gw, gb = conv3x3_backward(c0, g)
        params[f"enc{l}/c0/w"].grad += gw
        params[f"enc{l}/c0/b"].grad += gb
        carry = g
    return carry


# ---------------------------------------------------------------------------
# Per-level preprocessing and estimation


def level_intrinsics(k: Intrinsics, level):
    for _ in range(level):
        k = k.halved()
    return k


def _coordinate_grids(b, h, w, dtype):
    gi = np.linspace(-1.0, 1.0, w, dtype=dtype) if w > 1 else np.zeros(1, dtype=dtype)
    gj = np.linspace(-1.0, 1.0, h, dtype=dtype) if h > 1 else np.zeros(1, dtype=dtype)
    gi_map = np.broadcast_to(gi[None, None, :, None], (b, h, w, 1))
    gj_map = np.broadcast_to(gj[None, :, None, None], (b, h, w, 1))
    return np.ascontiguousarray(gi_map), np.ascontiguousarray(gj_map)


def motion_channels(motion: RigidTransform, level, dtype=np.float32):
    """Six per-pixel conditioning values: scaled translation + axis-angle."""
    t = motion.translation / (2.0 ** level)
    aa = rotation_to_axis_angle(motion.rotation)
    return np.concatenate([t, aa]).astype(dtype)


def preprocess_level(f_t, state: LevelState, d_up, motions, k_level: Intrinsics,
                     cfg: NetworkConfig, level, plans=None):
    """Estimator input for one level: warped recurrent data + correlation.

    Channel layout: [f_t | cost volume | log warped prev depth |
    log d_up | grid_i | grid_j | motion (6)].  d_up drives the warp
    coordinates for both the feature and the depth warp; sampling
    coordinates carry no gradient.  A precomputed per-sample plan list
    may be passed to pin the sampling pattern (finite-difference checks
    rely on this, since the coordinate stop is part of the objective).
    """
    f_t, _ = _as_batch(f_t)
    b, h, w, c = f_t.shape
    if state.features.shape != f_t.shape:
        raise ShapeMismatch(
            f"state features {state.features.shape} do not match current {f_t.shape}"
        )
    if d_up.shape != (b, h, w, 1):
        raise ShapeMismatch(f"d_up must be {(b, h, w, 1)}, got {d_up.shape}")
    if len(motions) != b:
        raise ShapeMismatch(f"{len(motions)} motions for batch of {b}")
    dtype = f_t.dtype

    if plans is None:
        plans = [build_warp_plan(d_up[i, :, :, 0], motions[i], k_level) for i in range(b)]
    f_w = np.stack([apply_warp_plan(plans[i], state.features[i]) for i in range(b)])
    d_w = np.stack(
        [apply_warp_plan(plans[i], state.depth[i], transform_depth_values=True)
         for i in range(b)]
    )
    cv, cv_cache = cost_volume(f_t, f_w.astype(dtype), cfg.cost_radius)
    log_dw, enc_w_cache = log_depth_encode(d_w.astype(dtype))
    log_dup, enc_up_cache = log_depth_encode(d_up)
    gi, gj = _coordinate_grids(b, h, w, dtype)
    mot = np.stack([motion_channels(m, level, dtype) for m in motions])
    mot_map = np.broadcast_to(mot[:, None, None, :], (b, h, w, 6))
    x = np.concatenate([f_t, cv, log_dw, log_dup, gi, gj, mot_map], axis=-1)
    cache = {
        "plans": plans,
        "cv": cv_cache,
        "enc_w": enc_w_cache,
        "enc_up": enc_up_cache,
        "feat_shape": state.features.shape,
        "depth_shape": state.depth.shape,
        "channels": c,
        "side2": (2 * cfg.cost_radius + 1) ** 2,
    }
    return x, cache


def preprocess_level_backward(cache, grad_x):
    """Gradients w.r.t. (f_t, state features, state depth, d_up)."""
    c = cache["channels"]
    n_cv = cache["side2"]
    g_ft = grad_x[..., :c].copy()
    g_cv = grad_x[..., c : c + n_cv]
    g_log_dw = grad_x[..., c + n_cv : c + n_cv + 1]
    g_log_dup = grad_x[..., c + n_cv + 1 : c + n_cv + 2]

    g_f1, g_f2 = cost_volume_backward(cache["cv"], g_cv)
    g_ft += g_f1
    g_dw = log_depth_encode_backward(cache["enc_w"], g_log_dw)
    plans = cache["plans"]
    b = len(plans)
    fs, ds = cache["feat_shape"], cache["depth_shape"]
    g_state_f = np.stack(
        [apply_warp_plan_backward(plans[i], g_f2[i], fs[1:]) for i in range(b)]
    )
    g_state_d = np.stack(
        [apply_warp_plan_backward(plans[i], g_dw[i], ds[1:], transform_depth_values=True)
         for i in range(b)]
    )
    g_dup = log_depth_encode_backward(cache["enc_up"], g_log_dup)
    return g_ft, g_state_f, g_state_d, g_dup


def estimate_depth_level(x, params, level, cfg: NetworkConfig):
    """Seven stride-1 convolutions to an absolute log-depth map, decoded."""
    caches = []
    n = len(cfg.estimator_channels)
    for i in range(n):
        x, cc = conv3x3(x, params[f"est{level}/c{i}/w"].value,
                        params[f"est{level}/c{i}/b"].value, stride=1)
        if i < n - 1:
            x, ca = leaky_relu(x, cfg.leaky_slope)
        else:
            ca = None
        caches.append((cc, ca))
    d, dec_cache = log_depth_decode(x)
    return d, (caches, dec_cache, level)


def estimate_depth_level_backward(cache, grad_d, params):
    caches, dec_cache, level = cache
    g = log_depth_decode_backward(dec_cache, grad_d)
    for i in range(len(caches) - 1, -1, -1):
        cc, ca = caches[i]
        if ca is not None:
            g = leaky_relu_backward(ca, g)
        g, gw, gb = conv3x3_backward(cc, g)
        params[f"est{level}/c{i}/w"].grad += gw
        params[f"est{level}/c{i}/b"].grad += gb
    return g


def _upsample_log_depth(d_coarse, out_h, out_w):
    """Bilinear x2 upsampling performed on log-depth."""
    lg, enc_cache = log_depth_encode(d_coarse)
    lg_up = resize_bilinear(lg, out_h, out_w)
    d_up = np.exp(lg_up)
    return d_up, (enc_cache, d_up, d_coarse.shape)


def _upsample_log_depth_backward(cache, g_dup):
    enc_cache, d_up, coarse_shape = cache
    g_lg_up = g_dup * d_up
    g_lg = resize_bilinear_backward(g_lg_up, coarse_shape[1], coarse_shape[2])
    return log_depth_encode_backward(enc_cache, g_lg)


# ---------------------------------------------------------------------------
# One recurrent step over a batch of sequences


def step(images, motions, state, cfg: NetworkConfig, params, k: Intrinsics,
         want_cache=False, plan_override=None):
    """Process one frame: returns (full-res depth, per-level depths, state, cache).

    images: (B, H, W, 3); motions: list of B RigidTransforms mapping
    current-camera coordinates into the previous camera's frame.
    state=None selects the first-frame fallback: previous features are
    the current ones, previous depth is the d_init constant, and the
    motion is forced to identity.  plan_override pins the warp plans
    per level (index l-1), for derivative checks.
    """
    images, _ = _as_batch(np.asarray(images))
    b = images.shape[0]
    feats, enc_cache = encode(images, cfg, params, want_cache=want_cache)

    t0 = state is None
    if t0:
        motions_eff = [RigidTransform.identity()] * b
    else:
        motions_eff = list(motions)
        if len(motions_eff) != b:
            raise ShapeMismatch(f"{len(motions_eff)} motions for batch of {b}")

    outputs = [None] * cfg.num_levels
    level_caches = [None] * cfg.num_levels
    up_caches = [None] * cfg.num_levels
    d_prev_level = None
    for l in range(cfg.num_levels, 0, -1):
        f_t = feats[l - 1]
        bh, bw = f_t.shape[1], f_t.shape[2]
        if t0:
            lstate = LevelState(
                features=f_t,
                depth=np.full((b, bh, bw, 1), cfg.d_init, dtype=f_t.dtype),
            )
        else:
            lstate = state.levels[l - 1]
        if l == cfg.num_levels:
            d_up = np.full((b, bh, bw, 1), cfg.d_init, dtype=f_t.dtype)
            up_caches[l - 1] = None
        else:
            d_up, up_caches[l - 1] = _upsample_log_depth(d_prev_level, bh, bw)
        k_l = level_intrinsics(k, l)
        pinned = None if plan_override is None else plan_override[l - 1]
        x, pre_cache = preprocess_level(
            f_t, lstate, d_up, motions_eff, k_l, cfg, l, plans=pinned
        )
        d_l, est_cache = estimate_depth_level(x, params, l, cfg)
        outputs[l - 1] = d_l
        level_caches[l - 1] = (pre_cache, est_cache)
        d_prev_level = d_l

    full, _ = _upsample_log_depth(outputs[0], images.shape[1], images.shape[2])
    new_state = SequenceState(
        levels=[LevelState(features=feats[l], depth=outputs[l])
                for l in range(cfg.num_levels)],
        timestep=(0 if t0 else state.timestep) + 1,
    )
    cache = None
    if want_cache:
        cache = {
            "enc": enc_cache,
            "levels": level_caches,
            "ups": up_caches,
            "t0": t0,
            "dtype": feats[0].dtype,
            "feat_shapes": [f.shape for f in feats],
            "depth_shapes": [o.shape for o in outputs],
        }
    return full, outputs, new_state, cache


def step_backward(cache, grad_levels, grad_state_feats, grad_state_depths, cfg, params):
    """Backward through one step.

    grad_levels: per-level gradients on this step's depth outputs (or
    None); grad_state_feats / grad_state_depths: gradients flowing back
    from the NEXT timestep into the state this step produced (or None).
    Returns (prev_state_feat_grads, prev_state_depth_grads), both None
    for a first-frame step, plus accumulates parameter gradients.
    """
    m = cfg.num_levels
    dt = cache["dtype"]
    g_feats = [None] * m
    g_d = [None] * m
    for l in range(m):
        g_feats[l] = np.zeros(cache["feat_shapes"][l], dtype=dt)
        if grad_state_feats is not None and grad_state_feats[l] is not None:
            g_feats[l] = g_feats[l] + grad_state_feats[l]
        g_d[l] = np.zeros(cache["depth_shapes"][l], dtype=dt)
        if grad_levels is not None and grad_levels[l] is not None:
            g_d[l] = g_d[l] + grad_levels[l]
        if grad_state_depths is not None and grad_state_depths[l] is not None:
            g_d[l] = g_d[l] + grad_state_depths[l]

    t0 = cache["t0"]
    prev_f = None if t0 else [None] * m
    prev_d = None if t0 else [None] * m
    for l in range(1, m + 1):
        pre_cache, est_cache = cache["levels"][l - 1]
        g_x = estimate_depth_level_backward(est_cache, g_d[l - 1], params)
        g_ft, g_sf, g_sd, g_dup = preprocess_level_backward(pre_cache, g_x)
        g_feats[l - 1] = g_feats[l - 1] + g_ft
        if t0:
            # the warp source was this frame's own feature map; the depth
            # source was the d_init constant
            g_feats[l - 1] = g_feats[l - 1] + g_sf
        else:
            prev_f[l - 1] = g_sf
            prev_d[l - 1] = g_sd
        if l < m:
            g_coarse = _upsample_log_depth_backward(cache["ups"][l - 1], g_dup)
            g_d[l] = g_d[l] + g_coarse
    encode_backward(cache["enc"], g_feats, cfg, params)
    return prev_f, prev_d


def infer_sequence(sample, cfg: NetworkConfig, params):
    """Online inference: one full-resolution depth map per frame."""
    if len(sample.frames) < 1:
        raise ShapeMismatch("sequence has no frames")
    state = None
    maps = []
    for frame in sample.frames:
        motions = None if state is None else [frame.motion]
        full, _, state, _ = step(
            frame.rgb[None], motions, state, cfg, params, sample.intrinsics
        )
        maps.append(full[0, :, :, 0])
    return maps


# ---------------------------------------------------------------------------
# Analytic triangulation baseline


def triangulate_analytic(f_t, f_prev_warped, d_hypothesis, motion: RigidTransform,
                         k_level: Intrinsics, cost_radius=4, min_parallax_px=0.5):
    """Depth from the best cost-volume match, no learned parameters.

    For each pixel, the argmax offset of the correlation volume names
    the previous-frame location the pixel matched; the depth that
    reprojects the pixel onto that location is recovered by a
    least-squares solve along both image axes.  Pixels whose motion
    parallax (at the hypothesis depth) is below min_parallax_px, or
    whose match is unusable, keep the hypothesis value.
    """
    if np.linalg.norm(motion.translation) <= 1e-6:
        raise DegenerateMotion("translation too small to triangulate")
    f = require_reprojectable(k_level)
    f_t = np.asarray(f_t)
    if f_t.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, L) features, got {f_t.shape}")
    h, w = f_t.shape[:2]
    d_hyp = np.asarray(d_hypothesis, dtype=np.float64)
    if d_hyp.ndim == 3:
        d_hyp = d_hyp[:, :, 0]
    if d_hyp.ndim == 0:
        d_hyp = np.full((h, w), float(d_hyp))

    cv, _ = cost_volume(f_t, np.asarray(f_prev_warped), cost_radius)
    side = 2 * cost_radius + 1
    best = np.argmax(cv, axis=-1)
    k_j = best // side - cost_radius
    k_i = best % side - cost_radius

    # previous-frame coordinates of every current pixel at the hypothesis depth
    i_prev, j_prev, _, valid = reprojection_field(d_hyp, motion, k_level)

    # matched location: the warped grid position the argmax pointed at
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    in_frame = (
        (jj + k_j >= 0) & (jj + k_j <= h - 1) & (ii + k_i >= 0) & (ii + k_i <= w - 1)
    )
    mj = np.clip(jj + k_j, 0, h - 1)
    mi = np.clip(ii + k_i, 0, w - 1)
    q_i = i_prev[mj, mi]
    q_j = j_prev[mj, mi]
    match_ok = in_frame & valid[mj, mi] & valid

    # parallax at the hypothesis depth: displacement relative to the
    # rotation-only (infinite depth) reprojection
    r = motion.rotation
    dirs = np.stack(
        [(ii - k_level.cx) / f, (jj - k_level.cy) / f, np.ones_like(i_prev)], axis=-1
    )
    a = dirs @ r.T
    with np.errstate(divide="ignore", invalid="ignore"):
        i_inf = f * a[..., 0] / a[..., 2] + k_level.cx
        j_inf = f * a[..., 1] / a[..., 2] + k_level.cy
    parallax = np.hypot(i_prev - i_inf, j_prev - j_inf)
    usable = match_ok & (a[..., 2] > 0) & (parallax >= min_parallax_px)

    b_vec = r @ motion.translation
    alpha1 = f * a[..., 0] - (q_i - k_level.cx) * a[..., 2]
    beta1 = (q_i - k_level.cx) * b_vec[2] - f * b_vec[0]
    alpha2 = f * a[..., 1] - (q_j - k_level.cy) * a[..., 2]
    beta2 = (q_j - k_level.cy) * b_vec[2] - f * b_vec[1]
    denom = alpha1 * alpha1 + alpha2 * alpha2
    usable &= denom > 1e-12
    safe = np.where(usable, denom, 1.0)
    d_star = (alpha1 * beta1 + alpha2 * beta2) / safe
    usable &= (d_star > 0) & np.isfinite(d_star)
    return np.where(usable, d_star, d_hyp)
