"""Training loop, learning-rate schedule, and evaluation protocols.

Training draws batches of sequences from a clip dataset (shuffled
epochs, no replacement, remainder dropped), unrolls the recurrent
network over seq_len frames in lockstep, and backpropagates through
every level and timestep.  The learning rate starts at base_lr and is
halved every lr_halving_period iterations.  Runs are bit-reproducible
for a fixed seed at a fixed thread count.

Evaluation follows the last-N protocol: each test sequence contributes
only the depth map of its final frame, estimated after feeding the
preceding N-1 frames; metrics are averaged over sequences (scoring is
strictly one sequence at a time, so grouping cannot change results).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .data import SequenceSample
from .exceptions import NonFiniteLoss, ShapeMismatch
from .losses import (
    LossWeights,
    MetricReport,
    add_regularization_grads,
    eigen_metrics,
    frame_loss,
    frame_loss_backward,
    total_loss,
)
from .network import (
    NetworkConfig,
    infer_sequence,
    init_params,
    save_model,
    step,
    step_backward,
    weight_tensors,
)
from .ops import AdamState, adam_step, zero_grads

LOSS_CURVE_HEADER = "iter,loss,lr"


@dataclass(frozen=True)
class TrainConfig:
    seq_len: int = 4
    total_iters: int = 500
    batch_sequences: int = 3
    base_lr: float = 1e-4
    lr_halving_period: int = 0  # 0: derive as 0.3 * total_iters
    seed: int = 0
    checkpoint_interval: int = 0  # 0: final checkpoint only
    loss: LossWeights = field(default_factory=LossWeights)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.seq_len < 1 or self.total_iters < 1 or self.batch_sequences < 1:
            raise ValueError("seq_len, total_iters, batch_sequences must be positive")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.lr_halving_period < 0 or self.checkpoint_interval < 0:
            raise ValueError("intervals cannot be negative")

    @property
    def halving_period(self):
        if self.lr_halving_period > 0:
            return self.lr_halving_period
        return max(1, int(0.3 * self.total_iters))


def learning_rate(cfg: TrainConfig, iteration):
    """base_lr * 2^-(floor(iteration / period)), exactly."""
    return cfg.base_lr * 2.0 ** -(iteration // cfg.halving_period)


# ---------------------------------------------------------------------------
# Flat key=value config files


_LOSS_KEYS = {"alpha", "gamma"}
_NETWORK_KEYS = {"num_levels", "encoder_channels", "estimator_channels",
                 "cost_radius", "d_init", "leaky_slope"}
_TRAIN_INT_KEYS = {"seq_len", "total_iters", "batch_sequences",
                   "lr_halving_period", "seed", "checkpoint_interval"}
_TRAIN_FLOAT_KEYS = {"base_lr"}


def parse_train_config(text) -> TrainConfig:
    """Flat key=value lines; every field of the config, its loss weights,
    and its network section is addressable by plain name.  '#' starts a
    comment; blank lines are skipped."""
    train_kw = {}
    loss_kw = {}
    net_kw = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _TRAIN_INT_KEYS:
            train_kw[key] = int(value)
        elif key in _TRAIN_FLOAT_KEYS:
            train_kw[key] = float(value)
        elif key in _LOSS_KEYS:
            loss_kw[key] = float(value)
        elif key in ("num_levels", "cost_radius"):
            net_kw[key] = int(value)
        elif key in ("d_init", "leaky_slope"):
            net_kw[key] = float(value)
        elif key in ("encoder_channels", "estimator_channels"):
            net_kw[key] = tuple(int(v) for v in value.split(","))
        else:
            raise ValueError(f"unknown config key {key!r}")
    return TrainConfig(
        loss=LossWeights(**loss_kw),
        network=NetworkConfig(**net_kw),
        **train_kw,
    )


def format_train_config(cfg: TrainConfig):
    lines = [
        f"seq_len={cfg.seq_len}",
        f"total_iters={cfg.total_iters}",
        f"batch_sequences={cfg.batch_sequences}",
        f"base_lr={cfg.base_lr!r}",
        f"lr_halving_period={cfg.lr_halving_period}",
        f"seed={cfg.seed}",
        f"checkpoint_interval={cfg.checkpoint_interval}",
        f"alpha={cfg.loss.alpha!r}",
        f"gamma={cfg.loss.gamma!r}",
        cfg.network.to_text(),
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Clip preparation


def clips_of(dataset, seq_len):
    """Cut each sequence into consecutive non-overlapping seq_len windows.

    A window starting mid-sequence is a valid training clip: its first
    frame is treated as the start of time, so the stale leading motion
    is never consulted.
    """
    if seq_len < 1:
        raise ValueError("seq_len must be positive")
    clips = []
    for sample in dataset:
        for start in range(0, len(sample.frames) - seq_len + 1, seq_len):
            clips.append(
                SequenceSample(
                    frames=sample.frames[start : start + seq_len],
                    intrinsics=sample.intrinsics,
                    seq_id=f"{sample.seq_id}+{start}" if start else sample.seq_id,
                )
            )
    return clips


def _batched_frames(batch, t):
    images = np.stack([clip.frames[t].rgb for clip in batch])
    gt = np.stack([clip.frames[t].gt_depth for clip in batch])[..., None]
    motions = [clip.frames[t].motion for clip in batch]
    return images, gt, motions


# ---------------------------------------------------------------------------
# Training


def _unrolled_pass(batch, cfg: TrainConfig, params, k):
    """Forward seq_len frames, then backpropagate through time.

    Returns the scalar loss; parameter gradients are left accumulated.
    """
    net = cfg.network
    state = None
    frame_vals, step_caches, loss_caches = [], [], []
    for t in range(cfg.seq_len):
        images, gt, motions = _batched_frames(batch, t)
        mo = None if t == 0 else motions
        _, levels, state, cache = step(images, mo, state, net, params, k,
                                       want_cache=True)
        fval, fcache = frame_loss(levels, gt, cfg.loss)
        frame_vals.append(fval)
        step_caches.append(cache)
        loss_caches.append(fcache)
    loss = total_loss(frame_vals, weight_tensors(params), cfg.loss)
    if not np.isfinite(loss):
        return loss
    zero_grads(params)
    coeff = 1.0 / cfg.seq_len
    g_sf = g_sd = None
    for t in reversed(range(cfg.seq_len)):
        g_levels = frame_loss_backward(loss_caches[t], coeff)
        g_sf, g_sd = step_backward(step_caches[t], g_levels, g_sf, g_sd, net, params)
    add_regularization_grads(weight_tensors(params), cfg.loss)
    return loss


def _dump_bad_batch(out_dir, iteration, batch, loss):
    path = os.path.join(out_dir, f"nonfinite_iter{iteration:06d}.npz")
    arrays = {"iteration": np.array(iteration), "loss": np.array(loss)}
    for b, clip in enumerate(batch):
        for t, frame in enumerate(clip.frames):
            arrays[f"rgb_b{b}_t{t}"] = frame.rgb
            arrays[f"gt_b{b}_t{t}"] = frame.gt_depth
            arrays[f"rotation_b{b}_t{t}"] = frame.motion.rotation
            arrays[f"translation_b{b}_t{t}"] = frame.motion.translation
    np.savez(path, **arrays)
    return path


def save_loss_curve(path, history):
    with open(path, "w") as fh:
        fh.write(LOSS_CURVE_HEADER + "\n")
        for iteration, loss, lr in history:
            fh.write(f"{iteration},{loss!r},{lr!r}\n")


def train(cfg: TrainConfig, dataset, out_dir=None, log_every=0):
    """Run the full schedule; returns (params, history).

    history rows are (iteration, loss, lr).  With out_dir set, writes
    loss.csv, a final model.ckpt, and periodic model_XXXXXX.ckpt files.
    Raises NonFiniteLoss (after dumping the batch when out_dir is set)
    if the loss leaves the reals.
    """
    clips = list(dataset)
    if not clips:
        raise ValueError("dataset is empty")
    short = min(len(c.frames) for c in clips)
    if short < cfg.seq_len:
        raise ShapeMismatch(
            f"seq_len {cfg.seq_len} exceeds shortest clip ({short} frames)"
        )
    if len(clips) < cfg.batch_sequences:
        raise ValueError(
            f"need at least batch_sequences={cfg.batch_sequences} clips, "
            f"got {len(clips)}"
        )
    k = clips[0].intrinsics
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    params = init_params(cfg.network, seed=cfg.seed)
    adam = AdamState()
    shuffler = np.random.default_rng(cfg.seed)
    order = []
    cursor = 0
    history = []
    for iteration in range(cfg.total_iters):
        if cursor + cfg.batch_sequences > len(order):
            order = shuffler.permutation(len(clips))
            cursor = 0
        batch = [clips[i] for i in order[cursor : cursor + cfg.batch_sequences]]
        cursor += cfg.batch_sequences

        lr = learning_rate(cfg, iteration)
        loss = _unrolled_pass(batch, cfg, params, k)
        if not np.isfinite(loss):
            detail = f"loss became {loss} at iteration {iteration}"
            if out_dir:
                save_loss_curve(os.path.join(out_dir, "loss.csv"), history)
                dump = _dump_bad_batch(out_dir, iteration, batch, loss)
                detail += f"; batch dumped to {dump}"
            raise NonFiniteLoss(detail)
        adam_step(params, adam, lr)
        history.append((iteration, float(loss), lr))
        if log_every and (iteration % log_every == 0 or iteration == cfg.total_iters - 1):
            print(f"iter {iteration:6d}  loss {loss:.6f}  lr {lr:.3e}", flush=True)
        if out_dir and cfg.checkpoint_interval:
            done = iteration + 1
            if done % cfg.checkpoint_interval == 0 and done < cfg.total_iters:
                save_model(os.path.join(out_dir, f"model_{done:06d}.ckpt"),
                           cfg.network, params)

    if out_dir:
        save_loss_curve(os.path.join(out_dir, "loss.csv"), history)
        save_model(os.path.join(out_dir, "model.ckpt"), cfg.network, params)
    return params, history


# ---------------------------------------------------------------------------
# Evaluation


def network_estimator(cfg: NetworkConfig, params):
    """Sequence -> per-frame depth maps, using the recurrent network."""
    return lambda sample: infer_sequence(sample, cfg, params)


def constant_estimator(depth_value):
    """The no-information baseline: the same constant map for every frame."""
    def run(sample):
        h = sample.intrinsics.height
        w = sample.intrinsics.width
        return [np.full((h, w), depth_value, dtype=np.float32)
                for _ in sample.frames]
    return run


def oracle_estimator():
    """Returns the ground truth; pins the zero point of every metric."""
    return lambda sample: [f.gt_depth for f in sample.frames]


def last_n(sample, n):
    if n < 1:
        raise ValueError("test_seq_len must be >= 1")
    return SequenceSample(frames=sample.frames[-n:],
                          intrinsics=sample.intrinsics,
                          seq_id=sample.seq_id)


def mean_report(reports):
    if not reports:
        raise ValueError("no reports to average")
    cols = np.array([[r.abs_rel, r.sq_rel, r.rmse, r.rmse_log,
                      r.delta1, r.delta2, r.delta3] for r in reports])
    return MetricReport(*cols.mean(axis=0))


def evaluate_estimator(estimator, dataset, test_seq_len):
    """Last-N protocol: score only the final frame of each sequence, one
    sequence at a time, and average the reports."""
    reports = []
    for sample in dataset:
        sub = last_n(sample, min(test_seq_len, len(sample.frames)))
        maps = estimator(sub)
        final = maps[-1]
        gt = sub.frames[-1].gt_depth
        reports.append(eigen_metrics(final, gt))
    return mean_report(reports)


def evaluate(cfg: NetworkConfig, params, dataset, test_seq_len):
    """Evaluate a trained model with the last-N protocol."""
    return evaluate_estimator(network_estimator(cfg, params), dataset, test_seq_len)
