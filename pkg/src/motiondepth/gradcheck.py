"""Finite-difference gradient verification helpers.

Analytic backward passes are checked against central differences in
float64.  Errors are reported relative to the largest gradient magnitude
so that near-zero components do not produce spurious blowups.
"""

from __future__ import annotations

import numpy as np


def numeric_gradient(f, x, h=1e-3):
    """Central-difference gradient of scalar-valued f at x.

    x is perturbed in place one component at a time and restored, so f
    may close over x directly.
    """
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = float(f())
        flat[k] = orig - h
        fm = float(f())
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric):
    """Largest component difference, relative to the gradient scale."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {n.shape}")
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_gradient(f, x, analytic, h=1e-3, tol=1e-4):
    """Convenience wrapper: numeric gradient, then relative-error check.

    Returns (ok, err, numeric).
    """
    numeric = numeric_gradient(f, x, h=h)
    err = max_rel_error(analytic, numeric)
    return err < tol, err, numeric


# ---------------------------------------------------------------------------
# Named verification suites
#
# Each suite builds a small float64 problem, compares its analytic
# backward pass against central differences, and returns
# (max_relative_error, bound).  They power the command-line `gradcheck`
# report and the acceptance checks.


def _sampled_param_check(params, names, forward, rng, h, per_tensor):
    worst = 0.0
    for name in names:
        p = params[name]
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        idxs = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        ana, num = [], []
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = forward()
            flat[i] = orig - h
            fm = forward()
            flat[i] = orig
            num.append((fp - fm) / (2.0 * h))
            ana.append(gflat[i])
        worst = max(worst, max_rel_error(np.array(ana), np.array(num)))
    return worst


def suite_conv3x3():
    from .ops import conv3x3, conv3x3_backward

    rng = np.random.default_rng(31)
    x = rng.standard_normal((1, 6, 6, 3))
    w = rng.standard_normal((3, 3, 3, 4)) * 0.5
    b = rng.standard_normal(4) * 0.1
    proj = rng.standard_normal((1, 3, 3, 4))

    def objective():
        y, _ = conv3x3(x, w, b, stride=2)
        return float(np.sum(y * proj))

    y, cache = conv3x3(x, w, b, stride=2)
    gx, gw, gb = conv3x3_backward(cache, proj)
    err = 0.0
    for val, ana in ((x, gx), (w, gw), (b, gb)):
        err = max(err, max_rel_error(ana, numeric_gradient(objective, val, h=1e-5)))
    return err, 1e-4


def suite_leaky_relu():
    from .ops import leaky_relu, leaky_relu_backward

    rng = np.random.default_rng(32)
    x = rng.standard_normal((2, 4, 4, 3)) + 0.05  # keep clear of the kink
    proj = rng.standard_normal(x.shape)

    def objective():
        y, _ = leaky_relu(x, 0.1)
        return float(np.sum(y * proj))

    _, cache = leaky_relu(x, 0.1)
    gx = leaky_relu_backward(cache, proj)
    return max_rel_error(gx, numeric_gradient(objective, x, h=1e-6)), 1e-4


def suite_resize_bilinear():
    from .ops import resize_bilinear, resize_bilinear_backward

    rng = np.random.default_rng(33)
    x = rng.standard_normal((1, 5, 7, 2))
    proj = rng.standard_normal((1, 10, 14, 2))

    def objective():
        return float(np.sum(resize_bilinear(x, 10, 14) * proj))

    gx = resize_bilinear_backward(proj, 5, 7)
    return max_rel_error(gx, numeric_gradient(objective, x, h=1e-6)), 1e-4


def suite_log_codec():
    from .ops import (log_depth_decode, log_depth_decode_backward,
                      log_depth_encode, log_depth_encode_backward)

    rng = np.random.default_rng(34)
    d = rng.uniform(0.5, 150.0, size=(1, 4, 4, 1))
    x = rng.uniform(-1.5, 4.5, size=(1, 4, 4, 1))
    proj = rng.standard_normal((1, 4, 4, 1))

    def obj_enc():
        y, _ = log_depth_encode(d)
        return float(np.sum(y * proj))

    def obj_dec():
        y, _ = log_depth_decode(x)
        return float(np.sum(y * proj))

    _, ce = log_depth_encode(d)
    _, cd = log_depth_decode(x)
    err = max_rel_error(log_depth_encode_backward(ce, proj),
                        numeric_gradient(obj_enc, d, h=1e-6))
    err = max(err, max_rel_error(log_depth_decode_backward(cd, proj),
                                 numeric_gradient(obj_dec, x, h=1e-6)))
    return err, 1e-4


def suite_cost_volume():
    from .layers import cost_volume, cost_volume_backward

    rng = np.random.default_rng(35)
    f1 = rng.standard_normal((5, 5, 3))
    f2 = rng.standard_normal((5, 5, 3))
    vol, cache = cost_volume(f1, f2, 1)
    proj = rng.standard_normal(vol.shape)

    def objective():
        v, _ = cost_volume(f1, f2, 1)
        return float(np.sum(v * proj))

    g1, g2 = cost_volume_backward(cache, proj)
    err = max_rel_error(g1, numeric_gradient(objective, f1, h=1e-6))
    err = max(err, max_rel_error(g2, numeric_gradient(objective, f2, h=1e-6)))
    return err, 1e-4


def suite_warp_features():
    """Gradient through the warp into the source tensor.

    Also asserts the two halves of the sampling-coordinate stop: the
    reported depth gradient is exactly zero even though perturbing the
    depth genuinely changes the output.
    """
    from .geometry import Intrinsics, RigidTransform
    from .layers import warp, warp_backward

    rng = np.random.default_rng(36)
    k = Intrinsics(fx=8.0, fy=8.0, s=0.0, cx=3.5, cy=3.5, width=8, height=8)
    motion = RigidTransform(np.eye(3), np.array([0.3, -0.1, 0.4]))
    source = rng.standard_normal((8, 8, 2))
    depth = rng.uniform(4.0, 6.0, size=(8, 8))

    res, cache = warp(source, depth, motion, k)
    proj = rng.standard_normal(res.warped.shape)

    def objective():
        r, _ = warp(source, depth, motion, k)
        return float(np.sum(r.warped * proj))

    gsrc, gdepth = warp_backward(cache, proj)
    if np.any(gdepth != 0.0):
        raise AssertionError("warp depth gradient must be exactly zero")
    base = objective()
    depth_bumped = depth.copy()
    depth_bumped[4, 4] += 0.25
    r2, _ = warp(source, depth_bumped, motion, k)
    if float(np.sum(r2.warped * proj)) == base:
        raise AssertionError("depth perturbation should change the warp output")
    return max_rel_error(gsrc, numeric_gradient(objective, source, h=1e-6)), 1e-4


def suite_frame_loss():
    from .losses import LossWeights, frame_loss, frame_loss_backward

    rng = np.random.default_rng(37)
    gt = rng.uniform(2.0, 40.0, size=(1, 8, 8, 1))
    ests = [rng.uniform(2.0, 40.0, size=(1, 8, 8, 1)),
            rng.uniform(2.0, 40.0, size=(1, 4, 4, 1))]
    w = LossWeights()

    def objective():
        val, _ = frame_loss(ests, gt, w)
        return float(val)

    _, cache = frame_loss(ests, gt, w)
    grads = frame_loss_backward(cache)
    err = 0.0
    for est, g in zip(ests, grads):
        err = max(err, max_rel_error(g, numeric_gradient(objective, est, h=1e-5)))
    return err, 1e-4


def suite_estimator():
    from .network import (NetworkConfig, estimate_depth_level,
                          estimate_depth_level_backward, init_params)
    from .ops import zero_grads

    cfg = NetworkConfig(num_levels=1, encoder_channels=(6,),
                        estimator_channels=(10, 8, 1), cost_radius=2)
    params = init_params(cfg, seed=13, dtype=np.float64)
    rng = np.random.default_rng(38)
    x = rng.standard_normal((1, 8, 8, cfg.estimator_in_channels[0])) * 0.5
    proj = rng.standard_normal((1, 8, 8, 1))

    def objective():
        d, _ = estimate_depth_level(x, params, 1, cfg)
        return float(np.sum(d * proj))

    _, cache = estimate_depth_level(x, params, 1, cfg)
    zero_grads(params)
    estimate_depth_level_backward(cache, proj, params)
    names = [n for n in params if n.startswith("est1/")]
    err = _sampled_param_check(params, names, objective, rng, 1e-5, 5)
    return err, 1e-4


def suite_end_to_end():
    """Full two-level recurrent unroll against finite differences of the
    total loss, warp sampling patterns pinned (the coordinate stop is
    part of the objective)."""
    from .data import SceneSpec, generate_synthetic
    from .geometry import Intrinsics
    from .losses import (LossWeights, add_regularization_grads, frame_loss,
                         frame_loss_backward, total_loss)
    from .network import (NetworkConfig, init_params, step, step_backward,
                          weight_tensors)
    from .ops import zero_grads

    spec = SceneSpec(
        geometry="plane", trajectory="straight", frame_count=3,
        intrinsics=Intrinsics(fx=32.0, fy=32.0, s=0.0, cx=15.5, cy=15.5,
                              width=32, height=32))
    sample = generate_synthetic(spec, seed=3)
    cfg = NetworkConfig(num_levels=2, encoder_channels=(6, 8),
                        estimator_channels=(12, 10, 1), cost_radius=2)
    params = init_params(cfg, seed=11, dtype=np.float64)
    w = LossWeights()
    k = sample.intrinsics
    imgs = [f.rgb[None].astype(np.float64) for f in sample.frames]
    gts = [f.gt_depth[None, :, :, None].astype(np.float64) for f in sample.frames]
    motions = [f.motion for f in sample.frames]

    def forward(plan_override=None, collect=False):
        state = None
        fvals, scaches, lcaches, plans = [], [], [], []
        for t in range(len(imgs)):
            mo = None if t == 0 else [motions[t]]
            po = None if plan_override is None else plan_override[t]
            _, levels, state, cache = step(imgs[t], mo, state, cfg, params, k,
                                           want_cache=True, plan_override=po)
            fl, fc = frame_loss(levels, gts[t], w)
            fvals.append(fl)
            scaches.append(cache)
            lcaches.append(fc)
            plans.append([cache["levels"][l][0]["plans"]
                          for l in range(cfg.num_levels)])
        val = total_loss(fvals, weight_tensors(params), w)
        return (val, (scaches, lcaches, plans)) if collect else val

    _, (scaches, lcaches, plans) = forward(collect=True)
    zero_grads(params)
    coeff = 1.0 / len(imgs)
    g_sf = g_sd = None
    for t in reversed(range(len(imgs))):
        g_levels = frame_loss_backward(lcaches[t], coeff)
        g_sf, g_sd = step_backward(scaches[t], g_levels, g_sf, g_sd, cfg, params)
    add_regularization_grads(weight_tensors(params), w)

    rng = np.random.default_rng(5)
    err = _sampled_param_check(
        params, list(params), lambda: forward(plan_override=plans), rng, 1e-4, 2
    )
    return err, 1e-3


SUITES = {
    "conv3x3": suite_conv3x3,
    "leaky_relu": suite_leaky_relu,
    "resize_bilinear": suite_resize_bilinear,
    "log_codec": suite_log_codec,
    "cost_volume": suite_cost_volume,
    "warp_features": suite_warp_features,
    "frame_loss": suite_frame_loss,
    "estimator": suite_estimator,
    "end_to_end": suite_end_to_end,
}


def run_suites(names=None):
    """Run the named suites (all by default).

    Returns a list of (name, max_rel_error, bound, passed).
    """
    if names is None:
        names = list(SUITES)
    results = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown gradcheck suite {name!r}")
        err, bound = SUITES[name]()
        results.append((name, err, bound, err < bound))
    return results
