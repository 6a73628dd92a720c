"""Analytic depth from a cost-volume match, no learning involved.

Given features for the current frame and features warped from the
previous one under some depth hypothesis, the best-matching offset in
the cost volume pins down where each pixel really was a frame ago.
Two views of the same point and a known camera motion then yield its
depth in closed form. With enough parallax this recovers a noise-free
plane almost exactly, which is a strong end-to-end check of the
geometry stack.
"""

import numpy as np

from motiondepth.geometry import Intrinsics, RigidTransform
from motiondepth.layers import apply_warp_plan, build_warp_plan
from motiondepth.network import triangulate_analytic


def main():
    size, f = 64, 100.0
    k = Intrinsics(fx=f, fy=f, s=0.0, cx=(size - 1) / 2, cy=(size - 1) / 2,
                   width=size, height=size)
    d_true = 10.0

    # Forward-lateral translation chosen so the true correspondence sits a
    # whole number of pixels away: f * tx / d = 100 * 0.4 / 10 = 4 px.
    motion = RigidTransform(rotation=np.eye(3),
                            translation=np.array([0.4, 0.0, 0.0]))

    # Unit-normalized random features make the correlation peak sharp.
    rng = np.random.default_rng(2)
    f_t = rng.normal(size=(size, size, 24)).astype(np.float64)
    f_t /= np.linalg.norm(f_t, axis=-1, keepdims=True)
    f_prev = np.roll(f_t, 4, axis=1)

    # The matcher is handed features warped under a wrong hypothesis (twice
    # the true depth) and still must figure out the truth from the residual
    # offset of the correlation peak.
    d_hyp = 20.0
    plan = build_warp_plan(np.full((size, size), d_hyp), motion, k)
    f_prev_warped = apply_warp_plan(plan, f_prev)

    d_star = triangulate_analytic(f_t, f_prev_warped, d_hyp, motion, k,
                                  cost_radius=4)
    interior = d_star[8:-8, 8:-8]
    rel = np.abs(interior - d_true) / d_true
    print(f"hypothesis {d_hyp}, truth {d_true}")
    print(f"recovered interior depth: mean {interior.mean():.6f}, "
          f"max rel err {rel.max():.2e}")
    print(f"within 5% of truth: {(rel < 0.05).mean():.1%} of interior pixels")

    # With negligible parallax the match carries no depth information, so
    # the routine falls back to the hypothesis instead of guessing.
    tiny = RigidTransform(rotation=np.eye(3),
                          translation=np.array([0.004, 0.0, 0.0]))
    plan = build_warp_plan(np.full((size, size), d_hyp), tiny, k)
    d_keep = triangulate_analytic(f_t, apply_warp_plan(plan, f_prev), d_hyp,
                                  tiny, k, cost_radius=4)
    print(f"\nsub-pixel parallax keeps the hypothesis everywhere: "
          f"{np.array_equal(d_keep, np.full((size, size), d_hyp))}")


if __name__ == "__main__":
    main()
