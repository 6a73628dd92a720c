import numpy as np
import pytest

from motiondepth.exceptions import LengthMismatch, ShapeMismatch
from motiondepth.geometry import Intrinsics, RigidTransform, relative_motion
from motiondepth.gradcheck import max_rel_error, numeric_gradient
from motiondepth.layers import (
    cost,
    cost_volume,
    cost_volume_backward,
    warp,
    warp_backward,
)

K = Intrinsics(fx=64.0, fy=64.0, s=0.0, cx=15.5, cy=15.5, width=32, height=32)


def plane_depth_map(k, pose, plane_z):
    """Per-pixel z-depth of the world plane z=plane_z seen from pose."""
    jj, ii = np.meshgrid(np.arange(k.height, dtype=np.float64),
                         np.arange(k.width, dtype=np.float64), indexing="ij")
    dirs = np.stack([(ii - k.cx) / k.fx, (jj - k.cy) / k.fy, np.ones_like(ii)], axis=-1)
    world_dirs = dirs @ pose.rotation.T
    cam_pos = pose.rotation @ pose.translation
    return (plane_z - cam_pos[2]) / world_dirs[..., 2]


class TestWarp:
    def test_identity_motion_is_exact(self):
        rng = np.random.default_rng(0)
        src = rng.normal(size=(32, 32, 3)).astype(np.float32)
        depth = rng.uniform(2.0, 9.0, size=(32, 32, 1)).astype(np.float32)
        res, _ = warp(src, depth, RigidTransform.identity(), K)
        assert np.array_equal(res.warped, src)
        assert np.array_equal(res.validity, np.ones((32, 32, 1), dtype=np.float32))

    def test_integer_plane_shift(self):
        # constant depth 8, x-translation 0.25: shift = 64 * 0.25 / 8 = 2 px
        rng = np.random.default_rng(1)
        src = rng.normal(size=(32, 32, 2)).astype(np.float32)
        depth = np.full((32, 32, 1), 8.0, dtype=np.float32)
        motion = RigidTransform(np.eye(3), np.array([0.25, 0.0, 0.0]))
        res, _ = warp(src, depth, motion, K)
        np.testing.assert_allclose(res.warped[:, :30], src[:, 2:], atol=1e-6)
        assert np.all(res.validity[:, :30] == 1.0)
        # the last two columns sample outside the source frame
        assert np.all(res.validity[:, 30:] == 0.0)
        assert np.all(res.warped[:, 30:] == 0.0)

    def test_textured_plane_matches_current_rendering(self):
        # both views render the same textured plane; warping the old view
        # with the true depth must reproduce the new view
        plane_z, baseline = 10.0, 0.5
        shift = K.fx * baseline / plane_z  # 3.2 px

        def render(cam_x):
            jj, ii = np.meshgrid(np.arange(32.0), np.arange(32.0), indexing="ij")
            u = cam_x + (ii - K.cx) * plane_z / K.fx
            v = (jj - K.cy) * plane_z / K.fy
            return (np.sin(0.05 * u * K.fx / plane_z) + 0.5 * np.cos(0.04 * v * K.fy / plane_z)
                    + 0.02 * u)[..., None]

        prev_img = render(0.0)
        cur_img = render(baseline)
        depth = np.full((32, 32, 1), plane_z)
        motion = RigidTransform(np.eye(3), np.array([baseline, 0.0, 0.0]))
        res, _ = warp(prev_img, depth, motion, K)
        interior = res.warped[2:-2, : 32 - int(np.ceil(shift)) - 1]
        expected = cur_img[2:-2, : 32 - int(np.ceil(shift)) - 1]
        assert np.abs(interior - expected).mean() < 1e-3

    def test_depth_value_transform_two_views(self):
        # a static plane seen from two poses: warping the old z-depth map
        # with value transformation must match the new z-depth map
        rng = np.random.default_rng(5)
        pose_a = RigidTransform.from_world_pose(
            np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0])
        )
        qb = np.array([1.0, 0.004, -0.006, 0.003])
        qb /= np.linalg.norm(qb)
        pose_b = RigidTransform.from_world_pose(np.array([0.3, -0.2, 0.4]), qb)
        d_prev = plane_depth_map(K, pose_a, 12.0)[..., None]
        d_cur = plane_depth_map(K, pose_b, 12.0)[..., None]
        motion = relative_motion(pose_a, pose_b)
        res, _ = warp(d_prev, d_cur, motion, K, transform_depth_values=True)
        ok = res.validity[..., 0] == 1.0
        assert ok.mean() > 0.8
        np.testing.assert_allclose(res.warped[ok], d_cur[ok], rtol=2e-3)

    def test_gradcheck_source_only(self):
        rng = np.random.default_rng(7)
        k = Intrinsics(fx=20.0, fy=20.0, s=0.0, cx=2.5, cy=2.5, width=6, height=6)
        src = rng.normal(size=(6, 6, 2))
        depth = rng.uniform(4.0, 6.0, size=(6, 6, 1))
        motion = RigidTransform(np.eye(3), np.array([0.11, -0.07, 0.05]))
        res, cache = warp(src, depth, motion, k)
        sel = rng.normal(size=res.warped.shape)
        gsrc, gdepth = warp_backward(cache, sel)

        def loss():
            out, _ = warp(src, depth, motion, k)
            return np.sum(out.warped * sel)

        assert max_rel_error(gsrc, numeric_gradient(loss, src)) < 1e-4
        # the output genuinely depends on depth, but the layer refuses to
        # propagate through the sampling coordinates
        numeric_d = numeric_gradient(loss, depth)
        assert np.abs(numeric_d).max() > 1e-4
        assert np.array_equal(gdepth, np.zeros_like(depth))

    def test_gradcheck_depth_transform_path(self):
        rng = np.random.default_rng(8)
        k = Intrinsics(fx=20.0, fy=20.0, s=0.0, cx=2.5, cy=2.5, width=6, height=6)
        src = rng.uniform(4.0, 8.0, size=(6, 6, 1))
        depth = rng.uniform(4.0, 6.0, size=(6, 6, 1))
        motion = RigidTransform(np.eye(3), np.array([-0.06, 0.04, 0.08]))
        res, cache = warp(src, depth, motion, k, transform_depth_values=True)
        sel = rng.normal(size=res.warped.shape)
        gsrc, gdepth = warp_backward(cache, sel)

        def loss():
            out, _ = warp(src, depth, motion, k, transform_depth_values=True)
            return np.sum(out.warped * sel)

        assert max_rel_error(gsrc, numeric_gradient(loss, src)) < 1e-4
        assert np.array_equal(gdepth, np.zeros_like(depth))

    def test_shape_mismatch(self):
        src = np.zeros((8, 8, 2), dtype=np.float32)
        depth = np.ones((6, 8, 1), dtype=np.float32)
        with pytest.raises(ShapeMismatch):
            warp(src, depth, RigidTransform.identity(), K)


class TestCost:
    def test_hand_values(self):
        v = np.array([1.0, 0.0, 0.0, 0.0])
        assert cost(v, v) == 0.25
        assert cost(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
        assert cost(np.array([2.0, 0.0]), np.array([2.0, 0.0])) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            cost(np.ones(3), np.ones(4))
        with pytest.raises(LengthMismatch):
            cost(np.ones(0), np.ones(0))


def cost_volume_naive(f1, f2, r):
    h, w, l = f1.shape
    side = 2 * r + 1
    out = np.zeros((h, w, side * side), dtype=f1.dtype)
    for j in range(h):
        for i in range(w):
            for kj in range(-r, r + 1):
                for ki in range(-r, r + 1):
                    c = (kj + r) * side + (ki + r)
                    j2, i2 = j + kj, i + ki
                    if 0 <= j2 < h and 0 <= i2 < w:
                        out[j, i, c] = cost(f1[j, i], f2[j2, i2])
    return out


class TestCostVolume:
    def test_output_shape_r4(self):
        rng = np.random.default_rng(0)
        f = rng.normal(size=(8, 8, 16)).astype(np.float32)
        cv, _ = cost_volume(f, f, 4)
        assert cv.shape == (8, 8, 81)

    def test_r0_is_pointwise_cost(self):
        rng = np.random.default_rng(1)
        f1 = rng.normal(size=(5, 6, 3))
        f2 = rng.normal(size=(5, 6, 3))
        cv, _ = cost_volume(f1, f2, 0)
        assert cv.shape == (5, 6, 1)
        for j in range(5):
            for i in range(6):
                assert cv[j, i, 0] == cost(f1[j, i], f2[j, i])

    def test_matches_naive_oracle_bit_exact(self):
        rng = np.random.default_rng(2)
        f1 = rng.normal(size=(8, 8, 4))
        f2 = rng.normal(size=(8, 8, 4))
        for r in (1, 2):
            cv, _ = cost_volume(f1, f2, r)
            assert np.array_equal(cv, cost_volume_naive(f1, f2, r))

    def test_self_match_center_argmax(self):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(8, 8, 16))
        cv, _ = cost_volume(f, f, 1)
        interior = cv[1:-1, 1:-1]
        assert np.all(np.argmax(interior, axis=-1) == 4)

    def test_self_match_probability_over_seeds(self):
        hits = total = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            f = rng.normal(size=(8, 8, 32))
            cv, _ = cost_volume(f, f, 1)
            am = np.argmax(cv[1:-1, 1:-1], axis=-1)
            hits += int((am == 4).sum())
            total += am.size
        assert hits / total > 0.99

    def test_offset_sign_convention(self):
        # f2 equals f1 shifted right by 2 px: f2(i) = f1(i - 2), so the best
        # f2 match for f1 at column i sits at i + 2, channel (0+r, +2+r)
        rng = np.random.default_rng(4)
        f1 = rng.normal(size=(6, 12, 8)).astype(np.float32)
        f1 /= np.linalg.norm(f1, axis=-1, keepdims=True)
        f2 = np.zeros_like(f1)
        f2[:, 2:] = f1[:, :-2]
        cv, _ = cost_volume(f1, f2, 3)
        side = 2 * 3 + 1
        expect = (0 + 3) * side + (2 + 3)
        am = np.argmax(cv[:, :-5], axis=-1)
        assert np.all(am == expect)

    def test_receptive_field_scaling(self):
        # a displacement of k * 2^l full-resolution pixels appears as a
        # k-pixel match once features are subsampled by 2^l
        rng = np.random.default_rng(6)
        level, k_off = 2, 2
        stride = 2 ** level
        full_shift = k_off * stride  # 8 input-image pixels
        f1_full = rng.normal(size=(48, 64, 6)).astype(np.float32)
        f1_full /= np.linalg.norm(f1_full, axis=-1, keepdims=True)
        f2_full = np.zeros_like(f1_full)
        f2_full[:, full_shift:] = f1_full[:, :-full_shift]
        f1l = f1_full[::stride, ::stride]
        f2l = f2_full[::stride, ::stride]
        cv, _ = cost_volume(f1l, f2l, 4)
        side = 9
        expect = (0 + 4) * side + (k_off + 4)
        am = np.argmax(cv[:, : f1l.shape[1] - 4 - k_off], axis=-1)
        assert np.all(am == expect)

    def test_gradcheck_both_inputs(self):
        rng = np.random.default_rng(9)
        f1 = rng.normal(size=(4, 5, 3))
        f2 = rng.normal(size=(4, 5, 3))
        cv, cache = cost_volume(f1, f2, 1)
        sel = rng.normal(size=cv.shape)
        g1, g2 = cost_volume_backward(cache, sel)

        def loss():
            out, _ = cost_volume(f1, f2, 1)
            return np.sum(out * sel)

        assert max_rel_error(g1, numeric_gradient(loss, f1)) < 1e-4
        assert max_rel_error(g2, numeric_gradient(loss, f2)) < 1e-4

    def test_batch_axis_consistency(self):
        rng = np.random.default_rng(10)
        f1 = rng.normal(size=(2, 6, 6, 4)).astype(np.float32)
        f2 = rng.normal(size=(2, 6, 6, 4)).astype(np.float32)
        cvb, cache = cost_volume(f1, f2, 2)
        for n in range(2):
            cvn, _ = cost_volume(f1[n], f2[n], 2)
            np.testing.assert_array_equal(cvb[n], cvn)
        gy = rng.normal(size=cvb.shape).astype(np.float32)
        g1, g2 = cost_volume_backward(cache, gy)
        assert g1.shape == f1.shape and g2.shape == f2.shape

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            cost_volume(np.zeros((4, 4, 2)), np.zeros((4, 4, 3)), 1)
