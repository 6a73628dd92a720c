import numpy as np
import pytest

from motiondepth.gradcheck import max_rel_error, numeric_gradient
from motiondepth.ops import (
    AdamState,
    ParamTensor,
    adam_step,
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
    resize_nearest,
)
from motiondepth.exceptions import ShapeMismatch


def conv3x3_naive(x, w, b, stride):
    """Scalar-loop reference: kernel centered on (stride*oy, stride*ox)."""
    h, wd, cin = x.shape
    cout = w.shape[3]
    ho = -(-h // stride)
    wo = -(-wd // stride)
    y = np.zeros((ho, wo, cout), dtype=np.float64)
    for oy in range(ho):
        for ox in range(wo):
            for ky in range(3):
                for kx in range(3):
                    sy = stride * oy + ky - 1
                    sx = stride * ox + kx - 1
                    if 0 <= sy < h and 0 <= sx < wd:
                        y[oy, ox] += x[sy, sx] @ w[ky, kx]
            y[oy, ox] += b
    return y


class TestConv3x3:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 7, 3)).astype(np.float32)
        w = np.zeros((3, 3, 3, 3), dtype=np.float32)
        for c in range(3):
            w[1, 1, c, c] = 1.0
        y, _ = conv3x3(x, w, np.zeros(3, dtype=np.float32), stride=1)
        assert np.array_equal(y, x)

    def test_all_ones_kernel_constant_interior(self):
        x = np.full((6, 6, 1), 5.0, dtype=np.float32)
        w = np.ones((3, 3, 1, 1), dtype=np.float32)
        y, _ = conv3x3(x, w, np.zeros(1, dtype=np.float32))
        assert np.all(y[1:-1, 1:-1] == 45.0)
        # border pixels see zero padding, so they sum fewer taps
        assert y[0, 0, 0] == 20.0

    @pytest.mark.parametrize("stride,h,w", [(1, 6, 5), (2, 8, 8), (2, 7, 9)])
    def test_matches_naive_loop(self, stride, h, w):
        rng = np.random.default_rng(stride * 100 + h)
        x = rng.normal(size=(h, w, 3))
        wt = rng.normal(size=(3, 3, 3, 4))
        b = rng.normal(size=4)
        y, _ = conv3x3(x, wt, b, stride=stride)
        ref = conv3x3_naive(x, wt, b, stride)
        assert y.shape == ref.shape
        np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)

    def test_stride2_output_is_ceil(self):
        x = np.zeros((7, 9, 2), dtype=np.float32)
        w = np.zeros((3, 3, 2, 1), dtype=np.float32)
        y, _ = conv3x3(x, w, np.zeros(1, dtype=np.float32), stride=2)
        assert y.shape == (4, 5, 1)

    def test_gradcheck(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 6, 3))
        w = rng.normal(size=(3, 3, 3, 4)) * 0.5
        b = rng.normal(size=4)
        sel = rng.normal(size=(6, 6, 4))

        def loss():
            y, _ = conv3x3(x, w, b, stride=1)
            return np.sum(y * sel)

        y, cache = conv3x3(x, w, b, stride=1)
        gx, gw, gb = conv3x3_backward(cache, sel)
        assert max_rel_error(gx, numeric_gradient(loss, x)) < 1e-4
        assert max_rel_error(gw, numeric_gradient(loss, w)) < 1e-4
        assert max_rel_error(gb, numeric_gradient(loss, b)) < 1e-4

    def test_gradcheck_stride2(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(5, 6, 2))
        w = rng.normal(size=(3, 3, 2, 3)) * 0.5
        b = rng.normal(size=3)
        y, cache = conv3x3(x, w, b, stride=2)
        sel = rng.normal(size=y.shape)
        gx, gw, gb = conv3x3_backward(cache, sel)

        def loss():
            out, _ = conv3x3(x, w, b, stride=2)
            return np.sum(out * sel)

        assert max_rel_error(gx, numeric_gradient(loss, x)) < 1e-4
        assert max_rel_error(gw, numeric_gradient(loss, w)) < 1e-4
        assert max_rel_error(gb, numeric_gradient(loss, b)) < 1e-4

    def test_linear_in_input(self):
        rng = np.random.default_rng(3)
        x1 = rng.normal(size=(5, 5, 2))
        x2 = rng.normal(size=(5, 5, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        zb = np.zeros(3)
        a, b = 1.7, -0.4
        lhs, _ = conv3x3(a * x1 + b * x2, w, zb)
        y1, _ = conv3x3(x1, w, zb)
        y2, _ = conv3x3(x2, w, zb)
        np.testing.assert_allclose(lhs, a * y1 + b * y2, atol=1e-5)

    def test_batch_matches_per_sample(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 6, 7, 2)).astype(np.float32)
        w = rng.normal(size=(3, 3, 2, 4)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        yb, cache = conv3x3(x, w, b, stride=2)
        for n in range(3):
            yn, _ = conv3x3(x[n], w, b, stride=2)
            np.testing.assert_array_equal(yb[n], yn)
        gy = rng.normal(size=yb.shape).astype(np.float32)
        gx, gw, gb2 = conv3x3_backward(cache, gy)
        assert gx.shape == x.shape and gw.shape == w.shape and gb2.shape == b.shape

    def test_shape_errors(self):
        x = np.zeros((4, 4, 2), dtype=np.float32)
        with pytest.raises(ShapeMismatch):
            conv3x3(x, np.zeros((3, 3, 3, 1), dtype=np.float32), np.zeros(1))
        with pytest.raises(ShapeMismatch):
            conv3x3(x, np.zeros((5, 5, 2, 1), dtype=np.float32), np.zeros(1))
        with pytest.raises(ShapeMismatch):
            conv3x3(x, np.zeros((3, 3, 2, 4), dtype=np.float32), np.zeros(3))


class TestLeakyRelu:
    def test_hand_values(self):
        y, _ = leaky_relu(np.array([2.0, -2.0, 0.0], dtype=np.float32))
        np.testing.assert_allclose(y, [2.0, -0.2, 0.0], rtol=1e-6)

    def test_gradcheck(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 5, 2)) * 2.0
        sel = rng.normal(size=x.shape)
        y, cache = leaky_relu(x)
        gx = leaky_relu_backward(cache, sel)

        def loss():
            out, _ = leaky_relu(x)
            return np.sum(out * sel)

        assert max_rel_error(gx, numeric_gradient(loss, x)) < 1e-4


class TestResize:
    def test_constant_maps_to_constant(self):
        x = np.full((5, 7, 2), 3.0, dtype=np.float32)
        for oh, ow in [(3, 3), (10, 14), (5, 7), (1, 1)]:
            y = resize_bilinear(x, oh, ow)
            assert y.shape == (oh, ow, 2)
            np.testing.assert_allclose(y, 3.0, rtol=1e-6)

    def test_hand_1d_upscale(self):
        x = np.array([1.0, 3.0], dtype=np.float32).reshape(1, 2, 1)
        y = resize_bilinear(x, 1, 4)
        np.testing.assert_allclose(y[0, :, 0], [1.0, 1.5, 2.5, 3.0], rtol=1e-6)

    def test_identity_size_exact(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 4, 3)).astype(np.float32)
        assert np.array_equal(resize_bilinear(x, 6, 4), x)
        assert np.array_equal(resize_nearest(x, 6, 4), x)

    def test_downscale_samples_midpoints(self):
        x = np.arange(4.0, dtype=np.float32).reshape(1, 4, 1)
        y = resize_bilinear(x, 1, 2)
        np.testing.assert_allclose(y[0, :, 0], [0.5, 2.5], rtol=1e-6)

    def test_nearest_upscale_duplicates(self):
        x = np.array([[1.0], [4.0]], dtype=np.float32).reshape(1, 2, 1)
        y = resize_nearest(x, 1, 4)
        np.testing.assert_array_equal(y[0, :, 0], [1.0, 1.0, 4.0, 4.0])

    def test_nearest_preserves_value_set(self):
        rng = np.random.default_rng(9)
        x = rng.integers(0, 50, size=(9, 11, 1)).astype(np.float32)
        y = resize_nearest(x, 5, 23)
        assert set(np.unique(y)) <= set(np.unique(x))

    def test_bilinear_gradcheck(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(5, 7, 2))
        sel = rng.normal(size=(8, 6, 2))
        gx = resize_bilinear_backward(sel, 5, 7)

        def loss():
            return np.sum(resize_bilinear(x, 8, 6) * sel)

        # the resize is linear in x, so the backward does not depend on x;
        # still check against differences at this point
        assert max_rel_error(gx, numeric_gradient(loss, x)) < 1e-4

    def test_bilinear_batch_axis(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
        y = resize_bilinear(x, 8, 8)
        assert y.shape == (2, 8, 8, 3)
        np.testing.assert_array_equal(y[1], resize_bilinear(x[1], 8, 8))


class TestLogDepthCodec:
    def test_hand_values(self):
        d = np.array([1.0, np.e, 0.0], dtype=np.float32).reshape(1, 3, 1)
        x, _ = log_depth_encode(d)
        np.testing.assert_allclose(x[0, :, 0], [0.0, 1.0, np.log(0.1)], rtol=1e-6)

    def test_round_trip_is_clamp(self):
        rng = np.random.default_rng(5)
        d = (10.0 ** rng.uniform(-2, 3, size=(6, 6, 1))).astype(np.float32)
        x, _ = log_depth_encode(d)
        back, _ = log_depth_decode(x)
        np.testing.assert_allclose(back, np.clip(d, 0.1, 200.0), rtol=1e-6)
        assert np.all(back > 0)

    def test_decode_clamps(self):
        d, _ = log_depth_decode(np.array([-10.0, 10.0], dtype=np.float32))
        np.testing.assert_allclose(d, [0.1, 200.0], rtol=1e-6)

    def test_encode_gradcheck_and_clamp_zeroing(self):
        rng = np.random.default_rng(21)
        d = rng.uniform(0.5, 50.0, size=(4, 4, 1))
        sel = rng.normal(size=d.shape)
        _, cache = log_depth_encode(d)
        gd = log_depth_encode_backward(cache, sel)

        def loss():
            out, _ = log_depth_encode(d)
            return np.sum(out * sel)

        assert max_rel_error(gd, numeric_gradient(loss, d)) < 1e-4

        _, cache = log_depth_encode(np.array([0.05, 300.0]))
        g = log_depth_encode_backward(cache, np.ones(2))
        assert np.array_equal(g, np.zeros(2))

    def test_decode_gradcheck_and_clamp_zeroing(self):
        rng = np.random.default_rng(22)
        x = rng.uniform(-1.0, 4.0, size=(3, 5, 1))
        sel = rng.normal(size=x.shape)
        _, cache = log_depth_decode(x)
        gx = log_depth_decode_backward(cache, sel)

        def loss():
            out, _ = log_depth_decode(x)
            return np.sum(out * sel)

        assert max_rel_error(gx, numeric_gradient(loss, x)) < 1e-4

        _, cache = log_depth_decode(np.array([-10.0, 10.0]))
        g = log_depth_decode_backward(cache, np.ones(2))
        assert np.array_equal(g, np.zeros(2))


class TestInitAndAdam:
    def test_he_deterministic(self):
        a = he_init((3, 3, 4, 8), rng=123)
        b = he_init((3, 3, 4, 8), rng=123)
        assert np.array_equal(a, b)
        assert a.dtype == np.float32

    def test_he_variance(self):
        draws = he_init((100000,), rng=17, fan_in=100).astype(np.float64)
        var = draws.var()
        assert abs(var - 0.02) < 0.002
        assert abs(draws.mean()) < 0.01

    def test_he_default_fan_in(self):
        # 3x3 conv weights: fan_in = 9 * Cin
        draws = he_init((3, 3, 40, 300), rng=19).astype(np.float64)
        assert abs(draws.var() - 2.0 / 360.0) < 0.1 * 2.0 / 360.0

    def test_zero_grad_step_is_noop(self):
        p = ParamTensor("w", np.array([1.0, -2.0, 3.0], dtype=np.float32))
        state = AdamState()
        adam_step([p], state, lr=0.1)
        np.testing.assert_array_equal(p.value, [1.0, -2.0, 3.0])

    def test_scalar_recurrence_three_steps(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = ParamTensor("w", np.array([0.5]))
        state = AdamState()
        theta, m, v = 0.5, 0.0, 0.0
        for t in range(1, 4):
            p.grad[...] = 1.0
            adam_step([p], state, lr=lr)
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            np.testing.assert_allclose(p.value[0], theta, rtol=1e-12)

    def test_param_tensor_checks(self):
        with pytest.raises(ShapeMismatch):
            ParamTensor("w", np.zeros((2, 2)), grad=np.zeros(3))
        p = ParamTensor("w", np.ones(4))
        p.grad[...] = 5.0
        p.zero_grad()
        assert np.array_equal(p.grad, np.zeros(4))


def test_backward_property_sweep():
    """Every kernel with a backward pass survives FD checks on random shapes."""
    rng = np.random.default_rng(99)
    for trial in range(24):
        h = int(rng.integers(2, 6))
        w = int(rng.integers(2, 6))
        c = int(rng.integers(1, 4))
        kind = trial % 4
        if kind == 0:
            x = rng.normal(size=(h, w, c))
            cout = int(rng.integers(1, 4))
            wt = rng.normal(size=(3, 3, c, cout)) * 0.6
            b = rng.normal(size=cout)
            stride = int(rng.choice([1, 2]))
            y, cache = conv3x3(x, wt, b, stride=stride)
            sel = rng.normal(size=y.shape)
            gx, gw, gb = conv3x3_backward(cache, sel)

            def loss():
                out, _ = conv3x3(x, wt, b, stride=stride)
                return np.sum(out * sel)

            assert max_rel_error(gx, numeric_gradient(loss, x)) < 1e-4
            assert max_rel_error(gw, numeric_gradient(loss, wt)) < 1e-4
        elif kind == 1:
            x = rng.normal(size=(h, w, c)) * 3.0
            sel = rng.normal(size=x.shape)
            _, cache = leaky_relu(x)
            gx = leaky_relu_backward(cache, sel)

            def loss():
                out, _ = leaky_relu(x)
                return np.sum(out * sel)

            assert max_rel_error(gx, numeric_gradient(loss, x)) < 1e-4
        elif kind == 2:
            x = rng.normal(size=(h, w, c))
            oh = int(rng.integers(1, 8))
            ow = int(rng.integers(1, 8))
            sel = rng.normal(size=(oh, ow, c))
            gx = resize_bilinear_backward(sel, h, w)

            def loss():
                return np.sum(resize_bilinear(x, oh, ow) * sel)

            assert max_rel_error(gx, numeric_gradient(loss, x)) < 1e-4
        else:
            d = rng.uniform(0.3, 100.0, size=(h, w, 1))
            sel = rng.normal(size=d.shape)
            _, cache = log_depth_encode(d)
            gd = log_depth_encode_backward(cache, sel)

            def loss():
                out, _ = log_depth_encode(d)
                return np.sum(out * sel)

            assert max_rel_error(gd, numeric_gradient(loss, d)) < 1e-4
