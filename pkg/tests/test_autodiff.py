"""Gradient and forward-semantics checks for the autodiff core.

Every differentiable primitive is cross-checked against the central
finite-difference oracle at randomly sampled points away from kinks.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganmex import autodiff as ad


def fd_check(build, x0, rtol=1e-6, atol=1e-8, step=1e-6):
    """Compare autodiff gradient of build(x) against finite differences."""
    t = ad.Tensor(x0)
    out = build(t)
    (g,) = ad.gradients(out, [t])
    g_fd = ad.finite_difference_gradient(lambda arr: float(build(ad.Tensor(arr)).data), x0, step)
    np.testing.assert_allclose(g, g_fd, rtol=rtol, atol=atol)


class TestForwardSemantics:
    def test_relu_definition(self):
        out = ad.relu(ad.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_softmax_symmetry(self):
        out = ad.softmax(ad.Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_conv_windows_hand_computed(self):
        # 3x3 input, 2x2 all-ones kernel, stride 2 -> single output cell per
        # 2x2 window that fits: only the top-left window.
        x = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
        w = np.ones((1, 1, 2, 2))
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), stride=2)
        assert out.data.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == x[0, 0, 0, 0] + x[0, 0, 0, 1] + x[0, 0, 1, 0] + x[0, 0, 1, 1]

    def test_conv_stride1_all_windows(self):
        x = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
        w = np.ones((1, 1, 2, 2))
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), stride=1)
        expected = np.array([[x[0, 0, i : i + 2, j : j + 2].sum() for j in range(2)] for i in range(2)])
        np.testing.assert_allclose(out.data[0, 0], expected)

    def test_forward_purity(self):
        x = np.random.default_rng(0).normal(size=(2, 3))
        a = ad.softmax(ad.Tensor(x)).data
        b = ad.softmax(ad.Tensor(x)).data
        assert np.array_equal(a, b)

    def test_avg_pool(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        out = ad.avg_pool2d(ad.Tensor(x), 2)
        np.testing.assert_allclose(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_upsample_nearest(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        out = ad.upsample2d(ad.Tensor(x), 2)
        np.testing.assert_array_equal(out.data[0, 0, :2, :2], 1.0)
        np.testing.assert_array_equal(out.data[0, 0, 2:, 2:], 4.0)

    def test_shape_mismatch_named(self):
        with pytest.raises(ad.ShapeError, match="matmul"):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))
        with pytest.raises(ad.ShapeError, match="add"):
            ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4,))))
        with pytest.raises(ad.ShapeError, match="conv2d"):
            ad.conv2d(ad.Tensor(np.ones((1, 2, 4, 4))), ad.Tensor(np.ones((1, 3, 2, 2))))

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="log"):
            ad.log(ad.Tensor([1.0, 0.0]))


class TestBackward:
    def test_quadratic(self):
        x = ad.Tensor([1.0, 2.0])
        out = (x * x).sum()
        (g,) = ad.gradients(out, [x])
        np.testing.assert_allclose(g, [2.0, 4.0])

    def test_linear_score(self):
        w = np.array([0.3, -1.2, 2.0])
        x = ad.Tensor([1.0, 1.0, 1.0])
        out = (ad.Tensor(w) * x).sum()
        (g,) = ad.gradients(out, [x])
        np.testing.assert_allclose(g, w)

    def test_nonscalar_root_rejected(self):
        x = ad.Tensor([1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            (x * x).backward()

    def test_unused_tensor_rejected(self):
        x = ad.Tensor([1.0])
        y = ad.Tensor([2.0])
        out = (x * x).sum()
        with pytest.raises(ValueError, match="participate"):
            ad.gradients(out, [y])

    def test_reused_node_accumulates(self):
        x = ad.Tensor([3.0])
        out = (x * x + x).sum()
        (g,) = ad.gradients(out, [x])
        np.testing.assert_allclose(g, [7.0])

    def test_gradients_reset_between_backwards(self):
        x = ad.Tensor([2.0])
        out = (x * x).sum()
        out.backward()
        out.backward()
        np.testing.assert_allclose(x.grad, [4.0])


class TestFiniteDifferenceGradients:
    def test_fd_of_sum_is_ones(self):
        g = ad.finite_difference_gradient(lambda a: a.sum(), np.array([1.0, -2.0, 5.0]))
        np.testing.assert_allclose(g, 1.0)

    def test_fd_of_square(self):
        g = ad.finite_difference_gradient(lambda a: float(a[0] ** 2), np.array([3.0]), step=1e-3)
        np.testing.assert_allclose(g, [6.0], atol=1e-6)

    def test_fd_rejects_bad_step(self):
        with pytest.raises(ValueError):
            ad.finite_difference_gradient(lambda a: a.sum(), np.zeros(2), step=0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_primitive_grads_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=(3, 4)) + 0.1  # nudge away from relu/abs kinks
        fd_check(lambda t: ad.relu(t).sum(), x0)
        fd_check(lambda t: ad.sigmoid(t).sum(), x0)
        fd_check(lambda t: (ad.softmax(t) * ad.softmax(t)).sum(), x0)
        fd_check(lambda t: ad.absolute(t).mean(), x0)
        fd_check(lambda t: ad.log(ad.maximum(t, 0.5)).sum(), x0)
        fd_check(lambda t: ad.tmean(t, axis=1).sum(), x0)
        fd_check(lambda t: ad.select_columns(t, [1, 3, 0]).sum(), x0)
        fd_check(lambda t: ad.l2_norm(t), x0)
        fd_check(lambda t: ad.l1_norm(t), x0)
        w = rng.normal(size=(4, 2))
        fd_check(lambda t: ad.matmul(t, ad.Tensor(w)).sum(), x0)
        divisor = np.abs(rng.normal(size=(3, 4))) + 1.0
        fd_check(lambda t: (t / ad.Tensor(divisor)).sum(), x0)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (2, 1), (1, 2)])
    def test_conv_grads_match_fd(self, stride, padding):
        rng = np.random.default_rng(stride * 7 + padding)
        x0 = rng.normal(size=(2, 2, 5, 5))
        w0 = rng.normal(size=(3, 2, 3, 3))
        b0 = rng.normal(size=3)

        def build_x(t):
            return ad.conv2d(t, ad.Tensor(w0), ad.Tensor(b0), stride, padding).sum()

        def build_w(t):
            return ad.conv2d(ad.Tensor(x0), t, ad.Tensor(b0), stride, padding).sum()

        def build_b(t):
            return ad.conv2d(ad.Tensor(x0), ad.Tensor(w0), t, stride, padding).sum()

        fd_check(build_x, x0)
        fd_check(build_w, w0)
        fd_check(build_b, b0)

    def test_pool_upsample_concat_grads(self):
        rng = np.random.default_rng(11)
        x0 = rng.normal(size=(1, 2, 4, 4))
        fd_check(lambda t: ad.avg_pool2d(t, 2).sum(), x0)
        fd_check(lambda t: ad.upsample2d(t, 2).mean(), x0)
        other = ad.Tensor(rng.normal(size=(1, 3, 4, 4)))
        fd_check(lambda t: (ad.concat([t, other], axis=1) * 0.5).sum(), x0)


class TestSoftmaxProperties:
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
    @settings(max_examples=100, deadline=None)
    def test_sums_to_one_and_bounded(self, logits):
        p = ad.softmax(ad.Tensor(logits)).data
        assert abs(p.sum() - 1.0) < 1e-6
        assert np.all(p >= 0.0) and np.all(p <= 1.0)

    def test_relu_subgradient_zero_at_zero(self):
        x = ad.Tensor([0.0])
        out = ad.relu(x).sum()
        (g,) = ad.gradients(out, [x])
        assert g[0] == 0.0


def test_detach_blocks_gradient():
    x = ad.Tensor([2.0])
    y = x.detach()
    out = (y * y).sum()
    with pytest.raises(ValueError, match="participate"):
        ad.gradients(out, [x])


def test_dropout_identity_at_p_zero():
    rng = np.random.default_rng(0)
    x = ad.Tensor(np.ones((2, 2)))
    out = ad.dropout(x, 0.0, rng)
    np.testing.assert_array_equal(out.data, x.data)
