"""Gradient checks for every autodiff primitive against central differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feat import autodiff as ad


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar-valued fn at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fn(x)
        flat[i] = old - eps
        lo = fn(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def check_gradient(build, *arrays, eps=1e-6, tol=1e-7):
    """build(*tensors) -> scalar Tensor; checks each input's gradient."""
    tensors = [ad.Tensor.parameter(a) for a in arrays]
    out = build(*tensors)
    assert out.size == 1
    out.backward()
    for k, t in enumerate(tensors):
        def scalar_at(_x, _k=k):
            args = [ad.Tensor.constant(u.data) for u in tensors]
            args[_k] = ad.Tensor.constant(_x)
            return float(build(*args).data)

        num = numeric_grad(scalar_at, np.array(arrays[k], dtype=np.float64), eps=eps)
        got = t.grad
        assert got is not None, f"input {k} received no gradient"
        denom = np.maximum(1e-6, np.abs(num) + np.abs(got))
        rel = np.abs(got - num) / denom
        assert rel.max() < tol, f"input {k}: max rel err {rel.max():.3e}"


RNG = np.random.default_rng(42)


class TestTapeMechanics:
    def test_constant_inputs_build_no_tape(self):
        a = ad.Tensor.constant(RNG.standard_normal((3, 3)))
        b = ad.Tensor.constant(RNG.standard_normal((3, 3)))
        out = a @ b + a
        assert not out.requires_grad
        assert out._parents == ()
        assert out._backward is None

    def test_grad_accumulates_over_reuse(self):
        x = ad.Tensor.parameter([2.0])
        y = (x * x + x * 3.0).sum()
        y.backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_backward_requires_scalar(self):
        x = ad.Tensor.parameter(RNG.standard_normal((2, 2)))
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_detach_stops_gradient(self):
        x = ad.Tensor.parameter([1.5])
        y = (x.detach() * x).sum()
        y.backward()
        np.testing.assert_allclose(x.grad, [1.5])

    def test_diamond_graph_topological_order(self):
        x = ad.Tensor.parameter([1.0, 2.0])
        h = x * 2.0
        y = (h * h + h).sum()
        y.backward()
        # d/dx (4x^2 + 2x) = 8x + 2
        np.testing.assert_allclose(x.grad, [10.0, 18.0])


class TestArithmetic:
    def test_add_broadcast(self):
        check_gradient(lambda a, b: (a + b).sum(), RNG.standard_normal((3, 4)), RNG.standard_normal((4,)))

    def test_sub_broadcast(self):
        check_gradient(lambda a, b: (a - b).sum(), RNG.standard_normal((2, 3)), RNG.standard_normal((1, 3)))

    def test_mul_broadcast(self):
        check_gradient(lambda a, b: (a * b).sum(), RNG.standard_normal((3, 1, 4)), RNG.standard_normal((2, 4)))

    def test_div(self):
        b = RNG.standard_normal((3, 3))
        b += np.sign(b) * 1.0  # keep denominators away from zero
        check_gradient(lambda x, y: (x / y).sum(), RNG.standard_normal((3, 3)), b)

    def test_scalar_operand_paths(self):
        x = ad.Tensor.parameter([1.0, -2.0])
        y = ((2.0 - x) * 0.5 + 1.0 / (x * x + 3.0)).sum()
        y.backward()
        want = -0.5 - 2.0 * x.data / (x.data * x.data + 3.0) ** 2
        np.testing.assert_allclose(x.grad, want, atol=1e-12)

    def test_neg(self):
        check_gradient(lambda a: (-a).sum(), RNG.standard_normal((4,)))


class TestShapeOps:
    def test_reshape(self):
        check_gradient(lambda a: (a.reshape(6) * np.arange(6.0)).sum(), RNG.standard_normal((2, 3)))

    def test_transpose_default(self):
        w = RNG.standard_normal((4, 3))
        check_gradient(lambda a: (a.T * w).sum(), RNG.standard_normal((3, 4)))

    def test_transpose_axes(self):
        w = RNG.standard_normal((4, 2, 3))
        check_gradient(lambda a: (a.transpose(2, 0, 1) * w).sum(), RNG.standard_normal((2, 3, 4)))

    def test_getitem_slice(self):
        check_gradient(lambda a: (a[1:, :2] * 2.0).sum(), RNG.standard_normal((3, 4)))

    def test_getitem_int_row(self):
        check_gradient(lambda a: (a[1] * np.arange(4.0)).sum(), RNG.standard_normal((3, 4)))

    def test_concat(self):
        w = RNG.standard_normal((5, 2))
        check_gradient(
            lambda a, b: (ad.concat([a, b], axis=0) * w).sum(),
            RNG.standard_normal((3, 2)),
            RNG.standard_normal((2, 2)),
        )

    def test_concat_axis1(self):
        w = RNG.standard_normal((2, 5))
        check_gradient(
            lambda a, b: (ad.concat([a, b], axis=1) * w).sum(),
            RNG.standard_normal((2, 3)),
            RNG.standard_normal((2, 2)),
        )


class TestReductions:
    @pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), ((0, 2), False), ((1, 2), True)])
    def test_sum(self, axis, keepdims):
        w_shape = np.sum(np.zeros((2, 3, 4)), axis=axis, keepdims=keepdims).shape
        w = RNG.standard_normal(w_shape)
        check_gradient(lambda a: (a.sum(axis=axis, keepdims=keepdims) * w).sum(), RNG.standard_normal((2, 3, 4)))

    @pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), ((1, 2), True)])
    def test_mean(self, axis, keepdims):
        w_shape = np.mean(np.zeros((2, 3, 4)), axis=axis, keepdims=keepdims).shape
        w = RNG.standard_normal(w_shape)
        check_gradient(lambda a: (a.mean(axis=axis, keepdims=keepdims) * w).sum(), RNG.standard_normal((2, 3, 4)))


class TestNonlinearities:
    def test_abs_away_from_zero(self):
        x = RNG.standard_normal((3, 3))
        x += np.sign(x) * 0.5
        check_gradient(lambda a: a.abs().sum(), x)

    def test_sqrt(self):
        x = np.abs(RNG.standard_normal((3, 3))) + 0.5
        check_gradient(lambda a: a.sqrt().sum(), x)

    def test_exp(self):
        check_gradient(lambda a: a.exp().sum(), RNG.standard_normal((3, 3)) * 0.5)

    def test_sigmoid(self):
        check_gradient(lambda a: a.sigmoid().sum(), RNG.standard_normal((3, 3)) * 3.0)

    def test_sigmoid_stable_at_extremes(self):
        x = ad.Tensor.constant([-1000.0, 0.0, 1000.0])
        y = ad.sigmoid(x)
        np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0], atol=1e-12)
        assert np.all(np.isfinite(y.data))

    def test_leaky_relu(self):
        x = RNG.standard_normal((4, 4))
        x += np.sign(x) * 0.25  # keep samples off the kink
        check_gradient(lambda a: a.leaky_relu(0.2).sum(), x)

    def test_leaky_relu_values(self):
        x = ad.Tensor.constant([-2.0, 3.0])
        np.testing.assert_allclose(ad.leaky_relu(x, 0.2).data, [-0.4, 3.0])

    def test_l2norm(self):
        check_gradient(lambda a: ad.l2norm(a), RNG.standard_normal((3, 4)) + 0.1)

    def test_l2norm_zero_input_gives_zero_grad(self):
        x = ad.Tensor.parameter(np.zeros((2, 2)))
        ad.l2norm(x).backward()
        np.testing.assert_array_equal(x.grad, np.zeros((2, 2)))


class TestLinearAlgebra:
    def test_matmul(self):
        w = RNG.standard_normal((3, 5))
        check_gradient(
            lambda a, b: ((a @ b) * w).sum(),
            RNG.standard_normal((3, 4)),
            RNG.standard_normal((4, 5)),
        )

    def test_matmul_rejects_1d(self):
        with pytest.raises(ValueError):
            ad.matmul(ad.Tensor.constant(np.ones(3)), ad.Tensor.constant(np.ones((3, 2))))


class TestSpatialOps:
    def test_conv3x3_input_grad(self):
        w = RNG.standard_normal((2, 3, 3, 3))
        check_gradient(
            lambda x: (ad.conv3x3(x, ad.Tensor.constant(w)) * 0.1).sum(),
            RNG.standard_normal((3, 4, 5)),
        )

    def test_conv3x3_weight_grad(self):
        x = RNG.standard_normal((3, 4, 5))
        check_gradient(
            lambda w: (ad.conv3x3(ad.Tensor.constant(x), w) * 0.1).sum(),
            RNG.standard_normal((2, 3, 3, 3)),
        )

    def test_conv3x3_both_grads(self):
        check_gradient(
            lambda x, w: ad.conv3x3(x, w).sum(),
            RNG.standard_normal((2, 3, 4)),
            RNG.standard_normal((3, 2, 3, 3)),
        )

    def test_conv3x3_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.conv3x3(ad.Tensor.constant(np.ones((3, 4, 4))), ad.Tensor.constant(np.ones((2, 5, 3, 3))))

    def test_upsample2_values(self):
        x = ad.Tensor.constant(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        y = ad.upsample2(x)
        want = np.array([[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]], dtype=np.float64)
        np.testing.assert_array_equal(y.data, want)

    def test_upsample2_grad(self):
        w = RNG.standard_normal((2, 6, 8))
        check_gradient(lambda x: (ad.upsample2(x) * w).sum(), RNG.standard_normal((2, 3, 4)))

    def test_resize_bilinear_identity(self):
        x = RNG.standard_normal((3, 5, 5))
        y = ad.resize_bilinear(ad.Tensor.constant(x), (5, 5))
        np.testing.assert_array_equal(y.data, x)

    def test_resize_bilinear_constant_preserved(self):
        x = ad.Tensor.constant(np.full((1, 4, 4), 7.0))
        y = ad.resize_bilinear(x, (9, 13))
        np.testing.assert_allclose(y.data, 7.0, atol=1e-12)

    def test_resize_bilinear_grad_up(self):
        w = RNG.standard_normal((2, 8, 8))
        check_gradient(lambda x: (ad.resize_bilinear(x, (8, 8)) * w).sum(), RNG.standard_normal((2, 4, 4)))

    def test_resize_bilinear_grad_down(self):
        w = RNG.standard_normal((2, 3, 3))
        check_gradient(lambda x: (ad.resize_bilinear(x, (3, 3)) * w).sum(), RNG.standard_normal((2, 6, 6)))


class TestBlend:
    def test_endpoints_bit_exact(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((4, 6, 6))
        b = rng.standard_normal((4, 6, 6))
        ones = ad.blend(ad.Tensor.constant(a), ad.Tensor.constant(b), ad.Tensor.constant(np.ones((1, 6, 6))))
        zeros = ad.blend(ad.Tensor.constant(a), ad.Tensor.constant(b), ad.Tensor.constant(np.zeros((1, 6, 6))))
        np.testing.assert_array_equal(ones.data, b)
        np.testing.assert_array_equal(zeros.data, a)

    def test_interior_is_convex_mix(self):
        a = ad.Tensor.constant(np.zeros((1, 2, 2)))
        b = ad.Tensor.constant(np.full((1, 2, 2), 10.0))
        m = ad.Tensor.constant(np.full((1, 2, 2), 0.25))
        np.testing.assert_allclose(ad.blend(a, b, m).data, 2.5)

    def test_gradients_all_inputs(self):
        m = np.clip(RNG.uniform(0.05, 0.95, size=(1, 4, 4)), 0.05, 0.95)
        check_gradient(
            lambda a, b, mm: ad.blend(a, b, mm).sum(),
            RNG.standard_normal((3, 4, 4)),
            RNG.standard_normal((3, 4, 4)),
            m,
        )

    def test_mask_grad_sums_over_channels(self):
        a = ad.Tensor.constant(np.zeros((3, 2, 2)))
        b = ad.Tensor.constant(np.ones((3, 2, 2)))
        m = ad.Tensor.parameter(np.full((1, 2, 2), 0.5))
        ad.blend(a, b, m).sum().backward()
        np.testing.assert_allclose(m.grad, np.full((1, 2, 2), 3.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=6))
def test_unbroadcast_matches_numeric_on_random_shapes(c, h, w):
    rng = np.random.default_rng(c * 100 + h * 10 + w)
    a = rng.standard_normal((c, h, w))
    b = rng.standard_normal((1, h, 1))
    ta, tb = ad.Tensor.parameter(a), ad.Tensor.parameter(b)
    (ta * tb).sum().backward()
    np.testing.assert_allclose(ta.grad, np.broadcast_to(b, a.shape), atol=1e-12)
    np.testing.assert_allclose(tb.grad, a.sum(axis=(0, 2), keepdims=True), atol=1e-12)
