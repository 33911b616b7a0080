"""Unit tests for the im2col/col2im kernel pair and backend selection."""

import numpy as np
import pytest

from feat._kernels import BACKEND, backend_name, col2im3, im2col3, numpy_backend


def test_backend_name_reports_selected_backend():
    assert backend_name() == BACKEND
    assert BACKEND in ("numpy", "cython")


def test_im2col3_shape_and_center_tap():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 5, 7))
    cols = im2col3(x)
    assert cols.shape == (27, 35)
    # Tap k=4 is the 3x3 centre: an identity gather.
    for c in range(3):
        np.testing.assert_array_equal(cols[c * 9 + 4].reshape(5, 7), x[c])


def test_im2col3_zero_padding_at_borders():
    x = np.ones((1, 4, 4))
    cols = im2col3(x)
    # Tap k=0 reads (y-1, x-1); the first row and column fall in the pad.
    tap = cols[0].reshape(4, 4)
    assert np.all(tap[0, :] == 0)
    assert np.all(tap[:, 0] == 0)
    assert np.all(tap[1:, 1:] == 1)


def test_col2im3_is_adjoint_of_im2col3():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 6, 5))
    y = rng.standard_normal((36, 30))
    lhs = float(np.sum(im2col3(x) * y))
    rhs = float(np.sum(x * col2im3(y, 6, 5)))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_backends_bit_identical():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 16, 16))
    cols = rng.standard_normal((72, 256))
    np.testing.assert_array_equal(im2col3(x), numpy_backend.im2col3(x))
    np.testing.assert_array_equal(col2im3(cols, 16, 16), numpy_backend.col2im3(cols, 16, 16))


def test_conv_via_im2col_matches_direct_convolution():
    rng = np.random.default_rng(3)
    cin, cout, h, w = 3, 5, 6, 7
    x = rng.standard_normal((cin, h, w))
    weight = rng.standard_normal((cout, cin, 3, 3))
    got = (weight.reshape(cout, cin * 9) @ im2col3(x)).reshape(cout, h, w)

    xp = np.zeros((cin, h + 2, w + 2))
    xp[:, 1 : h + 1, 1 : w + 1] = x
    want = np.zeros((cout, h, w))
    for o in range(cout):
        for c in range(cin):
            for ky in range(3):
                for kx in range(3):
                    want[o] += weight[o, c, ky, kx] * xp[c, ky : ky + h, kx : kx + w]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("shape", [(1, 1, 1), (2, 3, 3), (5, 8, 8)])
def test_roundtrip_shapes(shape):
    rng = np.random.default_rng(4)
    x = rng.standard_normal(shape)
    c, h, w = shape
    cols = im2col3(x)
    assert cols.shape == (c * 9, h * w)
    back = col2im3(cols, h, w)
    assert back.shape == shape
