import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcwnet import layers as L
from pcwnet.errors import ContractError

from oracles import direct_conv, numeric_grad, rel_err, window_max


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_conv_identity_kernel():
    x = np.full((1, 3, 3), 2.0)
    out = L.conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1), 1, 0)
    assert out.shape == (1, 3, 3)
    assert np.array_equal(out, x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv_matches_direct_loop(rng, stride, pad):
    x = rng.normal(size=(2, 5, 7))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = L.conv2d_forward(x, w, b, stride, pad)
    np.testing.assert_allclose(got, direct_conv(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv_random_5x5_single_kernel(rng):
    x = rng.normal(size=(1, 5, 5))
    w = rng.normal(size=(1, 1, 3, 3))
    got = L.conv2d_forward(x, w, np.zeros(1), 1, 0)
    np.testing.assert_allclose(got, direct_conv(x, w, np.zeros(1), 1, 0), rtol=1e-12, atol=1e-12)


def test_conv1_full_scale_shape():
    k, stride = 11, 4
    assert L.conv_output_size(256, k, stride, k // 2) == 64
    assert L.conv_output_size(512, k, stride, k // 2) == 128
    x = np.zeros((3, 256, 512))
    out = L.conv2d_forward(x, np.zeros((96, 3, 11, 11)), np.zeros(96), 4, 5)
    assert out.shape == (96, 64, 128)


def test_conv_channel_mismatch():
    with pytest.raises(ContractError):
        L.conv2d_forward(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1), 1, 0)


def test_conv_backward_zero_grad():
    x = np.ones((2, 4, 4))
    w = np.ones((3, 2, 3, 3))
    gx, gw, gb = L.conv2d_backward(np.zeros((3, 2, 2)), x, w, 1, 0)
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_identity_kernel(rng):
    g = rng.normal(size=(1, 4, 4))
    gx, _, _ = L.conv2d_backward(g, rng.normal(size=(1, 4, 4)), np.ones((1, 1, 1, 1)), 1, 0)
    np.testing.assert_array_equal(gx, g)


def test_conv_backward_shape_contract():
    with pytest.raises(ContractError):
        L.conv2d_backward(np.zeros((1, 3, 3)), np.zeros((1, 4, 4)), np.zeros((1, 1, 3, 3)), 1, 0)


@pytest.mark.parametrize("shape,k,stride,pad", [((1, 5, 5), 3, 1, 0), ((2, 6, 6), 3, 2, 1),
                                                ((4, 6, 6), 3, 1, 1), ((3, 5, 6), 2, 1, 0)])
def test_conv_gradients_finite_difference(rng, shape, k, stride, pad):
    x = rng.normal(size=shape)
    w = rng.normal(size=(2, shape[0], k, k))
    b = rng.normal(size=2)
    out = L.conv2d_forward(x, w, b, stride, pad)
    proj = rng.normal(size=out.shape)

    def loss():
        return float(np.sum(proj * L.conv2d_forward(x, w, b, stride, pad)))

    gx, gw, gb = L.conv2d_backward(proj, x, w, stride, pad)
    assert rel_err(gx, numeric_grad(loss, x)) < 1e-4
    assert rel_err(gw, numeric_grad(loss, w)) < 1e-4
    assert rel_err(gb, numeric_grad(loss, b)) < 1e-4


@given(h=st.integers(1, 12), w=st.integers(1, 12), k=st.sampled_from([1, 3, 5]),
       stride=st.integers(1, 4), pad=st.integers(0, 3))
@settings(max_examples=60, deadline=None)
def test_conv_output_shape_formula(h, w, k, stride, pad):
    if h + 2 * pad < k or w + 2 * pad < k:
        with pytest.raises(ContractError):
            L.conv2d_forward(np.zeros((1, h, w)), np.zeros((1, 1, k, k)), np.zeros(1), stride, pad)
        return
    out = L.conv2d_forward(np.zeros((1, h, w)), np.zeros((2, 1, k, k)), np.zeros(2), stride, pad)
    assert out.shape == (2, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


def test_maxpool_constant():
    out, _ = L.maxpool_forward(np.full((2, 5, 5), 3.5), 3, 2)
    assert out.shape == (2, 2, 2)
    assert np.all(out == 3.5)


def test_maxpool_1_to_16():
    x = np.arange(1, 17, dtype=float).reshape(1, 4, 4)
    out, idx = L.maxpool_forward(x, 3, 2)
    ref, ref_idx = window_max(x, 3, 2)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 11.0 == ref[0, 0, 0]
    assert idx[0, 0, 0] == ref_idx[0, 0, 0]


def test_maxpool_matches_window_scan(rng):
    x = rng.integers(0, 4, size=(3, 7, 9)).astype(float)  # many ties
    out, idx = L.maxpool_forward(x, 3, 2)
    ref, ref_idx = window_max(x, 3, 2)
    np.testing.assert_array_equal(out, ref)
    np.testing.assert_array_equal(idx, ref_idx)


def test_maxpool_tie_lowest_index():
    _, idx = L.maxpool_forward(np.zeros((1, 3, 3)), 3, 1)
    assert idx[0, 0, 0] == 0


def test_maxpool_backward_routes_to_argmax(rng):
    x = rng.normal(size=(2, 2, 7, 7))
    out, idx = L.maxpool_forward(x, 3, 2)
    g = rng.normal(size=out.shape)
    gx = L.maxpool_backward(g, idx, x.shape)
    assert np.isclose(gx.sum(), g.sum(), rtol=0, atol=1e-12)
    # every nonzero entry of grad_input sits on a window maximum
    assert np.all(np.isin(np.flatnonzero(gx[0, 0]), idx[0, 0].ravel()))


def test_maxpool_gradient_finite_difference(rng):
    # distinct values spaced far apart keep the argmax stable under +-eps
    x = rng.permutation(2 * 6 * 6).astype(float).reshape(2, 6, 6) * 0.01
    out, idx = L.maxpool_forward(x, 3, 2)
    proj = rng.normal(size=out.shape)

    def loss():
        return float(np.sum(proj * L.maxpool_forward(x, 3, 2)[0]))

    assert rel_err(L.maxpool_backward(proj, idx, x.shape), numeric_grad(loss, x)) < 1e-4


def test_maxpool_window_too_large():
    with pytest.raises(ContractError):
        L.maxpool_forward(np.zeros((1, 2, 5)), 3, 2)


def test_maxpool_rectangular_window():
    x = np.arange(6, dtype=float).reshape(1, 1, 6)
    out, idx = L.maxpool_forward(x, (1, 3), 2)
    np.testing.assert_array_equal(out, [[[2.0, 4.0]]])
    np.testing.assert_array_equal(idx, [[[2, 4]]])


@given(h=st.integers(1, 10), w=st.integers(1, 10), k=st.integers(1, 4), stride=st.integers(1, 3))
@settings(max_examples=60, deadline=None)
def test_maxpool_output_shape_formula(h, w, k, stride):
    if h < k or w < k:
        return
    out, _ = L.maxpool_forward(np.zeros((1, h, w)), k, stride)
    assert out.shape == (1, (h - k) // stride + 1, (w - k) // stride + 1)


def test_relu_values():
    np.testing.assert_array_equal(L.relu_forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


def test_relu_all_negative():
    x = -np.abs(np.random.default_rng(0).normal(size=10)) - 0.1
    assert not L.relu_forward(x).any()
    assert not L.relu_backward(np.ones(10), x).any()


def test_relu_gradient_finite_difference(rng):
    x = rng.normal(size=50)
    x = x[np.abs(x) > 1e-3]
    proj = rng.normal(size=x.shape)

    def loss():
        return float(np.sum(proj * L.relu_forward(x)))

    assert rel_err(L.relu_backward(proj, x), numeric_grad(loss, x)) < 1e-4


def test_fc_identity():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(L.fc_forward(x, np.eye(3), np.zeros(3)), x)


def test_fc_gradient_finite_difference(rng):
    x = rng.normal(size=8)
    w = rng.normal(size=(5, 8))
    b = rng.normal(size=5)
    proj = rng.normal(size=5)

    def loss():
        return float(proj @ L.fc_forward(x, w, b))

    gx, gw, gb = L.fc_backward(proj, x, w)
    assert rel_err(gx, numeric_grad(loss, x)) < 1e-4
    assert rel_err(gw, numeric_grad(loss, w)) < 1e-4
    assert rel_err(gb, numeric_grad(loss, b)) < 1e-4


def test_fc_batched_matches_rows(rng):
    X = rng.normal(size=(4, 6))
    w, b = rng.normal(size=(3, 6)), rng.normal(size=3)
    batched = L.fc_forward(X, w, b)
    for i in range(4):
        np.testing.assert_allclose(batched[i], L.fc_forward(X[i], w, b), rtol=1e-13)


def test_fc_dimension_mismatch():
    with pytest.raises(ContractError):
        L.fc_forward(np.zeros(4), np.zeros((2, 5)), np.zeros(2))


def test_softmax_symmetric():
    np.testing.assert_array_equal(L.softmax(np.array([0.0, 0.0])), [0.5, 0.5])


def test_softmax_large_logits():
    out = L.softmax(np.array([1000.0, 1000.0]))
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, [0.5, 0.5])


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-100, 100))
@settings(max_examples=100, deadline=None)
def test_softmax_shift_invariant_and_normalized(logits, shift):
    z = np.array(logits)
    p = L.softmax(z)
    assert abs(p.sum() - 1) < 1e-9
    assert np.all(p > 0)
    np.testing.assert_allclose(L.softmax(z + shift), p, rtol=0, atol=1e-9)


def test_im2col_col2im_adjoint(rng):
    # <im2col(x), y> == <x, col2im(y)>
    x = rng.normal(size=(2, 3, 6, 5))
    cols, _, _ = L.im2col(x, 3, 2, 1)
    y = rng.normal(size=cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * L.col2im(y, x.shape, 3, 2, 1))
    assert abs(lhs - rhs) < 1e-10
