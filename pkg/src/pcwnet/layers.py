"""Forward/backward kernels for the layers the warning network uses.

All image-like tensors are laid out as (batch, channels, height, width).
A single (channels, height, width) sample is accepted too and the result
keeps the same rank.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError
from .tensor import as_tensor


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def pool_output_size(size, k, stride):
    return (size - k) // stride + 1


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ContractError(f"expected a (C,H,W) or (B,C,H,W) tensor, got shape {x.shape}")
    return x, False


def _pair(k):
    if isinstance(k, (tuple, list)):
        return int(k[0]), int(k[1])
    return int(k), int(k)


def im2col(x, k, stride, pad):
    """Unfold (B,C,H,W) into rows of receptive fields, shape (B*H'*W', C*k*k)."""
    B, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
    return cols, Ho, Wo


def col2im(cols, x_shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add rows back onto the input grid."""
    B, C, H, W = x_shape
    Ho = conv_output_size(H, k, stride, pad)
    Wo = conv_output_size(W, k, stride, pad)
    d = cols.reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += d[:, :, i, j]
    return out[:, :, pad : pad + H, pad : pad + W]


def _check_conv(x, weights, bias, stride, pad):
    C_out, C_in, kh, kw = weights.shape
    if kh != kw:
        raise ContractError(f"only square kernels are supported, got {kh}x{kw}")
    if x.shape[1] != C_in:
        raise ContractError(f"input has {x.shape[1]} channels but weights expect {C_in}")
    if bias is not None and bias.shape != (C_out,):
        raise ContractError(f"bias shape {bias.shape} != ({C_out},)")
    if stride < 1 or pad < 0:
        raise ContractError(f"invalid stride={stride} / pad={pad}")
    H, W = x.shape[2], x.shape[3]
    if H + 2 * pad < kh or W + 2 * pad < kh:
        raise ContractError(f"kernel {kh} larger than padded input {H + 2 * pad}x{W + 2 * pad}")
    return kh


def conv2d_forward(x, weights, bias, stride=1, pad=0):
    """Cross-correlation of the zero-padded input with each kernel, plus bias."""
    x, single = _batched(x)
    weights = as_tensor(weights)
    k = _check_conv(x, weights, bias, stride, pad)
    cols, Ho, Wo = im2col(x, k, stride, pad)
    out = cols @ weights.reshape(weights.shape[0], -1).T
    if bias is not None:
        out += bias
    out = out.reshape(x.shape[0], Ho, Wo, -1).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(grad_out, saved_input, weights, stride=1, pad=0):
    """Return (grad_input, grad_weights, grad_bias) for :func:`conv2d_forward`."""
    x, single = _batched(saved_input)
    weights = as_tensor(weights)
    k = _check_conv(x, weights, None, stride, pad)
    g = as_tensor(grad_out)
    if single:
        g = g[None]
    C_out = weights.shape[0]
    expected = (x.shape[0], C_out, conv_output_size(x.shape[2], k, stride, pad),
                conv_output_size(x.shape[3], k, stride, pad))
    if g.shape != expected:
        raise ContractError(f"grad_out shape {g.shape} != forward output shape {expected}")
    cols, _, _ = im2col(x, k, stride, pad)
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, C_out)
    grad_w = (g2.T @ cols).reshape(weights.shape)
    grad_b = g2.sum(axis=0)
    grad_x = col2im(g2 @ weights.reshape(C_out, -1), x.shape, k, stride, pad)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def maxpool_forward(x, k, stride):
    """Max over k x k windows (``k`` may be an (kh, kw) pair).

    Returns the pooled tensor and, for every output, the flat index
    (row * W + col) of the winning input within its channel plane. Ties go to
    the lowest flat index.
    """
    x, single = _batched(x)
    kh, kw = _pair(k)
    B, C, H, W = x.shape
    if H < kh or W < kw:
        raise ContractError(f"pool window {kh}x{kw} larger than input {H}x{W}")
    if stride < 1:
        raise ContractError(f"invalid stride {stride}")
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    win = win.reshape(B, C, Ho, Wo, kh * kw)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    rows = np.arange(Ho)[:, None] * stride + arg // kw
    cols = np.arange(Wo)[None, :] * stride + arg % kw
    idx = rows * W + cols
    if single:
        return out[0], idx[0]
    return out, idx


def maxpool_backward(grad_out, indices, input_shape):
    """Route each output gradient to the input position that won the max."""
    g = as_tensor(grad_out)
    single = len(input_shape) == 3
    if single:
        g, indices, input_shape = g[None], indices[None], (1,) + tuple(input_shape)
    if g.shape != indices.shape:
        raise ContractError(f"grad_out shape {g.shape} != indices shape {indices.shape}")
    B, C, H, W = input_shape
    plane = np.arange(B * C).reshape(B, C, 1, 1) * (H * W)
    flat = (indices + plane).ravel()
    grad_x = np.bincount(flat, weights=g.ravel(), minlength=B * C * H * W).reshape(B, C, H, W)
    return grad_x[0] if single else grad_x


def relu_forward(x):
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(grad_out, x):
    # subgradient 0 at x == 0
    return np.where(as_tensor(x) > 0, grad_out, 0.0)


def fc_forward(x, weights, bias):
    """``W @ x + b`` for a vector, or row-wise for a (B, D_in) batch."""
    x = as_tensor(x)
    weights = as_tensor(weights)
    if x.shape[-1] != weights.shape[1]:
        raise ContractError(f"input length {x.shape[-1]} != weight D_in {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ContractError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
    return x @ weights.T + bias


def fc_backward(grad_out, x, weights):
    """Return (grad_input, grad_weights, grad_bias) for :func:`fc_forward`."""
    g = as_tensor(grad_out)
    x = as_tensor(x)
    if g.ndim == 1:
        return weights.T @ g, np.outer(g, x), g.copy()
    return g @ weights, g.T @ x, g.sum(axis=0)


def softmax(logits):
    """Softmax over the last axis, stabilized by subtracting the row max."""
    z = as_tensor(logits)
    if z.shape[-1] < 2:
        raise ContractError("softmax needs at least two classes")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
