"""Forward and input-backward kernels on batched feature maps (N, H, W, C)."""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# negative-control switch for gradcheck: flips the kernel in the conv backward pass
_corrupt_conv_backward = False


@contextlib.contextmanager
def corrupted_conv_backward():
    global _corrupt_conv_backward
    prev = _corrupt_conv_backward
    _corrupt_conv_backward = True
    try:
        yield
    finally:
        _corrupt_conv_backward = prev


def conv_output_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d_forward(x, weight, bias, stride, padding):
    # cross-correlation, zero padding; weight is (out, in, kH, kW)
    _, kh, kw = weight.shape[1:]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    y = np.tensordot(win, weight, axes=([3, 4, 5], [1, 2, 3]))
    return y + bias


def conv2d_backward(g, weight, x_shape, stride, padding):
    N, H, W, cin = x_shape
    kh, kw = weight.shape[2:]
    Ho, Wo = g.shape[1:3]
    gx = np.zeros((N, H + 2 * padding, W + 2 * padding, cin))
    for a in range(kh):
        for b in range(kw):
            if _corrupt_conv_backward:
                w = weight[:, :, kh - 1 - a, kw - 1 - b]
            else:
                w = weight[:, :, a, b]
            gx[:, a:a + stride * (Ho - 1) + 1:stride, b:b + stride * (Wo - 1) + 1:stride, :] += g @ w
    if padding:
        gx = gx[:, padding:-padding, padding:-padding, :]
    return gx


def maxpool_forward(x, window, stride):
    """Window maxima plus the flat in-window argmax (first hit in row-major order)."""
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    flat = win.reshape(win.shape[:4] + (window * window,))
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool_backward(g, arg, x_shape, window, stride):
    N, Ho, Wo, C = g.shape
    n, p, q, c = np.indices((N, Ho, Wo, C), sparse=True)
    rows = p * stride + arg // window
    cols = q * stride + arg % window
    gx = np.zeros(x_shape)
    np.add.at(gx, (n, rows, cols, c), g)
    return gx


def fc_forward(x, weight, bias):
    N = x.shape[0]
    y = x.reshape(N, -1) @ weight.T + bias
    return y.reshape(N, 1, 1, -1)


def fc_backward(g, weight, x_shape):
    N = g.shape[0]
    return (g.reshape(N, -1) @ weight).reshape(x_shape)
