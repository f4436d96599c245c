"""Forward and backward kernels for the layers used by the transfer networks.

Convolution is cross-correlation (no kernel flip). Inputs are (N, C, H, W);
every product and reduction runs in float64 and the result is stored back in
the active storage dtype (float32 unless inside `shadow_precision`).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import DegenerateSpatial, ShapeMismatch

from .tensor import Tensor, acc, ensure_finite, to_storage


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _check_conv_args(x: np.ndarray, weight: np.ndarray, stride: int, padding: int) -> tuple[int, int]:
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, C, H, W) input, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeMismatch(f"expected square (O, C, k, k) kernel, got shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ShapeMismatch(f"invalid stride {stride} / padding {padding}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    k = weight.shape[2]
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"kernel {k} with padding {padding} does not fit input {x.shape[2:]}")
    return ho, wo


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    ho, wo = _check_conv_args(x, weight, stride, padding)
    k = weight.shape[2]
    xp = _pad(acc(x), padding)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    out = np.tensordot(win, acc(weight), axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + acc(bias)[None, :, None, None]
    return ensure_finite(to_storage(out), "conv2d")


def conv2d_backward(
    dy: Tensor, x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0
) -> tuple[Tensor, Tensor, Tensor]:
    """Gradients (dx, dweight, dbias) of conv2d given the upstream gradient."""
    ho, wo = _check_conv_args(x, weight, stride, padding)
    if dy.shape != (x.shape[0], weight.shape[0], ho, wo):
        raise ShapeMismatch(f"upstream gradient shape {dy.shape} does not match conv output")
    k = weight.shape[2]
    g = acc(dy)
    w = acc(weight)
    xp = _pad(acc(x), padding)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    db = g.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
    h, wd = x.shape[2], x.shape[3]
    dx = dxp[:, :, padding : padding + h, padding : padding + wd]
    return (
        ensure_finite(to_storage(dx), "conv2d_backward"),
        ensure_finite(to_storage(dw), "conv2d_backward"),
        ensure_finite(to_storage(db), "conv2d_backward"),
    )


def _check_transpose_args(x: np.ndarray, weight: np.ndarray, stride: int, padding: int, output_padding: int) -> tuple[int, int]:
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, C, H, W) input, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeMismatch(f"expected square (C, O, k, k) kernel, got shape {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {weight.shape[0]}")
    if stride < 1 or padding < 0 or not 0 <= output_padding < stride:
        raise ShapeMismatch(f"invalid stride {stride} / padding {padding} / output_padding {output_padding}")
    k = weight.shape[2]
    ho = conv_transpose_output_size(x.shape[2], k, stride, padding, output_padding)
    wo = conv_transpose_output_size(x.shape[3], k, stride, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"padding {padding} crops away the whole output")
    return ho, wo


def conv2d_transpose(
    x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0, output_padding: int = 0
) -> Tensor:
    """Transposed convolution; equals conv2d's input gradient for the same kernel."""
    ho, wo = _check_transpose_args(x, weight, stride, padding, output_padding)
    n, _, h, wd = x.shape
    k = weight.shape[2]
    xf = acc(x)
    w = acc(weight)
    full_h = (h - 1) * stride + k + output_padding
    full_w = (wd - 1) * stride + k + output_padding
    buf = np.zeros((n, weight.shape[1], full_h, full_w))
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(xf, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            buf[:, :, i : i + stride * h : stride, j : j + stride * wd : stride] += contrib
    out = buf[:, :, padding : padding + ho, padding : padding + wo]
    if bias is not None:
        out = out + acc(bias)[None, :, None, None]
    return ensure_finite(to_storage(out), "conv2d_transpose")


def conv2d_transpose_backward(
    dy: Tensor, x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0, output_padding: int = 0
) -> tuple[Tensor, Tensor, Tensor]:
    ho, wo = _check_transpose_args(x, weight, stride, padding, output_padding)
    n, _, h, wd = x.shape
    if dy.shape != (n, weight.shape[1], ho, wo):
        raise ShapeMismatch(f"upstream gradient shape {dy.shape} does not match transpose-conv output")
    k = weight.shape[2]
    xf = acc(x)
    w = acc(weight)
    full_h = (h - 1) * stride + k + output_padding
    full_w = (wd - 1) * stride + k + output_padding
    gbuf = np.zeros((n, weight.shape[1], full_h, full_w))
    gbuf[:, :, padding : padding + ho, padding : padding + wo] = acc(dy)
    dx = np.zeros_like(xf)
    dw = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            g = gbuf[:, :, i : i + stride * h : stride, j : j + stride * wd : stride]
            dx += np.tensordot(g, w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
            dw[:, :, i, j] = np.tensordot(xf, g, axes=([0, 2, 3], [0, 2, 3]))
    db = acc(dy).sum(axis=(0, 2, 3))
    return (
        ensure_finite(to_storage(dx), "conv2d_transpose_backward"),
        ensure_finite(to_storage(dw), "conv2d_transpose_backward"),
        ensure_finite(to_storage(db), "conv2d_transpose_backward"),
    )


def instance_norm(
    x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5
) -> tuple[Tensor, tuple[np.ndarray, np.ndarray]]:
    """Normalize each (sample, channel) plane to mean 0 / variance 1, then apply scale and shift.

    Returns the output and the (x_hat, inv_std) cache needed by the backward pass.
    """
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, C, H, W) input, got shape {x.shape}")
    if x.shape[2] * x.shape[3] < 2:
        raise DegenerateSpatial(f"instance norm needs at least 2 spatial positions, got {x.shape[2:]}")
    if scale.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeMismatch(f"scale/shift must have shape ({x.shape[1]},)")
    xf = acc(x)
    mu = xf.mean(axis=(2, 3), keepdims=True)
    var = ((xf - mu) ** 2).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xf - mu) * inv_std
    out = acc(scale)[None, :, None, None] * x_hat + acc(shift)[None, :, None, None]
    return ensure_finite(to_storage(out), "instance_norm"), (x_hat, inv_std)


def instance_norm_backward(
    dy: Tensor, cache: tuple[np.ndarray, np.ndarray], scale: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    x_hat, inv_std = cache
    g = acc(dy)
    m = x_hat.shape[2] * x_hat.shape[3]
    dscale = (g * x_hat).sum(axis=(0, 2, 3))
    dshift = g.sum(axis=(0, 2, 3))
    dx_hat = g * acc(scale)[None, :, None, None]
    dx = (inv_std / m) * (
        m * dx_hat - dx_hat.sum(axis=(2, 3), keepdims=True) - x_hat * (dx_hat * x_hat).sum(axis=(2, 3), keepdims=True)
    )
    return (
        ensure_finite(to_storage(dx), "instance_norm_backward"),
        ensure_finite(to_storage(dscale), "instance_norm_backward"),
        ensure_finite(to_storage(dshift), "instance_norm_backward"),
    )


def relu(x: Tensor) -> Tensor:
    return ensure_finite(to_storage(np.maximum(acc(x), 0.0)), "relu")


def relu_backward(dy: Tensor, x: Tensor) -> Tensor:
    return ensure_finite(to_storage(acc(dy) * (acc(x) > 0)), "relu_backward")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    xf = acc(x)
    return ensure_finite(to_storage(np.where(xf > 0, xf, alpha * xf)), "leaky_relu")


def leaky_relu_backward(dy: Tensor, x: Tensor, alpha: float = 0.2) -> Tensor:
    return ensure_finite(to_storage(acc(dy) * np.where(acc(x) > 0, 1.0, alpha)), "leaky_relu_backward")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form stays finite for large |x|
    return ensure_finite(to_storage(0.5 * (1.0 + np.tanh(0.5 * acc(x)))), "sigmoid")


def sigmoid_backward(dy: Tensor, y: Tensor) -> Tensor:
    yf = acc(y)
    return ensure_finite(to_storage(acc(dy) * yf * (1.0 - yf)), "sigmoid_backward")


def tanh(x: Tensor) -> Tensor:
    return ensure_finite(to_storage(np.tanh(acc(x))), "tanh")


def tanh_backward(dy: Tensor, y: Tensor) -> Tensor:
    yf = acc(y)
    return ensure_finite(to_storage(acc(dy) * (1.0 - yf * yf)), "tanh_backward")
