"""Deterministic differentiable tensor kernels.

Every forward function returns ``(output, cache)`` and has a matching
``*_backward`` that consumes the upstream gradient plus the cache and
returns gradients for each differentiable input. Tensors are plain numpy
arrays of shape (batch, channels, rows, cols); kernels keep the input
dtype, so float64 can be used for gradient checking and float32 for
training. No hidden state anywhere: same inputs give bit-identical
outputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError

DICE_EPS = 1e-6


def _require_4d(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ConfigError(f"{name} must be 4-D (n,c,h,w), got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weight, bias, stride=1, padding=1):
    """Cross-correlation of x (n,c,h,w) with weight (oc,ic,kh,kw).

    Output spatial dims are floor((h + 2p - k)/s) + 1.
    """
    _require_4d(x, "conv2d input")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise ConfigError(f"conv2d channel mismatch: input has {c}, weight expects {ic}")
    if bias.shape != (oc,):
        raise ConfigError(f"conv2d bias must have shape ({oc},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d invalid stride/padding ({stride}, {padding})")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ConfigError(f"conv2d kernel {kh}x{kw} too large for input {h}x{w} (pad {padding})")
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x
    # (n, c, oh, ow, kh, kw) view into the padded input; no copy
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.tensordot(cols, weight, axes=((1, 4, 5), (1, 2, 3)))  # (n, oh, ow, oc)
    y = y.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    cache = (x.shape, xp.shape, cols, weight, stride, padding)
    return y, cache


def conv2d_backward(gy, cache):
    """Gradients of conv2d w.r.t. (input, weight, bias)."""
    x_shape, xp_shape, cols, weight, stride, padding = cache
    _, _, kh, kw = weight.shape
    oh, ow = gy.shape[2], gy.shape[3]
    gb = gy.sum(axis=(0, 2, 3))
    gw = np.tensordot(gy, cols, axes=((0, 2, 3), (0, 2, 3)))  # (oc, ic, kh, kw)
    gxp = np.zeros(xp_shape, dtype=gy.dtype)
    for ki in range(kh):
        for kj in range(kw):
            t = np.tensordot(gy, weight[:, :, ki, kj], axes=((1,), (0,)))  # (n, oh, ow, ic)
            gxp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += t.transpose(0, 3, 1, 2)
    if padding:
        h, w = x_shape[2], x_shape[3]
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
    else:
        gx = gxp
    return gx, gw, gb


# ---------------------------------------------------------------------------
# transposed convolution (fixed 2x2 kernel, stride 2: doubles h and w)


def transposed_conv2d(x, weight, bias):
    """Transposed convolution with weight (ic,oc,2,2), stride 2.

    Each output pixel receives exactly one kernel tap, so the output is
    2h x 2w with no overlap.
    """
    _require_4d(x, "transposed_conv2d input")
    n, c, h, w = x.shape
    ic, oc, kh, kw = weight.shape
    if (kh, kw) != (2, 2):
        raise ConfigError(f"transposed_conv2d kernel must be 2x2, got {kh}x{kw}")
    if ic != c:
        raise ConfigError(f"transposed_conv2d channel mismatch: input has {c}, weight expects {ic}")
    if bias.shape != (oc,):
        raise ConfigError(f"transposed_conv2d bias must have shape ({oc},), got {bias.shape}")
    y = np.empty((n, oc, 2 * h, 2 * w), dtype=x.dtype)
    for ki in range(2):
        for kj in range(2):
            t = np.tensordot(x, weight[:, :, ki, kj], axes=((1,), (0,)))  # (n, h, w, oc)
            y[:, :, ki::2, kj::2] = t.transpose(0, 3, 1, 2)
    y += bias[None, :, None, None]
    return y, (x, weight)


def transposed_conv2d_backward(gy, cache):
    x, weight = cache
    gb = gy.sum(axis=(0, 2, 3))
    gx = np.zeros_like(x)
    gw = np.zeros_like(weight)
    for ki in range(2):
        for kj in range(2):
            sub = gy[:, :, ki::2, kj::2]  # (n, oc, h, w)
            gx += np.tensordot(sub, weight[:, :, ki, kj], axes=((1,), (1,))).transpose(0, 3, 1, 2)
            gw[:, :, ki, kj] = np.tensordot(x, sub, axes=((0, 2, 3), (0, 2, 3)))
    return gx, gw, gb


# ---------------------------------------------------------------------------
# max pooling


def maxpool2x2(x):
    """2x2 max pooling with stride 2; returns (pooled, argmax indices).

    Ties route to the first element of the window in row-major order, so
    gradients always land on exactly one cell per window.
    """
    _require_4d(x, "maxpool2x2 input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"maxpool2x2 requires even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=4)
    y = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return y, idx


def maxpool2x2_backward(gy, idx, input_shape):
    n, c, h, w = input_shape
    gwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=gy.dtype)
    np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=4)
    return gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


# ---------------------------------------------------------------------------
# activations


def activation(x, kind):
    """Elementwise relu or sigmoid; returns (output, cache)."""
    if kind == "relu":
        return np.maximum(x, 0), ("relu", x > 0)
    if kind == "sigmoid":
        y = expit(x)
        return y, ("sigmoid", y)
    raise ConfigError(f"unknown activation kind '{kind}'")


def activation_backward(gy, cache):
    kind, saved = cache
    if kind == "relu":
        return gy * saved
    return gy * saved * (1.0 - saved)


# ---------------------------------------------------------------------------
# channel concatenation (skip connections)


def concat_channels(a, b):
    """Concatenate along channels, a first; returns (output, split point)."""
    _require_4d(a, "concat_channels a")
    _require_4d(b, "concat_channels b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ConfigError(f"concat_channels spatial/batch mismatch: {a.shape} vs {b.shape}")
    return np.concatenate((a, b), axis=1), a.shape[1]


def concat_channels_backward(gy, split):
    return gy[:, :split], gy[:, split:]


# ---------------------------------------------------------------------------
# Dice loss


def dice_loss(pred, target):
    """1 - (2*sum(pred*target) + eps) / (sum(pred) + sum(target) + eps).

    pred is expected in [0,1] and target in {0,1}; the epsilon makes the
    all-empty case come out as loss 0.
    """
    if pred.shape != target.shape:
        raise ConfigError(f"dice_loss shape mismatch: {pred.shape} vs {target.shape}")
    inter = np.multiply(pred, target).sum(dtype=np.float64)
    num = 2.0 * inter + DICE_EPS
    den = pred.sum(dtype=np.float64) + target.sum(dtype=np.float64) + DICE_EPS
    return float(1.0 - num / den)


def dice_loss_grad(pred, target):
    """Dice loss plus its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise ConfigError(f"dice_loss shape mismatch: {pred.shape} vs {target.shape}")
    inter = np.multiply(pred, target).sum(dtype=np.float64)
    num = 2.0 * inter + DICE_EPS
    den = pred.sum(dtype=np.float64) + target.sum(dtype=np.float64) + DICE_EPS
    grad = -(2.0 * target.astype(np.float64) * den - num) / (den * den)
    return float(1.0 - num / den), grad.astype(pred.dtype, copy=False)
