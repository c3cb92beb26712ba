"""Differentiable neural-network operations on :class:`Tensor` values.

Images are NCHW, kernels are (out_channels, in_channels, k, k).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, as_tensor
from .errors import DegenerateBatchError, DimensionError, UsageError

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def _pad_pair(pad) -> tuple[int, int]:
    if isinstance(pad, (tuple, list)):
        before, after = int(pad[0]), int(pad[1])
    else:
        before = after = int(pad)
    if before < 0 or after < 0:
        raise UsageError("padding must be non-negative")
    return before, after


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding giving an output extent of ceil(size / stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, kernel: int, stride: int, pad) -> int:
    before, after = _pad_pair(pad)
    return (size + before + after - kernel) // stride + 1


def _check_conv(x: np.ndarray, w: np.ndarray, stride: int, pad) -> tuple[int, int, int, int]:
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input and OCkk kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels but kernel expects {w.shape[1]}")
    if w.shape[2] != w.shape[3]:
        raise DimensionError("only square kernels are supported")
    if stride < 1:
        raise UsageError("stride must be >= 1")
    before, after = _pad_pair(pad)
    k = w.shape[2]
    if k > x.shape[2] + before + after or k > x.shape[3] + before + after:
        raise DimensionError(f"kernel size {k} exceeds padded input {x.shape[2:]}")
    return before, after, conv_output_size(x.shape[2], k, stride, pad), conv_output_size(x.shape[3], k, stride, pad)


def _pad(x: np.ndarray, before: int, after: int) -> np.ndarray:
    if before == 0 and after == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (before, after), (before, after)))


def conv2d(input, kernel, stride: int = 1, pad=0, bias=None, method: str = "im2col") -> Tensor:
    """2-D cross-correlation with zero padding.

    ``pad`` is either one int applied on every side or a ``(before, after)``
    pair applied to both spatial axes.  ``method`` selects the im2col path
    or the per-tap loop path; both compute the same values.
    """
    x_t, w_t = as_tensor(input), as_tensor(kernel)
    x, w = x_t.data, w_t.data
    before, after, oh, ow = _check_conv(x, w, stride, pad)
    k = w.shape[2]
    xp = _pad(x, before, after)
    s = stride

    n, c = x.shape[:2]
    o = w.shape[0]
    if method == "im2col":
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : s * oh : s, : s * ow : s]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
        out = (cols @ w.reshape(o, -1).T).reshape(n, oh, ow, o).transpose(0, 3, 1, 2)
    elif method == "loops":
        out = np.zeros((n, o, oh, ow))
        for p in range(k):
            for q in range(k):
                patch = xp[:, :, p : p + s * oh : s, q : q + s * ow : s]
                out += np.einsum("ncij,oc->noij", patch, w[:, :, p, q])
    else:
        raise UsageError(f"unknown conv2d method {method!r}")

    def backward(g):
        if method == "im2col":
            dw = (g.transpose(1, 0, 2, 3).reshape(o, -1) @ cols).reshape(w.shape)
        else:
            dw = np.empty_like(w)
            for p in range(k):
                for q in range(k):
                    patch = xp[:, :, p : p + s * oh : s, q : q + s * ow : s]
                    dw[:, :, p, q] = np.einsum("noij,ncij->oc", g, patch)
        # scatter per kernel tap into a channel-major buffer
        dcols = np.tensordot(w, g, axes=([0], [1]))  # C, k, k, N, OH, OW
        dxp = np.zeros((c, n) + xp.shape[2:])
        for p in range(k):
            for q in range(k):
                dxp[:, :, p : p + s * oh : s, q : q + s * ow : s] += dcols[:, p, q]
        dx = dxp[:, :, before : before + x.shape[2], before : before + x.shape[3]].transpose(1, 0, 2, 3)
        return dx, dw

    out_t = Tensor._make(out, (x_t, w_t), "conv2d", backward)
    if bias is not None:
        out_t = out_t + as_tensor(bias).reshape(1, -1, 1, 1)
    return out_t


def _interp_matrix(n: int, factor: int) -> np.ndarray:
    # half-pixel centres, sources clamped to the border
    m = np.zeros((n * factor, n))
    for dst in range(n * factor):
        src = min(max((dst + 0.5) / factor - 0.5, 0.0), n - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n - 1)
        frac = src - lo
        m[dst, lo] += 1.0 - frac
        m[dst, hi] += frac
    return m


def bilinear_upsample(input, factor: int) -> Tensor:
    """Bilinear up-sampling by an integer factor (align-corners false)."""
    if int(factor) != factor or factor < 1:
        raise UsageError(f"upsampling factor must be an integer >= 1, got {factor}")
    x_t = as_tensor(input)
    if factor == 1:
        return x_t
    x = x_t.data
    if x.ndim != 4:
        raise DimensionError("bilinear_upsample expects NCHW input")
    mh = _interp_matrix(x.shape[2], factor)
    mw = _interp_matrix(x.shape[3], factor)
    out = mh @ x @ mw.T

    def backward(g):
        return (mh.T @ g @ mw,)

    return Tensor._make(out, (x_t,), "bilinear_upsample", backward)


class RunningStats:
    """Per-channel running mean/variance owned by a batch-norm layer."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)


def batchnorm(input, gamma, beta, mode: str = "train", running_stats: RunningStats | None = None,
              momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalisation over N (and H, W for 4-D input)."""
    x_t, g_t, b_t = as_tensor(input), as_tensor(gamma), as_tensor(beta)
    x = x_t.data
    if x.ndim not in (2, 4):
        raise DimensionError("batchnorm expects (N, C) or (N, C, H, W) input")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError("batchnorm in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if running_stats is not None:
            m = x.size // x.shape[1]
            running_stats.mean = momentum * running_stats.mean + (1.0 - momentum) * mean
            running_stats.var = momentum * running_stats.var + (1.0 - momentum) * var * m / max(m - 1, 1)
    elif mode == "eval":
        if running_stats is None:
            raise UsageError("eval-mode batchnorm needs running statistics")
        mean, var = running_stats.mean, running_stats.var
    else:
        raise UsageError(f"unknown batchnorm mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    gamma_b = g_t.data.reshape(bshape)
    out = xhat * gamma_b + b_t.data.reshape(bshape)
    count = x.size // x.shape[1]

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma_b
        if mode == "train":
            dx = (inv_std.reshape(bshape) / count) * (
                count * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma.reshape(g_t.shape), dbeta.reshape(b_t.shape)

    return Tensor._make(out, (x_t, g_t, b_t), "batchnorm", backward)


def fully_connected(input, weight, bias=None) -> Tensor:
    """Affine map ``input @ weight + bias`` for (N, I) input and (I, O) weight."""
    x_t, w_t = as_tensor(input), as_tensor(weight)
    if x_t.ndim != 2 or w_t.ndim != 2 or x_t.shape[1] != w_t.shape[0]:
        raise DimensionError(f"fully_connected cannot map {x_t.shape} with weight {w_t.shape}")
    out = x_t @ w_t
    if bias is not None:
        b_t = as_tensor(bias)
        if b_t.shape != (w_t.shape[1],):
            raise DimensionError(f"bias shape {b_t.shape} does not match {w_t.shape[1]} outputs")
        out = out + b_t
    return out


def relu(input) -> Tensor:
    x_t = as_tensor(input)
    mask = x_t.data > 0
    return Tensor._make(x_t.data * mask, (x_t,), "relu", lambda g: (g * mask,))


def tanh(input) -> Tensor:
    x_t = as_tensor(input)
    y = np.tanh(x_t.data)
    return Tensor._make(y, (x_t,), "tanh", lambda g: (g * (1.0 - y * y),))


def softmax(input, axis: int = -1) -> Tensor:
    x_t = as_tensor(input)
    z = x_t.data - x_t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x_t,), "softmax", backward)


def log_softmax(input, axis: int = -1) -> Tensor:
    x_t = as_tensor(input)
    z = x_t.data - x_t.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(y, (x_t,), "log_softmax", backward)


def logsumexp(input, axis: int = -1) -> Tensor:
    x_t = as_tensor(input)
    peak = x_t.data.max(axis=axis, keepdims=True)
    e = np.exp(x_t.data - peak)
    total = e.sum(axis=axis, keepdims=True)
    out = (np.log(total) + peak).squeeze(axis)
    w = e / total

    def backward(g):
        return (np.expand_dims(g, axis) * w,)

    return Tensor._make(out, (x_t,), "logsumexp", backward)


def replicate_spatial(input, height: int, width: int) -> Tensor:
    """Tile an (N, C) tensor into an (N, C, height, width) map."""
    x_t = as_tensor(input)
    out = np.broadcast_to(x_t.data[:, :, None, None], x_t.shape + (height, width)).copy()
    return Tensor._make(out, (x_t,), "replicate", lambda g: (g.sum(axis=(2, 3)),))


__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "RunningStats",
    "batchnorm",
    "bilinear_upsample",
    "conv2d",
    "conv_output_size",
    "fully_connected",
    "log_softmax",
    "logsumexp",
    "relu",
    "replicate_spatial",
    "same_padding",
    "softmax",
    "tanh",
]
