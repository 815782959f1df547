"""Differentiable primitives for 1-D convolutional networks.

All signal tensors are laid out ``[batch, channels, time]``. Convolutions use
cross-correlation (no kernel flip).
"""

from __future__ import annotations

import enum
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, as_tensor, make_result, record_branch, unbroadcast

NORM_EPS = 1e-5
# gLN follows the TCN separator convention; with 1e-8 the output variance is
# within 1e-6 of one for any input variance >= 0.01
GLN_EPS = 1e-8
BN_MOMENTUM = 0.1


class Padding(str, enum.Enum):
    VALID = "valid"
    SAME = "same"  # length-preserving: ceil(L / stride) output frames


def _padding_amounts(padding, kernel_size: int, dilation: int) -> tuple[int, int]:
    if isinstance(padding, int):
        return padding, padding
    padding = Padding(padding)
    if padding is Padding.VALID:
        return 0, 0
    total = dilation * (kernel_size - 1)
    left = (total + 1) // 2
    return left, total - left


def conv_output_length(length: int, kernel_size: int, stride: int = 1, dilation: int = 1,
                       padding: Union[str, int] = "valid") -> int:
    left, right = _padding_amounts(padding, kernel_size, dilation)
    return (length + left + right - dilation * (kernel_size - 1) - 1) // stride + 1


def _check_3d(x: Tensor, what: str) -> None:
    if x.ndim != 3:
        raise ValueError(f"{what} expects [batch, channels, time], got shape {x.shape}")


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           dilation: int = 1, padding: Union[str, int] = "valid", groups: int = 1) -> Tensor:
    """Strided, dilated, grouped 1-D cross-correlation.

    Args:
        x: input ``[B, C_in, L]``.
        w: kernel ``[C_out, C_in / groups, K]``.
        b: optional bias ``[C_out]``.
        padding: ``"valid"``, ``"same"`` (symmetric zero padding totalling
            ``dilation * (K - 1)``, the extra sample on the left) or an
            explicit per-side amount.
    """
    _check_3d(x, "conv1d")
    batch, c_in, length = x.shape
    c_out, c_group, k = w.shape
    if stride < 1 or dilation < 1 or groups < 1:
        raise ValueError("stride, dilation and groups must be >= 1")
    if c_in % groups or c_out % groups:
        raise ValueError(f"channels ({c_in} -> {c_out}) not divisible by groups={groups}")
    if c_group != c_in // groups:
        raise ValueError(
            f"kernel expects {c_group * groups} input channels, input has {c_in}")
    if b is not None and b.shape != (c_out,):
        raise ValueError(f"bias shape {b.shape} does not match {c_out} output channels")
    left, right = _padding_amounts(padding, k, dilation)
    padded_len = length + left + right
    span = dilation * (k - 1) + 1
    if span > padded_len:
        raise ValueError(f"kernel span {span} exceeds padded input length {padded_len}")
    out_len = (padded_len - span) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
    taps = [slice(j * dilation, j * dilation + stride * (out_len - 1) + 1, stride)
            for j in range(k)]

    def scatter_taps(gtaps):
        # gtaps: [B, C_in, K, L_out] adjoint of each tap's strided view
        gxp = np.zeros_like(xp)
        for j, sl in enumerate(taps):
            gxp[:, :, sl] += gtaps[:, :, j]
        return gxp[:, :, left:left + length]

    wd = w.data
    if groups == 1:
        if k == 1 and stride == 1:
            cols = xp
        else:
            cols = np.stack([xp[:, :, sl] for sl in taps], axis=2).reshape(batch, c_in * k, out_len)
        w2 = wd.reshape(c_out, c_in * k)
        out = np.matmul(w2, cols)

        def grads(g):
            gx = gw = None
            if x.requires_grad:
                gcols = np.matmul(w2.T, g)
                if k == 1 and stride == 1:
                    gx = gcols[:, :, left:left + length]
                else:
                    gx = scatter_taps(gcols.reshape(batch, c_in, k, out_len))
            if w.requires_grad:
                gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(wd.shape)
            return gx, gw

    elif groups == c_in and c_out == c_in:
        views = [xp[:, :, sl] for sl in taps]
        out = sum(wd[None, :, 0, j, None] * v for j, v in enumerate(views))

        def grads(g):
            gx = gw = None
            if x.requires_grad:
                gtaps = np.stack([g * wd[None, :, 0, j, None] for j in range(k)], axis=2)
                gx = scatter_taps(gtaps)
            if w.requires_grad:
                gw = np.stack([(g * v).sum(axis=(0, 2)) for v in views], axis=1)[:, None, :]
            return gx, gw

    else:
        og = c_out // groups
        cols = np.stack([xp[:, :, sl] for sl in taps], axis=2)  # [B, C_in, K, L]
        cols = cols.reshape(batch, groups, c_group * k, out_len)
        wg = wd.reshape(groups, og, c_group * k)
        out = np.matmul(wg[None], cols).reshape(batch, c_out, out_len)

        def grads(g):
            gx = gw = None
            gg = g.reshape(batch, groups, og, out_len)
            if x.requires_grad:
                gcols = np.matmul(wg.transpose(0, 2, 1)[None], gg)
                gx = scatter_taps(gcols.reshape(batch, c_in, k, out_len))
            if w.requires_grad:
                gw = np.matmul(gg, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(wd.shape)
            return gx, gw

    if b is not None:
        out = out + b.data[None, :, None]

    def grad_fn(g):
        gx, gw = grads(g)
        gb = g.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    return make_result(out, (x, w, b), grad_fn)


def conv_transpose1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Transposed convolution, the adjoint of a strided ``conv1d``.

    ``x`` is ``[B, C, L]``, ``w`` is ``[C, C_out, K]``; the output has
    ``(L - 1) * stride + K`` frames with overlapping taps summed.
    """
    _check_3d(x, "conv_transpose1d")
    batch, c, length = x.shape
    if length == 0 or batch == 0:
        raise ValueError("conv_transpose1d got an empty input")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if w.shape[0] != c:
        raise ValueError(f"kernel expects {w.shape[0]} input channels, input has {c}")
    _, c_out, k = w.shape
    out_len = (length - 1) * stride + k
    w2 = w.data.reshape(c, c_out * k)
    cols = np.matmul(w2.T, x.data).reshape(batch, c_out, k, length)
    taps = [slice(j, j + stride * (length - 1) + 1, stride) for j in range(k)]
    out = np.zeros((batch, c_out, out_len), dtype=cols.dtype)
    for j, sl in enumerate(taps):
        out[:, :, sl] += cols[:, :, j]
    if b is not None:
        out += b.data[None, :, None]

    def grad_fn(g):
        gcols = np.stack([g[:, :, sl] for sl in taps], axis=2).reshape(batch, c_out * k, length)
        gx = np.matmul(w2, gcols) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = np.tensordot(x.data, gcols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gb = g.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    return make_result(out, (x, w, b), grad_fn)


def pool1d(x: Tensor, kind: str, kernel_size: int, stride: Optional[int] = None) -> Tensor:
    """Windowed max or mean along time; output length ``floor((L - k) / s) + 1``."""
    _check_3d(x, "pool1d")
    stride = kernel_size if stride is None else stride
    length = x.shape[2]
    if kernel_size > length:
        raise ValueError(f"pool kernel {kernel_size} longer than input length {length}")
    windows = sliding_window_view(x.data, kernel_size, axis=2)[:, :, ::stride]
    out_len = windows.shape[2]
    taps = [slice(j, j + stride * (out_len - 1) + 1, stride) for j in range(kernel_size)]

    if kind == "avg":
        out = windows.mean(axis=-1)

        def grad_fn(g):
            gx = np.zeros_like(x.data)
            share = g / kernel_size
            for sl in taps:
                gx[:, :, sl] += share
            return (gx,)

    elif kind == "max":
        arg = windows.argmax(axis=-1)
        record_branch(arg)
        out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

        def grad_fn(g):
            gx = np.zeros_like(x.data)
            for j, sl in enumerate(taps):
                gx[:, :, sl] += np.where(arg == j, g, 0.0)
            return (gx,)

    else:
        raise ValueError(f"unknown pooling kind {kind!r}")
    return make_result(np.ascontiguousarray(out), (x,), grad_fn)


def adaptive_avg_pool(x: Tensor) -> Tensor:
    """Mean over the time axis, keeping it as a length-1 axis."""
    _check_3d(x, "adaptive_avg_pool")
    if x.shape[2] < 1:
        raise ValueError("adaptive_avg_pool got an empty time axis")
    return x.mean(axis=2, keepdims=True)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    record_branch(mask)
    # NaN <= 0 is False, so NaNs pass through instead of being silently zeroed
    out = np.where(x.data <= 0, 0.0, x.data).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """``x if x >= 0 else slope * x`` with ``slope`` per channel (axis 1)."""
    shape = [1] * x.ndim
    shape[1] = slope.size
    a = slope.data.reshape(shape)
    pos = x.data >= 0
    record_branch(pos)
    out = np.where(pos, x.data, a * x.data)

    def grad_fn(g):
        gx = np.where(pos, g, g * a)
        gs = None
        if slope.requires_grad:
            gs = unbroadcast(np.where(pos, 0.0, g * x.data), tuple(shape)).reshape(slope.shape)
        return gx, gs

    return make_result(out, (x, slope), grad_fn)


def activation(x: Tensor, kind: str, slope: Optional[Tensor] = None) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "prelu":
        if slope is None:
            raise ValueError("prelu needs a slope parameter")
        return prelu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), grad_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), grad_fn)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits [B, K]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    logp = log_softmax(logits, axis=1)
    picked = logp[np.arange(labels.size), labels]
    return -picked.mean()


def _normalize(x: Tensor, gamma: Tensor, beta: Tensor, axes: tuple, mu: np.ndarray,
               var: np.ndarray, eps: float, param_shape: tuple) -> Tensor:
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    g_ = gamma.data.reshape(param_shape)
    out = xhat * g_ + beta.data.reshape(param_shape)
    n = int(np.prod([x.shape[a] for a in axes]))
    sum_axes = tuple(i for i in range(x.ndim) if i != 1)

    def grad_fn(g):
        gx = None
        if x.requires_grad:
            gxhat = g * g_
            gx = inv * (gxhat - gxhat.sum(axis=axes, keepdims=True) / n
                        - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True) / n)
        ggamma = (g * xhat).sum(axis=sum_axes).reshape(gamma.shape) if gamma.requires_grad else None
        gbeta = g.sum(axis=sum_axes).reshape(beta.shape) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), grad_fn)


def global_layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = GLN_EPS) -> Tensor:
    """Normalise each item jointly over channels and time, then per-channel affine."""
    _check_3d(x, "global_layer_norm")
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    var = x.data.var(axis=(1, 2), keepdims=True)
    return _normalize(x, gamma, beta, (1, 2), mu, var, eps, (1, x.shape[1], 1))


def batch_norm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = BN_MOMENTUM,
                 eps: float = NORM_EPS) -> Tensor:
    """Per-channel batch normalisation of ``[B, C]`` or ``[B, C, L]`` inputs.

    In training mode the batch statistics normalise the input and the running
    buffers are updated in place (unbiased variance, weight ``momentum``).
    """
    if x.ndim not in (2, 3):
        raise ValueError(f"batch_norm1d expects rank 2 or 3, got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2)
    param_shape = (1, x.shape[1]) if x.ndim == 2 else (1, x.shape[1], 1)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        n = int(np.prod([x.shape[a] for a in axes]))
        unbiased = var * n / max(n - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(-1)
        return _normalize(x, gamma, beta, axes, mu, var, eps, param_shape)

    inv = 1.0 / np.sqrt(running_var.reshape(param_shape) + eps)
    scale = gamma.data.reshape(param_shape) * inv
    xhat = (x.data - running_mean.reshape(param_shape)) * inv
    out = xhat * gamma.data.reshape(param_shape) + beta.data.reshape(param_shape)
    sum_axes = tuple(i for i in range(x.ndim) if i != 1)

    def grad_fn(g):
        return (g * scale,
                (g * xhat).sum(axis=sum_axes).reshape(gamma.shape) if gamma.requires_grad else None,
                g.sum(axis=sum_axes).reshape(beta.shape) if beta.requires_grad else None)

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), grad_fn)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ w.T + b`` for ``x [B, D_in]`` and ``w [D_out, D_in]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"linear: bias {b.shape} incompatible with weight {w.shape}")

    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def grad_fn(g):
        return (g @ w.data if x.requires_grad else None,
                g.T @ x.data if w.requires_grad else None,
                g.sum(axis=0) if b is not None and b.requires_grad else None)

    return make_result(out, (x, w, b), grad_fn)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = ((x * x).sum(axis=axis, keepdims=True) + eps) ** 0.5
    return x / norm


def scalar(value: float, like: Tensor) -> Tensor:
    return as_tensor(np.asarray(value, dtype=like.dtype))
