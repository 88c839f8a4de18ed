"""Differentiable primitives used by the world-model architectures.

All ops preserve the floating dtype of their inputs, so the same graph runs in
float32 for training and float64 for gradient checking.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import ShapeError, Tensor, _unbroadcast, matmul


def _check(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ShapeError(f"{name}: {msg}")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None, name: str = "linear") -> Tensor:
    """``x @ weight + bias`` over the last axis; ``weight`` is (in, out)."""
    _check(x.shape[-1] == weight.shape[0], name,
           f"input features {x.shape[-1]} != weight fan-in {weight.shape[0]}")
    out = matmul(x, weight, name=name)
    if bias is not None:
        out = out + bias
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.make(x.data * mask, (x,), lambda g: x._accumulate(g * mask))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor.make(x.data * scale, (x,), lambda g: x._accumulate(g * scale))


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor.make(out, (x,), lambda g: x._accumulate(g * out * (1.0 - out)))


def maximum0(x: Tensor) -> Tensor:
    """Hinge ``max(0, x)``; gradient at exactly 0 is taken as 0."""
    return relu(x)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    axis = axis % xs[0].ndim
    sizes = [t.shape[axis] for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor.make(out, xs, bw)


def gather(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Select ``index`` entries along ``axis`` (repeats allowed)."""
    index = np.asarray(index)
    out = np.take(x.data, index, axis=axis)

    def bw(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        x._accumulate(full)

    return Tensor.make(out, (x,), bw)


def segment_sum(x: Tensor, incidence: np.ndarray, axis: int) -> Tensor:
    """Sum entries along ``axis`` into groups: ``out[i] = sum_p incidence[i, p] * x[p]``.

    ``incidence`` is a fixed 0/1 matrix, so summation order is fixed too.
    """
    inc = np.asarray(incidence, dtype=x.dtype)
    moved = np.moveaxis(x.data, axis, -1)
    out = np.moveaxis(moved @ inc.T, -1, axis)

    def bw(g):
        gm = np.moveaxis(g, axis, -1) @ inc
        x._accumulate(np.moveaxis(gm, -1, axis))

    return Tensor.make(out, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               name: str = "layer_norm") -> Tensor:
    _check(x.shape[-1] == gamma.shape[-1], name, f"features {x.shape[-1]} != {gamma.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            gx = (gx - gx.mean(axis=-1, keepdims=True)
                  - xhat * (gx * xhat).mean(axis=-1, keepdims=True)) * inv
            x._accumulate(gx)

    return Tensor.make(out, (x, gamma, beta), bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5, name: str = "batch_norm") -> Tensor:
    """BatchNorm over axis 1 (channels) of an (N, C, ...) tensor.

    In training mode batch statistics are used and the running buffers are
    updated in place with ``momentum``; in inference mode the op is the fixed
    affine map given by the running buffers.
    """
    _check(x.ndim >= 2 and x.shape[1] == gamma.shape[0], name,
           f"channels {x.shape[1] if x.ndim > 1 else '?'} != {gamma.shape[0]}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        m = x.data.size // x.shape[1]
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(bshape)
        var = (xc * xc).mean(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        unbiased = var * (m / max(m - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
        xc = x.data - mu.reshape(bshape)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx = g * gamma.data.reshape(bshape)
            if training:
                gx = (gx - gx.mean(axis=axes, keepdims=True)
                      - xhat * (gx * xhat).mean(axis=axes, keepdims=True))
            x._accumulate(gx * inv.reshape(bshape))

    return Tensor.make(out, (x, gamma, beta), bw)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    win = as_strided(xp, shape=(n, oh, ow, c, kh, kw),
                     strides=(s0, s2 * stride, s3 * stride, s1, s2, s3), writeable=False)
    return win.reshape(n * oh * ow, c * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0,
           name: str = "conv2d") -> Tensor:
    """2-D cross-correlation. ``x`` is (N, C, H, W); ``weight`` is (O, C, kh, kw)."""
    _check(x.ndim == 4, name, f"expected (N, C, H, W) input, got {x.shape}")
    o, c, kh, kw = weight.shape
    _check(x.shape[1] == c, name, f"input channels {x.shape[1]} != weight channels {c}")
    n, _, h, w = x.shape
    oh, ow = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    _check(oh > 0 and ow > 0, name, f"kernel {kh}x{kw} does not fit input {h}x{w}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if weight.requires_grad:
            weight._accumulate((g2.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = np.ascontiguousarray(
                (g2 @ wmat).reshape(n, oh, ow, c, kh, kw).transpose(4, 5, 0, 3, 1, 2))
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[i, j]
            x._accumulate(dxp[:, :, padding:padding + h, padding:padding + w])

    return Tensor.make(np.ascontiguousarray(out), parents, bw)


def global_avg_pool2d(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))
    return Tensor.make(out, (x,), lambda g: x._accumulate(
        np.broadcast_to(g[:, :, None, None] / hw, x.shape)))


def binary_cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean BCE, computed stably from logits."""
    t = np.asarray(targets, dtype=logits.dtype)
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bw(g):
        p = 1.0 / (1.0 + np.exp(-z))
        logits._accumulate(g * (p - t) / n)

    return Tensor.make(np.asarray(loss.mean(), dtype=z.dtype), (logits,), bw)


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(np.asarray(target, dtype=pred.dtype))
    return (diff * diff).mean()
