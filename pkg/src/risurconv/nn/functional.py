"""Differentiable layer primitives.

Normalisations, softmax and the loss are fused into single tape nodes with
hand-written backward passes; everything else composes :class:`Tensor` ops.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _lift, matmul


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias shape {b.shape} does not match weight {w.shape}")
    y = matmul(x, w)
    return y if b is None else y + b


def relu(x: Tensor) -> Tensor:
    return x.relu()


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._node(s, (x,), back)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over every axis but the last.

    In training mode the running statistics are updated in place as
    ``momentum * running + (1 - momentum) * batch``.
    """
    c = x.shape[-1]
    flat = x.data.reshape(-1, c)
    if training:
        if flat.shape[0] < 2:
            raise ValueError("batchnorm in training mode needs at least 2 samples per channel")
        mu = flat.mean(axis=0, dtype=np.float64)
        var = flat.var(axis=0, dtype=np.float64)
        n = flat.shape[0]
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var * n / (n - 1)
        mu = mu.astype(x.dtype)
        var = var.astype(x.dtype)
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (flat - mu) * inv
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def back(g):
        gf = g.reshape(-1, c)
        dgamma = (gf * xhat).sum(axis=0)
        dbeta = gf.sum(axis=0)
        dxhat = gf * gamma.data
        if training:
            m = gf.shape[0]
            dx = inv / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return dx.reshape(x.shape), dgamma, dbeta

    return Tensor._node(out, (x, gamma, beta), back)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a - mu) * inv
    out = xhat * gamma.data + beta.data
    c = a.shape[-1]

    def back(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = inv / c * (c * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return Tensor._node(out, (x, gamma, beta), back)


def maxpool(x: Tensor, axis: int = -2) -> Tensor:
    """Max over ``axis`` (the neighbour axis of a [B, N, K, C] block).

    Gradient goes to the first maximal slot only.
    """
    axis = axis % x.ndim
    if x.shape[axis] < 1:
        raise ValueError("maxpool over an empty axis")
    arg = np.expand_dims(x.data.argmax(axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis).squeeze(axis)
    shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor._node(out, (x,), back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_lift(t, None) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Per-batch row gather: x [B, M, C], index [B, ...] -> [B, ..., C]."""
    index = np.asarray(index, dtype=np.int64)
    b = x.shape[0]
    batch = np.arange(b).reshape((b,) + (1,) * (index.ndim - 1))
    out = x.data[batch, index]
    shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, (np.broadcast_to(batch, index.shape), index), g)
        return (full,)

    return Tensor._node(out, (x,), back)


def self_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                   bq=None, bk=None, bv=None, residual: bool = False,
                   return_scores: bool = False):
    """softmax(Q K^T / sqrt(C)) V over the second-to-last axis.

    A 4-D input [B, N, K, C] attends over K with (B, N) folded into the batch.
    """
    c = x.shape[-1]
    if wq.shape != (c, c) or wk.shape != (c, c) or wv.shape != (c, c):
        raise ValueError(f"self_attention: projections must be {c}x{c}")
    lead = x.shape[:-2]
    flat = x.reshape((-1,) + x.shape[-2:]) if x.ndim != 3 else x
    q = linear(flat, wq, bq)
    k = linear(flat, wk, bk)
    v = linear(flat, wv, bv)
    scores = softmax(matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(c)), axis=-1)
    out = matmul(scores, v)
    if x.ndim != 3:
        out = out.reshape(lead + x.shape[-2:])
    if residual:
        out = out + x
    if return_scores:
        return out, scores
    return out


def multi_head_attention(x: Tensor, heads: int, wq, wk, wv, wo, bq=None, bk=None, bv=None, bo=None):
    b, l, c = x.shape
    if c % heads:
        raise ValueError(f"width {c} is not divisible by {heads} heads")
    d = c // heads

    def split(t):
        return t.reshape(b, l, heads, d).transpose(0, 2, 1, 3)

    q, k, v = split(linear(x, wq, bq)), split(linear(x, wk, bk)), split(linear(x, wv, bv))
    scores = softmax(matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d)), axis=-1)
    out = matmul(scores, v).transpose(0, 2, 1, 3).reshape(b, l, c)
    return linear(out, wo, bo)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return Tensor._node(np.asarray(loss, dtype=logits.dtype), (logits,), back)
