"""Forward/backward pairs for the denoiser's building blocks (fp64 numpy).

Each ``foo`` returns ``(output, cache)`` and ``foo_backward(dout, cache, ...)``
returns the input gradient followed by parameter gradients.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding, interleaved as (sin t*w_0, cos t*w_0, sin t*w_1, ...).

    Frequencies are geometric from 1 down to 1e-4. ``t`` may be a scalar or a
    1-D array; the result has shape ``(..., dim)``.
    """
    if dim <= 0 or dim % 2:
        raise ValueError(f"time embedding dimension must be positive and even, got {dim}")
    half = dim // 2
    freqs = np.power(1e-4, np.arange(half) / max(half - 1, 1))
    angles = np.asarray(t, dtype=float)[..., None] * freqs
    out = np.empty(angles.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


# ---------------------------------------------------------------------------


def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    return x @ W + b, x


def linear_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    dx = dy @ W.T
    dW = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dW, db


def mish(x: np.ndarray):
    """x * tanh(softplus(x)); the cache holds what the derivative needs."""
    # tanh(log(1 + n)) = n(n + 2) / (n(n + 2) + 2) with n = e^x; saturated beyond x = 20
    n = np.exp(np.minimum(x, 20.0))
    w = n * (n + 2.0)
    th = w / (w + 2.0)
    return x * th, (x, th, n)


def mish_backward(dy: np.ndarray, cache):
    x, th, n = cache
    sig = n / (1.0 + n)
    return dy * (th + x * (1.0 - th * th) * sig)


def mish_grad(x: np.ndarray) -> np.ndarray:
    return mish_backward(np.ones_like(x), mish(x)[1])


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy: np.ndarray, cache, gain: np.ndarray):
    xhat, inv = cache
    dgain = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbias = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


# ---------------------------------------------------------------------------


def conv1d(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Temporal convolution with 'same' zero padding.

    x: (B, L, Cin); W: (k, Cin, Cout) with odd k; b: (Cout,).
    """
    k = W.shape[0]
    pad = k // 2
    B, L, C = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([xp[:, j : j + L] for j in range(k)], axis=-1)  # (B, L, k*Cin)
    y = cols @ W.reshape(k * C, -1) + b
    return y, (cols, x.shape)


def conv1d_backward(dy: np.ndarray, cache, W: np.ndarray):
    cols, (B, L, C) = cache
    k = W.shape[0]
    pad = k // 2
    Wf = W.reshape(k * C, -1)
    dW = (cols.reshape(-1, k * C).T @ dy.reshape(-1, dy.shape[-1])).reshape(W.shape)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dcols = dy @ Wf.T
    dxp = np.zeros((B, L + 2 * pad, C))
    for j in range(k):
        dxp[:, j : j + L] += dcols[..., j * C : (j + 1) * C]
    return dxp[:, pad : pad + L], dW, db


# ---------------------------------------------------------------------------


def attention(
    x: np.ndarray,
    key_mask: np.ndarray,
    Wqkv: np.ndarray,
    bqkv: np.ndarray,
    Wo: np.ndarray,
    bo: np.ndarray,
    heads: int,
    n_queries: int | None = None,
):
    """Multi-head self-attention with a key-presence mask.

    x: (B, S, D); key_mask: (B, S) bool, absent keys get -inf logits.
    Only the first ``n_queries`` positions are computed as queries (all by default).
    """
    B, S, D = x.shape
    dh = D // heads
    nq = S if n_queries is None else n_queries
    scale = 1.0 / math.sqrt(dh)

    q = x[:, :nq] @ Wqkv[:, :D] + bqkv[:D]
    kv = x @ Wqkv[:, D:] + bqkv[D:]
    k, v = kv[..., :D], kv[..., D:]
    split = lambda a: a.reshape(B, a.shape[1], heads, dh).transpose(0, 2, 1, 3)
    qh, kh, vh = split(q), split(k), split(v)

    logits = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    logits = np.where(key_mask[:, None, None, :], logits, -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    oh = p @ vh
    o = oh.transpose(0, 2, 1, 3).reshape(B, nq, D)
    y = o @ Wo + bo
    return y, (x, qh, kh, vh, p, o, nq)


def attention_backward(dy: np.ndarray, cache, Wqkv: np.ndarray, Wo: np.ndarray, heads: int):
    x, qh, kh, vh, p, o, nq = cache
    B, S, D = x.shape
    dh = D // heads
    scale = 1.0 / math.sqrt(dh)

    dWo = o.reshape(-1, D).T @ dy.reshape(-1, D)
    dbo = dy.reshape(-1, D).sum(axis=0)
    do = (dy @ Wo.T).reshape(B, nq, heads, dh).transpose(0, 2, 1, 3)

    dp = do @ vh.transpose(0, 1, 3, 2)
    dvh = p.transpose(0, 1, 3, 2) @ do
    dlogits = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
    dqh = dlogits @ kh
    dkh = dlogits.transpose(0, 1, 3, 2) @ qh

    merge = lambda a: a.transpose(0, 2, 1, 3).reshape(B, a.shape[2], D)
    dq, dk, dv = merge(dqh), merge(dkh), merge(dvh)
    dkv = np.concatenate([dk, dv], axis=-1)

    xq = x[:, :nq]
    dWqkv = np.concatenate(
        [xq.reshape(-1, D).T @ dq.reshape(-1, D), x.reshape(-1, D).T @ dkv.reshape(-1, 2 * D)], axis=1
    )
    dbqkv = np.concatenate([dq.reshape(-1, D).sum(axis=0), dkv.reshape(-1, 2 * D).sum(axis=0)])
    dx = dkv @ Wqkv[:, D:].T
    dx[:, :nq] += dq @ Wqkv[:, :D].T
    return dx, dWqkv, dbqkv, dWo, dbo
