"""Forward/backward kernels for the encoder and the binding head.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)`` and returns the input gradient plus a dict of
parameter gradients.  Arrays are batch-first: ``[B, L, C]``.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


def _sum_leading(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dout, x, w):
    dx = dout @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    return dx, dw, _sum_leading(dout)


def layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * gain + bias, (xhat, rstd, gain)


def layer_norm_backward(dy, cache):
    xhat, rstd, gain = cache
    dgain = _sum_leading(dy * xhat)
    dbias = _sum_leading(dy)
    dxhat = dy * gain
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def gelu_forward(x):
    """tanh approximation of GELU."""
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def dropout_forward(x, p: float, rng: np.random.Generator | None):
    """Inverted dropout.  Returns the scaled keep-mask (or None when inactive)."""
    if rng is None or p <= 0.0:
        return x, None
    keep = (rng.random(x.shape, dtype=np.float32) >= p).astype(x.dtype)
    keep *= x.dtype.type(1.0 / (1.0 - p))
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def key_mask_bias(attention_mask: np.ndarray, dtype) -> np.ndarray:
    """Additive bias [B, 1, 1, L]: 0 on real keys, -inf on PAD keys."""
    bias = np.where(attention_mask.astype(bool), 0.0, -np.inf).astype(dtype)
    return bias[:, None, None, :]


def attention_forward(x, p: dict, heads: int, bias, drop_p: float, rng):
    """Multi-head self-attention.  ``p`` maps q/k/v/o to (weight, bias)."""
    B, L, H = x.shape
    d = H // heads

    def split(t):
        return t.reshape(B, L, heads, d).transpose(0, 2, 1, 3)

    q = split(x @ p["q"][0] + p["q"][1])
    k = split(x @ p["k"][0] + p["k"][1])
    v = split(x @ p["v"][0] + p["v"][1])
    scale = 1.0 / math.sqrt(d)
    s = (q @ k.transpose(0, 1, 3, 2)) * scale + bias
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    probs = e / e.sum(axis=-1, keepdims=True)
    pd, keep = dropout_forward(probs, drop_p, rng)
    ctx = (pd @ v).transpose(0, 2, 1, 3).reshape(B, L, H)
    out = ctx @ p["o"][0] + p["o"][1]
    cache = dict(x=x, q=q, k=k, v=v, probs=probs, pd=pd, keep=keep, ctx=ctx, scale=scale, heads=heads)
    return out, cache


def attention_backward(dout, cache, p: dict):
    x, q, k, v = cache["x"], cache["q"], cache["k"], cache["v"]
    probs, pd, ctx = cache["probs"], cache["pd"], cache["ctx"]
    B, L, H = x.shape
    heads = cache["heads"]
    d = H // heads
    grads = {}
    dctx, grads["o.weight"], grads["o.bias"] = linear_backward(dout, ctx, p["o"][0])
    dctx = dctx.reshape(B, L, heads, d).transpose(0, 2, 1, 3)
    dpd = dctx @ v.transpose(0, 1, 3, 2)
    dv = pd.transpose(0, 1, 3, 2) @ dctx
    dprobs = dropout_backward(dpd, cache["keep"])
    ds = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    ds *= cache["scale"]
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(B, L, H)

    dx = np.zeros_like(x)
    for name, dt in (("q", dq), ("k", dk), ("v", dv)):
        dxi, grads[f"{name}.weight"], grads[f"{name}.bias"] = linear_backward(merge(dt), x, p[name][0])
        dx += dxi
    return dx, grads


def conv1d_forward(x, w, b):
    """Same-padded 1-D convolution over the sequence axis.

    x: [B, L, C_in], w: [width, C_in, C_out], b: [C_out].
    """
    width = w.shape[0]
    pad = width // 2
    B, L, C = x.shape
    xp = np.zeros((B, L + 2 * pad, C), dtype=x.dtype)
    xp[:, pad : pad + L] = x
    cols = np.concatenate([xp[:, j : j + L] for j in range(width)], axis=-1)
    out = cols @ w.reshape(width * C, -1) + b
    return out, (cols, w.shape, L)


def conv1d_backward(dout, cache, w):
    cols, wshape, L = cache
    width, C, O = wshape
    pad = width // 2
    dcols, dw, db = linear_backward(dout, cols, w.reshape(width * C, O))
    B = dout.shape[0]
    dxp = np.zeros((B, L + 2 * pad, C), dtype=dout.dtype)
    for j in range(width):
        dxp[:, j : j + L] += dcols[..., j * C : (j + 1) * C]
    return dxp[:, pad : pad + L], dw.reshape(wshape), db


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, positive):
    return dy * positive


def masked_max_pool_forward(x, attention_mask):
    """Max over the real (non-PAD) positions of each sequence.  x: [B, L, C]."""
    valid = attention_mask.astype(bool)[:, :, None]
    masked = np.where(valid, x, -np.inf)
    idx = masked.argmax(axis=1)  # [B, C]
    out = np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :]
    return out, (idx, x.shape)


def masked_max_pool_backward(dy, cache):
    idx, shape = cache
    dx = np.zeros(shape, dtype=dy.dtype)
    np.put_along_axis(dx, idx[:, None, :], dy[:, None, :], axis=1)
    return dx


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
