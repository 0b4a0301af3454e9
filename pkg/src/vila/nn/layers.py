"""Forward/backward pairs for the encoder's building blocks.

Every forward returns ``(out, cache)``; the matching backward takes the
upstream gradient and that cache. Arrays are float64 throughout.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5
MASK_FILL = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layer_norm_backward(dy, cache):
    xhat, rstd, g = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=red)
    db = dy.sum(axis=red)
    dxhat = dy * g
    d = xhat.shape[-1]
    dx = rstd / d * (d * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dg, db


def gelu(x):
    # tanh approximation: smooth everywhere, which keeps finite differences honest
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def linear(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w):
    d_in, d_out = w.shape
    x2 = x.reshape(-1, d_in)
    dy2 = dy.reshape(-1, d_out)
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention(x, p, prefix, mask, n_heads):
    """Multi-head self-attention over ``x`` of shape ``(B, L, d)``.

    ``mask`` is ``(B, L)`` with True on real positions. Padded keys get no
    weight and padded queries produce no context.
    """
    B, L, d = x.shape
    dh = d // n_heads
    q, _ = linear(x, p[prefix + "wq"], p[prefix + "bq"])
    # no key bias: it shifts every score in a row equally and cancels in the softmax
    k = x @ p[prefix + "wk"]
    v, _ = linear(x, p[prefix + "wv"], p[prefix + "bv"])
    split = lambda t: t.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)
    qh, kh, vh = split(q), split(k), split(v)
    scale = 1.0 / math.sqrt(dh)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    scores = scores + np.where(mask, 0.0, MASK_FILL)[:, None, None, :]
    probs = softmax(scores) * mask[:, None, :, None]
    ctx = (probs @ vh).transpose(0, 2, 1, 3).reshape(B, L, d)
    out, _ = linear(ctx, p[prefix + "wo"], p[prefix + "bo"])
    return out, (x, qh, kh, vh, probs, ctx, mask, scale)


def attention_backward(dout, cache, p, prefix, grads):
    x, qh, kh, vh, probs, ctx, mask, scale = cache
    B, L, d = x.shape
    H, dh = qh.shape[1], qh.shape[3]
    dctx, grads[prefix + "wo"], grads[prefix + "bo"] = linear_backward(dout, ctx, p[prefix + "wo"])
    dctx = dctx.reshape(B, L, H, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = probs.transpose(0, 1, 3, 2) @ dctx
    # probs already carry the query mask, so rows of padded queries are zero
    dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
    dscores *= scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    merge = lambda t: t.transpose(0, 2, 1, 3).reshape(B, L, d)
    dx = np.zeros_like(x)
    for name, dt in (("q", dqh), ("k", dkh), ("v", dvh)):
        dxi, grads[prefix + "w" + name], db = linear_backward(merge(dt), x, p[prefix + "w" + name])
        if name != "k":
            grads[prefix + "b" + name] = db
        dx += dxi
    return dx
