"""Masked softmax cross entropy."""

from __future__ import annotations

import numpy as np

IGNORE = -100


def cross_entropy(logits, labels, ignore_mask=None):
    """Mean negative log-likelihood over rows not ignored.

    ``logits`` is ``(..., C)``; ``labels`` matches its leading shape. Rows are
    ignored where ``ignore_mask`` is True or the label equals ``IGNORE``.
    Returns ``(loss, dlogits)``.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    C = logits.shape[-1]
    z = logits.reshape(-1, C)
    y = labels.reshape(-1).astype(np.int64)
    keep = y != IGNORE
    if ignore_mask is not None:
        keep &= ~np.asarray(ignore_mask, dtype=bool).reshape(-1)
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross entropy over zero rows is undefined")
    if np.any((y[keep] < 0) | (y[keep] >= C)):
        raise ValueError("label out of range")

    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    rows = np.flatnonzero(keep)
    loss = -logp[rows, y[rows]].sum() / count

    grad = np.exp(logp)
    grad[rows, y[rows]] -= 1.0
    grad[~keep] = 0.0
    grad /= count
    return float(loss), grad.reshape(logits.shape)
