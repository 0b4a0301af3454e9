"""Minimal pre-norm transformer encoder with 1D and 2D (layout) position embeddings.

Parameters live in a flat ``dict[str, np.ndarray]``; an encoder stack is
addressed by a name prefix so one dict can hold several stacks (the
hierarchical model keeps a group encoder and a page encoder side by side).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from vila.nn import layers as L

Params = dict[str, np.ndarray]

# reserved vocabulary ids
PAD, UNK, CLS, SEP, BLK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BLK]")

POS2D = "pos2d."
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_classes: int
    d: int = 32
    n_heads: int = 2
    ff_mult: int = 4
    n_layers: int = 2
    max_seq_len: int = 512
    coord_buckets: int = 128
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "n_classes", "d", "n_heads", "ff_mult", "n_layers", "coord_buckets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d % self.n_heads:
            raise ValueError("d must be divisible by n_heads")
        if self.max_seq_len < 8:
            raise ValueError("max_seq_len must be >= 8")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


# ---------------------------------------------------------------------------
# initialisation


def _normal(rng, *shape):
    return rng.normal(0.0, INIT_STD, size=shape)


def init_pos2d(rng, cfg: ModelConfig) -> Params:
    return {POS2D + t: _normal(rng, cfg.coord_buckets, cfg.d) for t in ("ex", "ey", "ew", "eh")}


def init_stack(rng, cfg: ModelConfig, prefix: str, n_layers: int, vocab: bool = True) -> Params:
    """Embedding tables (token table optional), ``n_layers`` blocks and a final norm."""
    d, ff = cfg.d, cfg.d * cfg.ff_mult
    p: Params = {}
    if vocab:
        p[prefix + "tok_emb"] = _normal(rng, cfg.vocab_size, d)
    p[prefix + "pos_emb"] = _normal(rng, cfg.max_seq_len, d)
    for i in range(n_layers):
        lp = f"{prefix}L{i}."
        p[lp + "ln1.g"], p[lp + "ln1.b"] = np.ones(d), np.zeros(d)
        for w in ("q", "k", "v", "o"):
            p[lp + "w" + w] = _normal(rng, d, d)
            if w != "k":
                p[lp + "b" + w] = np.zeros(d)
        p[lp + "ln2.g"], p[lp + "ln2.b"] = np.ones(d), np.zeros(d)
        p[lp + "w1"], p[lp + "b1"] = _normal(rng, d, ff), np.zeros(ff)
        p[lp + "w2"], p[lp + "b2"] = _normal(rng, ff, d), np.zeros(d)
    p[prefix + "lnf.g"], p[prefix + "lnf.b"] = np.ones(d), np.zeros(d)
    return p


def init_head(rng, cfg: ModelConfig, prefix: str = "head.") -> Params:
    return {prefix + "w": _normal(rng, cfg.d, cfg.n_classes), prefix + "b": np.zeros(cfg.n_classes)}


def count_layers(params: Params, prefix: str) -> int:
    n = 0
    while f"{prefix}L{n}.wq" in params:
        n += 1
    return n


# ---------------------------------------------------------------------------
# 2D layout embedding


def bucketize(bboxes: np.ndarray, extent: Sequence[float], buckets: int) -> tuple[np.ndarray, int]:
    """Quantize page-space boxes to embedding rows.

    Returns ``(idx, n_clamped)`` where ``idx[..., :]`` holds the bucket of
    (x0, x1, width, y0, y1, height) after normalising by page width/height.
    Coordinates outside the page are clamped and counted.
    """
    b = np.asarray(bboxes, dtype=float)
    w, h = float(extent[0]), float(extent[1])
    norm = b / np.array([w, h, w, h])
    outside = np.any((norm < 0.0) | (norm > 1.0), axis=-1)
    norm = np.clip(norm, 0.0, 1.0)
    x0, y0 = norm[..., 0], norm[..., 1]
    x1, y1 = np.maximum(norm[..., 2], x0), np.maximum(norm[..., 3], y0)
    vals = np.stack([x0, x1, x1 - x0, y0, y1, y1 - y0], axis=-1)
    idx = np.floor(vals * (buckets - 1) + 0.5).astype(np.int64)
    return np.clip(idx, 0, buckets - 1), int(outside.sum())


_TABLES = ("ex", "ex", "ew", "ey", "ey", "eh")


def lookup_2d(params: Params, idx: np.ndarray) -> np.ndarray:
    """Sum the six layout embedding lookups for bucket indices ``idx[..., 6]``."""
    out = 0.0
    for c, t in enumerate(_TABLES):
        out = out + params[POS2D + t][idx[..., c]]
    return out


def lookup_2d_backward(dout: np.ndarray, idx: np.ndarray, grads: Params, params: Params) -> None:
    d = dout.shape[-1]
    flat = dout.reshape(-1, d)
    for c, t in enumerate(_TABLES):
        key = POS2D + t
        if key not in grads:
            grads[key] = np.zeros_like(params[key])
        np.add.at(grads[key], idx[..., c].reshape(-1), flat)


def embed_2d_position(bbox, page_extent, params: Params, cfg: ModelConfig, diagnostics: Optional[dict] = None) -> np.ndarray:
    """Layout embedding of one box: E_x(x0)+E_x(x1)+E_w(w)+E_y(y0)+E_y(y1)+E_h(h)."""
    coords = bbox.as_list() if hasattr(bbox, "as_list") else list(bbox)
    idx, clamped = bucketize(np.array(coords), page_extent, cfg.coord_buckets)
    if diagnostics is not None and clamped:
        diagnostics["clamped_bboxes"] = diagnostics.get("clamped_bboxes", 0) + clamped
    return lookup_2d(params, idx)


# ---------------------------------------------------------------------------
# embeddings + encoder stack


def embed(params: Params, prefix: str, ids=None, positions=None, coord_idx=None, base=None, cfg=None, rng=None):
    """Input embedding: token table (or ``base`` vectors) + 1D position + optional 2D layout."""
    x = params[prefix + "tok_emb"][ids] if base is None else base
    if positions is None:
        positions = np.broadcast_to(np.arange(x.shape[1]), x.shape[:2])
    x = x + params[prefix + "pos_emb"][positions]
    if coord_idx is not None:
        x = x + lookup_2d(params, coord_idx)
    rate = cfg.dropout_rate if (cfg is not None and rng is not None) else 0.0
    x, keep = L.dropout(x, rate, rng)
    return x, (ids, positions, coord_idx, keep, base is not None)


def embed_backward(dx, cache, params: Params, prefix: str, grads: Params):
    """Accumulate embedding-table grads; returns the grad w.r.t. ``base`` when one was given."""
    ids, positions, coord_idx, keep, has_base = cache
    dx = L.dropout_backward(dx, keep)
    d = dx.shape[-1]
    flat = dx.reshape(-1, d)
    g = grads.setdefault(prefix + "pos_emb", np.zeros_like(params[prefix + "pos_emb"]))
    np.add.at(g, np.asarray(positions).reshape(-1), flat)
    if coord_idx is not None:
        lookup_2d_backward(dx, coord_idx, grads, params)
    if has_base:
        return dx
    g = grads.setdefault(prefix + "tok_emb", np.zeros_like(params[prefix + "tok_emb"]))
    np.add.at(g, np.asarray(ids).reshape(-1), flat)
    return None


def stack_forward(params: Params, prefix: str, x, mask, n_heads: int, rate: float = 0.0, rng=None):
    """Pre-norm blocks then the final layer norm. ``x``: (B, L, d); ``mask``: (B, L) bool."""
    caches = []
    mask = np.asarray(mask, dtype=bool)
    for i in range(count_layers(params, prefix)):
        lp = f"{prefix}L{i}."
        a_in, c_ln1 = L.layer_norm(x, params[lp + "ln1.g"], params[lp + "ln1.b"])
        a_out, c_att = L.attention(a_in, params, lp, mask, n_heads)
        a_out, k1 = L.dropout(a_out, rate, rng)
        x = x + a_out
        f_in, c_ln2 = L.layer_norm(x, params[lp + "ln2.g"], params[lp + "ln2.b"])
        hid, x_ff1 = L.linear(f_in, params[lp + "w1"], params[lp + "b1"])
        act, c_gelu = L.gelu(hid)
        f_out, x_ff2 = L.linear(act, params[lp + "w2"], params[lp + "b2"])
        f_out, k2 = L.dropout(f_out, rate, rng)
        x = x + f_out
        caches.append((c_ln1, c_att, k1, c_ln2, x_ff1, c_gelu, x_ff2, k2))
    out, c_lnf = L.layer_norm(x, params[prefix + "lnf.g"], params[prefix + "lnf.b"])
    return out, (caches, c_lnf)


def stack_backward(dout, cache, params: Params, prefix: str, grads: Params):
    caches, c_lnf = cache
    dx, grads[prefix + "lnf.g"], grads[prefix + "lnf.b"] = L.layer_norm_backward(dout, c_lnf)
    for i in reversed(range(len(caches))):
        lp = f"{prefix}L{i}."
        c_ln1, c_att, k1, c_ln2, x_ff1, c_gelu, x_ff2, k2 = caches[i]
        df = L.dropout_backward(dx, k2)
        dact, grads[lp + "w2"], grads[lp + "b2"] = L.linear_backward(df, x_ff2, params[lp + "w2"])
        dhid = L.gelu_backward(dact, c_gelu)
        df_in, grads[lp + "w1"], grads[lp + "b1"] = L.linear_backward(dhid, x_ff1, params[lp + "w1"])
        dln2, grads[lp + "ln2.g"], grads[lp + "ln2.b"] = L.layer_norm_backward(df_in, c_ln2)
        dx = dx + dln2
        da = L.dropout_backward(dx, k1)
        da_in = L.attention_backward(da, c_att, params, lp, grads)
        dln1, grads[lp + "ln1.g"], grads[lp + "ln1.b"] = L.layer_norm_backward(da_in, c_ln1)
        dx = dx + dln1
    return dx


def encoder_forward(
    params: Params,
    cfg: ModelConfig,
    token_ids,
    bboxes=None,
    attention_mask=None,
    page_extent=None,
    prefix: str = "enc.",
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
):
    """Hidden states for one sequence or a batch of sequences.

    ``token_ids`` is ``(L,)`` or ``(B, L)``. ``bboxes`` (same leading shape,
    last axis 4) adds the layout embedding; ``page_extent`` defaults to the
    enclosing box of all given boxes. Dropout only runs when ``train`` is set
    and an ``rng`` is given.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    if ids.shape[1] > cfg.max_seq_len:
        raise ValueError(f"sequence length {ids.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError("token id out of vocabulary range")
    mask = np.ones(ids.shape, dtype=bool) if attention_mask is None else np.asarray(attention_mask, dtype=bool)
    if single and mask.ndim == 1:
        mask = mask[None]
    coord_idx = None
    if bboxes is not None:
        bb = np.asarray(bboxes, dtype=float)
        if single and bb.ndim == 2:
            bb = bb[None]
        if page_extent is None:
            page_extent = (max(bb[..., 2].max(), 1e-9), max(bb[..., 3].max(), 1e-9))
        coord_idx, _ = bucketize(bb, page_extent, cfg.coord_buckets)
    train_rng = rng if train else None
    x, _ = embed(params, prefix, ids=ids, coord_idx=coord_idx, cfg=cfg, rng=train_rng)
    rate = cfg.dropout_rate if train_rng is not None else 0.0
    h, _ = stack_forward(params, prefix, x, mask, cfg.n_heads, rate, train_rng)
    return h[0] if single else h
