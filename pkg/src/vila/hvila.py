"""Hierarchical group/page encoder and the independent simple group classifier.

Each group's first ``ñ`` tokens run through a shallow group encoder; their
mean over real positions plus the layout embedding of the group's first
token box gives one vector per group. A page encoder contextualizes those
vectors and a linear head classifies every group. Tokens inherit the label
of their group.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from vila.core import GroupKind, LabelSet, Page, VisualGroup
from vila.evaluation import macro_f1
from vila.grouping import modal_label
from vila.nn import encoder as E
from vila.nn.encoder import CLS, PAD, ModelConfig, Params
from vila.nn.loss import IGNORE, cross_entropy
from vila.training import TrainConfig, TrainLog, fit
from vila.vocab import Vocab

log = logging.getLogger(__name__)

ALLOWED_DEPTHS = (1, 12)


class MixedGroupWarning(UserWarning):
    """Training groups whose gold token labels disagree."""


@dataclass(frozen=True)
class HVilaConfig:
    group_layers: int = 1
    page_layers: int = 12
    truncation: int = 0  # 0 = choose from data
    aggregation: str = "mean_over_tokens"
    position_source: str = "first_token_bbox"
    group_kind: GroupKind = GroupKind.BLOCK

    def __post_init__(self):
        if self.group_layers not in ALLOWED_DEPTHS or self.page_layers not in ALLOWED_DEPTHS:
            raise ValueError(f"group_layers and page_layers must be in {ALLOWED_DEPTHS}")
        if self.truncation < 0:
            raise ValueError("truncation must be >= 1 when set (0 = auto)")
        if self.aggregation != "mean_over_tokens":
            raise ValueError(f"unsupported aggregation {self.aggregation!r}")
        if self.position_source not in ("first_token_bbox", "group_bbox"):
            raise ValueError(f"unsupported position_source {self.position_source!r}")
        object.__setattr__(self, "group_kind", GroupKind(self.group_kind))


@dataclass
class TruncationChoice:
    n_tilde: int
    mean: float
    std: float
    p50: float
    p95: float
    mean_tokens: float
    mean_groups: float


def choose_truncation(pages: Sequence[Page], kind: GroupKind, max_len: int = 512) -> TruncationChoice:
    """ñ = round(mean over pages of N/m), clamped to ``[1, max_len]``."""
    if not pages:
        raise ValueError("dataset is empty")
    ratios, lengths, n_tok, n_grp = [], [], [], []
    for p in pages:
        groups = [g for g in p.groups(kind) if g.token_indices]
        if not groups:
            continue
        ratios.append(len(p.tokens) / len(groups))
        lengths.extend(len(g) for g in groups)
        n_tok.append(len(p.tokens))
        n_grp.append(len(groups))
    if not ratios:
        raise ValueError(f"no page has {GroupKind(kind).value} groups")
    n_tilde = int(min(max(math.floor(float(np.mean(ratios)) + 0.5), 1), max_len))
    lengths = np.asarray(lengths, dtype=float)
    return TruncationChoice(
        n_tilde=n_tilde,
        mean=float(lengths.mean()),
        std=float(lengths.std()),
        p50=float(np.percentile(lengths, 50)),
        p95=float(np.percentile(lengths, 95)),
        mean_tokens=float(np.mean(n_tok)),
        mean_groups=float(np.mean(n_grp)),
    )


# ---------------------------------------------------------------------------
# inputs


def page_groups(page: Page, kind: GroupKind) -> list[VisualGroup]:
    """Non-empty groups of ``kind`` in reading order, plus singletons for uncovered tokens."""
    groups = [g for g in page.groups(kind) if g.token_indices]
    covered = {i for g in groups for i in g.token_indices}
    groups += [VisualGroup(page.tokens[i].bbox, kind, (i,)) for i in range(len(page.tokens)) if i not in covered]
    if not groups:
        raise ValueError(f"page {page.paper_id}/{page.page_index} has no tokens")
    return sorted(groups, key=lambda g: g.token_indices[0])


def group_gold(page: Page, group: VisualGroup) -> tuple[Optional[int], bool]:
    """(gold label, mixed?) for a group; the label falls back to the modal token label."""
    toks = [page.tokens[i].gold_label for i in group.token_indices if page.tokens[i].gold_label is not None]
    mixed = len(set(toks)) > 1
    if group.label is not None:
        return group.label, mixed
    return (modal_label(toks) if toks else None), mixed


@dataclass
class PageInputs:
    """Pre-processed model input for one page (or one chunk of an oversized page)."""

    ids: np.ndarray  # (m, ñ)
    mask: np.ndarray  # (m, ñ)
    coord_idx: np.ndarray  # (m, 6)
    labels: np.ndarray  # (m,), IGNORE when unknown
    groups: list  # token indices per group
    n_tokens: int
    mixed: int = 0


def _split_ranges(start: int, end: int, cap: int) -> list[tuple[int, int]]:
    if end - start <= cap:
        return [(start, end)]
    mid = (start + end) // 2
    return _split_ranges(start, mid, cap) + _split_ranges(mid, end, cap)


def prepare_page(page: Page, vocab: Vocab, n_tilde: int, cfg: HVilaConfig, model_cfg: ModelConfig) -> list[PageInputs]:
    """Group inputs for a page; splits at the middle group while groups exceed the page encoder length."""
    groups = page_groups(page, cfg.group_kind)
    ids_all = vocab.encode_all(t.text for t in page.tokens)
    m = len(groups)
    ids = np.full((m, n_tilde), PAD, dtype=np.int64)
    mask = np.zeros((m, n_tilde), dtype=bool)
    boxes = np.zeros((m, 4))
    labels = np.full(m, IGNORE, dtype=np.int64)
    mixed = 0
    for j, g in enumerate(groups):
        head = g.token_indices[:n_tilde]
        ids[j, : len(head)] = [ids_all[i] for i in head]
        mask[j, : len(head)] = True
        src = page.tokens[g.token_indices[0]].bbox if cfg.position_source == "first_token_bbox" else g.bbox
        boxes[j] = src.as_list()
        gold, is_mixed = group_gold(page, g)
        mixed += int(is_mixed)
        if gold is not None:
            labels[j] = gold
    coord, _ = E.bucketize(boxes, page.extent, model_cfg.coord_buckets)
    out = []
    for a, b in _split_ranges(0, m, model_cfg.max_seq_len):
        out.append(
            PageInputs(
                ids[a:b], mask[a:b], coord[a:b], labels[a:b],
                [list(g.token_indices) for g in groups[a:b]], len(page.tokens), mixed if a == 0 else 0,
            )
        )
    return out


# ---------------------------------------------------------------------------
# model


@dataclass
class HVilaModel:
    config: HVilaConfig
    model_config: ModelConfig
    params: Params
    vocab: Vocab
    labels: LabelSet
    n_tilde: int

    @classmethod
    def init(cls, cfg: HVilaConfig, model_cfg: ModelConfig, vocab: Vocab, labels: LabelSet, n_tilde: int):
        if n_tilde < 1:
            raise ValueError("n_tilde must be >= 1")
        if n_tilde > model_cfg.max_seq_len:
            raise ValueError("n_tilde exceeds the group encoder length")
        rng = np.random.default_rng(model_cfg.seed)
        params = E.init_stack(rng, model_cfg, "grp.", cfg.group_layers)
        params.update(E.init_pos2d(rng, model_cfg))
        params.update(E.init_stack(rng, model_cfg, "page.", cfg.page_layers, vocab=False))
        params.update(E.init_head(rng, model_cfg))
        return cls(cfg, model_cfg, params, vocab, labels, n_tilde)

    def prepare(self, page: Page) -> list[PageInputs]:
        return prepare_page(page, self.vocab, self.n_tilde, self.config, self.model_config)


def _group_vectors(params, mcfg, ids, mask, coord_idx, rng=None):
    """h_j = mean of group-encoder states over real tokens + layout embedding."""
    x, c_emb = E.embed(params, "grp.", ids=ids, cfg=mcfg, rng=rng)
    rate = mcfg.dropout_rate if rng is not None else 0.0
    hs, c_stack = E.stack_forward(params, "grp.", x, mask, mcfg.n_heads, rate, rng)
    w = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1)
    h_text = np.einsum("gtd,gt->gd", hs, w)
    h = h_text + E.lookup_2d(params, coord_idx)
    return h, (c_emb, c_stack, w, coord_idx)


def _group_vectors_backward(dh, cache, params, grads):
    c_emb, c_stack, w, coord_idx = cache
    E.lookup_2d_backward(dh, coord_idx, grads, params)
    dhs = dh[:, None, :] * w[:, :, None]
    dx = E.stack_backward(dhs, c_stack, params, "grp.", grads)
    E.embed_backward(dx, c_emb, params, "grp.", grads)


def _forward(params, mcfg, chunks: Sequence[PageInputs], rng=None):
    ids = np.concatenate([c.ids for c in chunks])
    mask = np.concatenate([c.mask for c in chunks])
    coord = np.concatenate([c.coord_idx for c in chunks])
    h, c_grp = _group_vectors(params, mcfg, ids, mask, coord, rng)

    S, M, d = len(chunks), max(len(c.ids) for c in chunks), h.shape[1]
    base = np.zeros((S, M, d))
    pmask = np.zeros((S, M), dtype=bool)
    offsets = np.cumsum([0] + [len(c.ids) for c in chunks])
    for s, c in enumerate(chunks):
        base[s, : len(c.ids)] = h[offsets[s] : offsets[s + 1]]
        pmask[s, : len(c.ids)] = True
    x, c_emb = E.embed(params, "page.", base=base, cfg=mcfg, rng=rng)
    rate = mcfg.dropout_rate if rng is not None else 0.0
    s_vec, c_stack = E.stack_forward(params, "page.", x, pmask, mcfg.n_heads, rate, rng)
    logits = s_vec @ params["head.w"] + params["head.b"]
    return logits, pmask, (c_grp, c_emb, c_stack, s_vec, offsets)


def hvila_loss_and_grads(params: Params, mcfg: ModelConfig, chunks: Sequence[PageInputs], rng=None):
    logits, pmask, (c_grp, c_emb, c_stack, s_vec, offsets) = _forward(params, mcfg, chunks, rng)
    labels = np.full(pmask.shape, IGNORE, dtype=np.int64)
    for s, c in enumerate(chunks):
        labels[s, : len(c.labels)] = c.labels
    loss, dlogits = cross_entropy(logits, labels)

    grads: Params = {}
    C, d = dlogits.shape[-1], s_vec.shape[-1]
    grads["head.w"] = s_vec.reshape(-1, d).T @ dlogits.reshape(-1, C)
    grads["head.b"] = dlogits.reshape(-1, C).sum(axis=0)
    ds = dlogits @ params["head.w"].T
    dx = E.stack_backward(ds, c_stack, params, "page.", grads)
    dbase = E.embed_backward(dx, c_emb, params, "page.", grads)
    dh = np.concatenate([dbase[s, : offsets[s + 1] - offsets[s]] for s in range(len(chunks))])
    _group_vectors_backward(dh, c_grp, params, grads)
    for k in params:
        grads.setdefault(k, np.zeros_like(params[k]))
    return loss, grads


def encode_group(group: VisualGroup, page: Page, model: HVilaModel) -> np.ndarray:
    """Group vector h_j for one group (eval mode)."""
    if not group.token_indices:
        raise ValueError("cannot encode an empty group")
    head = group.token_indices[: model.n_tilde]
    ids = np.full((1, model.n_tilde), PAD, dtype=np.int64)
    ids[0, : len(head)] = model.vocab.encode_all(page.tokens[i].text for i in head)
    mask = np.zeros_like(ids, dtype=bool)
    mask[0, : len(head)] = True
    src = page.tokens[head[0]].bbox if model.config.position_source == "first_token_bbox" else group.bbox
    coord, _ = E.bucketize(np.array([src.as_list()]), page.extent, model.model_config.coord_buckets)
    h, _ = _group_vectors(model.params, model.model_config, ids, mask, coord)
    return h[0]


@dataclass
class GroupPrediction:
    probs: np.ndarray  # (m, C) in reading order of the model's groups
    group_labels: list
    token_labels: list
    groups: list = field(default_factory=list)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_prepared(model: HVilaModel, chunks: Sequence[PageInputs]) -> GroupPrediction:
    logits, pmask, _ = _forward(model.params, model.model_config, chunks)
    probs = [_softmax(logits[s, : len(c.ids)]) for s, c in enumerate(chunks)]
    probs = np.concatenate(probs)
    group_labels = probs.argmax(axis=-1).tolist()
    groups = [g for c in chunks for g in c.groups]
    tokens = np.full(chunks[0].n_tokens, -1, dtype=np.int64)
    for lab, g in zip(group_labels, groups):
        tokens[g] = lab
    return GroupPrediction(probs, group_labels, tokens.tolist(), groups)


def hvila_forward(page: Page, model: HVilaModel) -> GroupPrediction:
    return predict_prepared(model, model.prepare(page))


def _collect_chunks(model, pages):
    chunks, mixed = [], 0
    for p in pages:
        for c in model.prepare(p):
            mixed += c.mixed
            if (c.labels != IGNORE).any():
                chunks.append(c)
    return chunks, mixed


def hvila_token_f1(model, pages: Sequence[Page]) -> float:
    pred, gold = [], []
    for p in pages:
        out = hvila_forward(p, model).token_labels
        for a, g in zip(out, p.gold_labels):
            if g is not None:
                pred.append(a)
                gold.append(g)
    return macro_f1(pred, gold, model.labels).macro_f1


def group_accuracy(model, pages: Sequence[Page]) -> float:
    correct = total = 0
    for p in pages:
        chunks = model.prepare(p)
        pred = predict_prepared(model, chunks).group_labels
        gold = np.concatenate([c.labels for c in chunks])
        keep = gold != IGNORE
        correct += int((np.asarray(pred)[keep] == gold[keep]).sum())
        total += int(keep.sum())
    return correct / total if total else 0.0


def train_hvila(
    pages: Sequence[Page],
    labels: LabelSet,
    cfg: HVilaConfig,
    model_cfg: ModelConfig,
    hyper: TrainConfig,
    vocab: Optional[Vocab] = None,
    dev_pages: Optional[Sequence[Page]] = None,
) -> tuple[HVilaModel, TrainLog]:
    if not pages:
        raise ValueError("training set is empty")
    vocab = vocab or Vocab.build(pages)
    model_cfg = replace(model_cfg, vocab_size=len(vocab), n_classes=len(labels))
    n_tilde = cfg.truncation or choose_truncation(pages, cfg.group_kind, model_cfg.max_seq_len).n_tilde
    model = HVilaModel.init(cfg, model_cfg, vocab, labels, n_tilde)
    chunks, mixed = _collect_chunks(model, pages)
    if mixed:
        warnings.warn(f"{mixed} training groups carry mixed gold labels; training on modal labels", MixedGroupWarning, stacklevel=2)

    def loss_fn(params, batch, rng):
        return hvila_loss_and_grads(params, model_cfg, batch, rng)

    dev_score = (lambda params: hvila_token_f1(model, dev_pages)) if dev_pages else None
    _, record = fit(model.params, chunks, loss_fn, hyper, dev_score, lambda params: group_accuracy(model, pages))
    return model, record


# ---------------------------------------------------------------------------
# simple group classifier: every group through a full encoder, no page context


@dataclass
class SimpleGroupClassifier:
    config: ModelConfig
    params: Params
    vocab: Vocab
    labels: LabelSet
    group_kind: GroupKind = GroupKind.BLOCK

    @classmethod
    def init(cls, model_cfg: ModelConfig, vocab: Vocab, labels: LabelSet, kind: GroupKind = GroupKind.BLOCK):
        rng = np.random.default_rng(model_cfg.seed)
        params = E.init_stack(rng, model_cfg, "enc.", model_cfg.n_layers)
        params.update(E.init_pos2d(rng, model_cfg))
        params.update(E.init_head(rng, model_cfg))
        return cls(model_cfg, params, vocab, labels, GroupKind(kind))

    def prepare(self, page: Page) -> "GroupSequences":
        return prepare_group_sequences(page, self.vocab, self.config, self.group_kind)


@dataclass
class GroupSequences:
    ids: np.ndarray  # (m, L) with [CLS] first
    mask: np.ndarray
    coord_idx: np.ndarray  # (m, L, 6)
    labels: np.ndarray  # (m,)
    groups: list
    n_tokens: int
    mixed: int = 0

    def take(self, rows) -> "GroupSequences":
        rows = list(rows)
        width = int(self.mask[rows].sum(axis=1).max())
        return GroupSequences(
            self.ids[rows, :width], self.mask[rows, :width], self.coord_idx[rows, :width],
            self.labels[rows], [self.groups[r] for r in rows], self.n_tokens,
        )


def prepare_group_sequences(page: Page, vocab: Vocab, mcfg: ModelConfig, kind: GroupKind) -> GroupSequences:
    groups = page_groups(page, kind)
    cap = mcfg.max_seq_len - 1
    width = 1 + min(cap, max(len(g) for g in groups))
    m = len(groups)
    ids = np.full((m, width), PAD, dtype=np.int64)
    mask = np.zeros((m, width), dtype=bool)
    boxes = np.zeros((m, width, 4))
    labels = np.full(m, IGNORE, dtype=np.int64)
    ids_all = vocab.encode_all(t.text for t in page.tokens)
    full = page.full_bbox.as_list()
    mixed = 0
    for j, g in enumerate(groups):
        head = g.token_indices[:cap]
        ids[j, 0] = CLS
        ids[j, 1 : 1 + len(head)] = [ids_all[i] for i in head]
        mask[j, : 1 + len(head)] = True
        boxes[j, 0] = full
        boxes[j, 1 : 1 + len(head)] = page.boxes[list(head)]
        gold, is_mixed = group_gold(page, g)
        mixed += int(is_mixed)
        if gold is not None:
            labels[j] = gold
    coord, _ = E.bucketize(boxes, page.extent, mcfg.coord_buckets)
    return GroupSequences(ids, mask, coord, labels, [list(g.token_indices) for g in groups], len(page.tokens), mixed)


def _simple_forward(params, mcfg, seqs: GroupSequences, rng=None):
    x, c_emb = E.embed(params, "enc.", ids=seqs.ids, coord_idx=seqs.coord_idx, cfg=mcfg, rng=rng)
    rate = mcfg.dropout_rate if rng is not None else 0.0
    h, c_stack = E.stack_forward(params, "enc.", x, seqs.mask, mcfg.n_heads, rate, rng)
    cls_vec = h[:, 0]
    return cls_vec @ params["head.w"] + params["head.b"], (h, cls_vec, c_emb, c_stack)


def simple_loss_and_grads(params: Params, mcfg: ModelConfig, seqs: GroupSequences, rng=None):
    logits, (h, cls_vec, c_emb, c_stack) = _simple_forward(params, mcfg, seqs, rng)
    loss, dlogits = cross_entropy(logits, seqs.labels)
    grads: Params = {"head.w": cls_vec.T @ dlogits, "head.b": dlogits.sum(axis=0)}
    dh = np.zeros_like(h)
    dh[:, 0] = dlogits @ params["head.w"].T
    dx = E.stack_backward(dh, c_stack, params, "enc.", grads)
    E.embed_backward(dx, c_emb, params, "enc.", grads)
    for k in params:
        grads.setdefault(k, np.zeros_like(params[k]))
    return loss, grads


def simple_predict_prepared(model: SimpleGroupClassifier, seqs: GroupSequences) -> GroupPrediction:
    logits, _ = _simple_forward(model.params, model.config, seqs)
    probs = _softmax(logits)
    group_labels = probs.argmax(axis=-1).tolist()
    tokens = np.full(seqs.n_tokens, -1, dtype=np.int64)
    for lab, g in zip(group_labels, seqs.groups):
        tokens[g] = lab
    return GroupPrediction(probs, group_labels, tokens.tolist(), seqs.groups)


def simple_group_classifier_forward(page: Page, model: SimpleGroupClassifier) -> GroupPrediction:
    return simple_predict_prepared(model, model.prepare(page))


def train_simple_group_classifier(
    pages: Sequence[Page],
    labels: LabelSet,
    model_cfg: ModelConfig,
    hyper: TrainConfig,
    kind: GroupKind = GroupKind.BLOCK,
    vocab: Optional[Vocab] = None,
    dev_pages: Optional[Sequence[Page]] = None,
) -> tuple[SimpleGroupClassifier, TrainLog]:
    if not pages:
        raise ValueError("training set is empty")
    vocab = vocab or Vocab.build(pages)
    model_cfg = replace(model_cfg, vocab_size=len(vocab), n_classes=len(labels))
    model = SimpleGroupClassifier.init(model_cfg, vocab, labels, kind)
    examples = []
    for p in pages:
        seqs = model.prepare(p)
        examples.extend(seqs.take([j]) for j in range(len(seqs.groups)) if seqs.labels[j] != IGNORE)

    def loss_fn(params, batch, rng):
        width = max(b.ids.shape[1] for b in batch)
        pad = lambda a, fill: np.concatenate(
            [np.pad(b, [(0, 0), (0, width - b.shape[1])] + [(0, 0)] * (b.ndim - 2), constant_values=fill) for b in a]
        )
        seqs = GroupSequences(
            pad([b.ids for b in batch], PAD), pad([b.mask for b in batch], False),
            pad([b.coord_idx for b in batch], 0), np.concatenate([b.labels for b in batch]), [], 0,
        )
        return simple_loss_and_grads(params, model_cfg, seqs, rng)

    def accuracy(params):
        correct = total = 0
        for p in pages:
            seqs = model.prepare(p)
            pred = np.asarray(simple_predict_prepared(model, seqs).group_labels)
            keep = seqs.labels != IGNORE
            correct += int((pred[keep] == seqs.labels[keep]).sum())
            total += int(keep.sum())
        return correct / total if total else 0.0

    def dev_f1(params):
        pred, gold = [], []
        for p in dev_pages:
            out = simple_group_classifier_forward(p, model).token_labels
            for a, g in zip(out, p.gold_labels):
                if g is not None:
                    pred.append(a)
                    gold.append(g)
        return macro_f1(pred, gold, labels).macro_f1

    _, record = fit(model.params, examples, loss_fn, hyper, dev_f1 if dev_pages else None, accuracy)
    return model, record


# ---------------------------------------------------------------------------
# cost model


def encoder_macs(seq_len: int, n_seqs: int, d: int, ff_mult: int, layers: int) -> int:
    """Multiply-accumulates of ``layers`` encoder blocks over ``n_seqs`` sequences of ``seq_len``."""
    per_layer = 4 * seq_len * d * d + 2 * seq_len * d * d * ff_mult + 2 * seq_len * seq_len * d
    return n_seqs * layers * per_layer


def token_baseline_macs(n_tokens: int, d: int, ff_mult: int, layers: int) -> int:
    """Flat encoder over all tokens at once (no windowing)."""
    return encoder_macs(n_tokens, 1, d, ff_mult, layers)


def hvila_macs(n_groups: int, n_tilde: int, d: int, ff_mult: int, group_layers: int, page_layers: int) -> int:
    return encoder_macs(n_tilde, n_groups, d, ff_mult, group_layers) + encoder_macs(n_groups, 1, d, ff_mult, page_layers)


def prepared_macs(model: HVilaModel, chunks: Sequence[PageInputs]) -> int:
    """MACs implied by the actual tensor shapes of one prepared page."""
    mc, hc = model.model_config, model.config
    return sum(
        encoder_macs(c.ids.shape[1], c.ids.shape[0], mc.d, mc.ff_mult, hc.group_layers)
        + encoder_macs(c.ids.shape[0], 1, mc.d, mc.ff_mult, hc.page_layers)
        for c in chunks
    )
