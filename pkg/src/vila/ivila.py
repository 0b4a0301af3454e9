"""Indicator-token sequences and the token-level classifier built on them.

Four input modes share one model:

* ``baseline``: page tokens in order, no indicators
* ``sentence``: ``[BLK]`` at rule-detected sentence breaks
* ``line`` / ``block``: ``[BLK]`` between consecutive visual groups
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np

from vila.core import BBox, GroupKind, LabelSet, Page
from vila.evaluation import macro_f1
from vila.nn import encoder as E
from vila.nn.encoder import BLK, CLS, PAD, SEP, ModelConfig, Params
from vila.nn.loss import IGNORE, cross_entropy
from vila.training import TrainConfig, TrainLog, fit
from vila.vocab import Vocab

MODES = ("baseline", "sentence", "line", "block")


@dataclass
class EncodedWindow:
    token_ids: list
    bboxes: list
    label_ids: list
    origin: list  # page token index per position, -1 for specials
    page: tuple  # (paper_id, page_index)
    start: int  # offset of the first content token in the page's flattened sequence
    end: int
    extent: tuple = (1.0, 1.0)

    def __len__(self) -> int:
        return len(self.token_ids)

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


# ---------------------------------------------------------------------------
# segmentation of the page into indicator-delimited segments


def _segments_from_groups(page: Page, kind: GroupKind) -> list[tuple[list[int], BBox]]:
    groups = page.groups(kind)
    if not groups:
        raise ValueError(f"page {page.paper_id}/{page.page_index} has no {GroupKind(kind).value} groups")
    covered = set()
    segs = []
    for g in groups:
        if g.token_indices:
            segs.append((list(g.token_indices), g.bbox))
            covered.update(g.token_indices)
    # tokens outside every group become their own segment
    segs.extend(([i], page.tokens[i].bbox) for i in range(len(page.tokens)) if i not in covered)
    segs.sort(key=lambda s: s[0][0])
    return segs


_CLOSERS = "\"')]}”’"
_ABBREVIATIONS = {
    "al.", "et", "etc.", "e.g.", "i.e.", "fig.", "figs.", "eq.", "eqs.", "ref.", "refs.", "sec.",
    "no.", "vol.", "pp.", "cf.", "vs.", "dr.", "mr.", "mrs.", "ms.", "prof.", "tab.", "approx.",
    "resp.", "ch.", "ed.", "eds.", "st.", "jr.", "inc.",
}
_INITIAL = re.compile(r"^[A-Z]\.$")


def sentence_break_boundaries(page: Page) -> list[int]:
    """Token indices after which a sentence ends (rule table, not a trained detector)."""
    out = []
    for i, tok in enumerate(page.tokens):
        word = tok.text.rstrip(_CLOSERS)
        if not word or word[-1] not in ".!?":
            continue
        if word[-1] == "." and (word.lower() in _ABBREVIATIONS or _INITIAL.match(word)):
            continue
        if i + 1 < len(page.tokens):
            out.append(i)
    return out


def _segments_from_boundaries(page: Page, boundaries: Sequence[int]) -> list[tuple[list[int], BBox]]:
    segs, start = [], 0
    for b in sorted(set(boundaries)) + [len(page.tokens) - 1]:
        if b < start:
            continue
        idx = list(range(start, b + 1))
        segs.append((idx, BBox.enclosing(page.tokens[i].bbox for i in idx)))
        start = b + 1
    return segs


def page_segments(page: Page, mode: str) -> tuple[list[tuple[list[int], BBox]], bool]:
    """Segments to linearize and whether ``[BLK]`` goes between them."""
    if mode == "baseline":
        return [(list(range(len(page.tokens))), page.full_bbox)], False
    if mode == "sentence":
        return _segments_from_boundaries(page, sentence_break_boundaries(page)), True
    if mode in ("line", "block"):
        return _segments_from_groups(page, GroupKind(mode)), True
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


# ---------------------------------------------------------------------------
# window construction


def build_windows(page: Page, mode: str, vocab: Vocab, max_len: int = 512) -> list[EncodedWindow]:
    """Linearize a page into ``[CLS] ... [SEP]`` windows of at most ``max_len`` ids.

    Windows break only at segment boundaries unless one segment alone is
    longer than a window; that segment is then cut without an extra ``[BLK]``.
    Each ``[BLK]`` carries the box of the segment that follows it.
    """
    if not page.tokens:
        raise ValueError(f"page {page.paper_id}/{page.page_index} is empty")
    if max_len < 3:
        raise ValueError("max_len must leave room for [CLS], [SEP] and one token")
    segments, indicators = page_segments(page, mode)
    cap = max_len - 2
    ids_all = vocab.encode_all(t.text for t in page.tokens)
    full = page.full_bbox.as_list()

    windows: list[EncodedWindow] = []
    # current window content: (id, bbox, label, origin)
    cur: list[tuple[int, list, int, int]] = []
    start = 0

    def flush():
        nonlocal cur, start
        if not cur:
            return
        n_content = sum(1 for e in cur if e[3] >= 0)
        entries = [(CLS, full, IGNORE, -1)] + cur + [(SEP, full, IGNORE, -1)]
        windows.append(
            EncodedWindow(
                token_ids=[e[0] for e in entries],
                bboxes=[list(e[1]) for e in entries],
                label_ids=[e[2] for e in entries],
                origin=[e[3] for e in entries],
                page=(page.paper_id, page.page_index),
                start=start,
                end=start + n_content,
                extent=(page.width, page.height),
            )
        )
        start += n_content
        cur = []

    def tok_entry(i: int):
        t = page.tokens[i]
        label = IGNORE if t.gold_label is None else int(t.gold_label)
        return (ids_all[i], t.bbox.as_list(), label, i)

    for idx, box in segments:
        need = len(idx) + (1 if (cur and indicators) else 0)
        if cur and len(cur) + need > cap:
            flush()
        if cur and indicators:
            cur.append((BLK, box.as_list(), IGNORE, -1))
        for i in idx:
            if len(cur) == cap:
                flush()  # artificial split inside an oversized segment
            cur.append(tok_entry(i))
    flush()
    return windows


def windows_to_jsonl(windows: Sequence[EncodedWindow]) -> str:
    return "".join(w.to_json() + "\n" for w in windows)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: np.ndarray  # (B, L)
    mask: np.ndarray  # (B, L) bool
    coord_idx: np.ndarray  # (B, L, 6)
    labels: np.ndarray  # (B, L), IGNORE on specials and padding
    origin: np.ndarray  # (B, L), -1 on specials and padding


def make_batch(windows: Sequence[EncodedWindow], buckets: int) -> Batch:
    B = len(windows)
    Lmax = max(len(w) for w in windows)
    ids = np.full((B, Lmax), PAD, dtype=np.int64)
    mask = np.zeros((B, Lmax), dtype=bool)
    coord = np.zeros((B, Lmax, 6), dtype=np.int64)
    labels = np.full((B, Lmax), IGNORE, dtype=np.int64)
    origin = np.full((B, Lmax), -1, dtype=np.int64)
    for b, w in enumerate(windows):
        n = len(w)
        ids[b, :n] = w.token_ids
        mask[b, :n] = True
        coord[b, :n], _ = E.bucketize(np.array(w.bboxes, dtype=float), w.extent, buckets)
        labels[b, :n] = w.label_ids
        origin[b, :n] = w.origin
    return Batch(ids, mask, coord, labels, origin)


# ---------------------------------------------------------------------------
# model


@dataclass
class TokenClassifier:
    config: ModelConfig
    params: Params
    vocab: Vocab
    labels: LabelSet
    mode: str = "block"
    max_len: int = 512
    use_layout: bool = True

    @classmethod
    def init(cls, config: ModelConfig, vocab: Vocab, labels: LabelSet, mode: str, use_layout: bool = True):
        if config.vocab_size != len(vocab) or config.n_classes != len(labels):
            raise ValueError("config sizes do not match vocab / label set")
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        rng = np.random.default_rng(config.seed)
        params = E.init_stack(rng, config, "enc.", config.n_layers)
        params.update(E.init_pos2d(rng, config))
        params.update(E.init_head(rng, config))
        return cls(config, params, vocab, labels, mode, config.max_seq_len, use_layout)

    def windows(self, page: Page) -> list[EncodedWindow]:
        return build_windows(page, self.mode, self.vocab, self.max_len)


def forward_logits(params: Params, cfg: ModelConfig, batch: Batch, use_layout: bool = True, rng=None):
    coord = batch.coord_idx if use_layout else None
    x, c_emb = E.embed(params, "enc.", ids=batch.ids, coord_idx=coord, cfg=cfg, rng=rng)
    rate = cfg.dropout_rate if rng is not None else 0.0
    h, c_stack = E.stack_forward(params, "enc.", x, batch.mask, cfg.n_heads, rate, rng)
    logits = h @ params["head.w"] + params["head.b"]
    return logits, (h, c_emb, c_stack)


def loss_and_grads(params: Params, cfg: ModelConfig, batch: Batch, use_layout: bool = True, rng=None):
    logits, (h, c_emb, c_stack) = forward_logits(params, cfg, batch, use_layout, rng)
    loss, dlogits = cross_entropy(logits, batch.labels)
    grads: Params = {}
    C = dlogits.shape[-1]
    grads["head.w"] = h.reshape(-1, h.shape[-1]).T @ dlogits.reshape(-1, C)
    grads["head.b"] = dlogits.reshape(-1, C).sum(axis=0)
    dh = dlogits @ params["head.w"].T
    dx = E.stack_backward(dh, c_stack, params, "enc.", grads)
    E.embed_backward(dx, c_emb, params, "enc.", grads)
    for k in params:
        grads.setdefault(k, np.zeros_like(params[k]))
    return loss, grads


def predict_batch(model: TokenClassifier, batch: Batch, n_tokens: int) -> list[int]:
    """Scatter argmax labels of one page's windows back to page token order."""
    out = np.full(n_tokens, -1, dtype=np.int64)
    logits, _ = forward_logits(model.params, model.config, batch, model.use_layout)
    pred = logits.argmax(axis=-1)  # first max wins: ties go to the smallest id
    sel = batch.origin >= 0
    out[batch.origin[sel]] = pred[sel]
    if (out < 0).any():
        raise RuntimeError("some page tokens received no prediction")
    return out.tolist()


def predict_windows(model: TokenClassifier, windows: Sequence[EncodedWindow], n_tokens: int) -> list[int]:
    return predict_batch(model, make_batch(windows, model.config.coord_buckets), n_tokens)


def predict_tokens(model: TokenClassifier, page: Page, vocab: Optional[Vocab] = None) -> list[int]:
    """One category id per page token."""
    if vocab is not None and vocab.fingerprint != model.vocab.fingerprint:
        raise ValueError("vocabulary does not match the model's vocabulary")
    return predict_windows(model, model.windows(page), len(page.tokens))


def token_accuracy(model: TokenClassifier, pages: Sequence[Page]) -> float:
    correct = total = 0
    for p in pages:
        pred = predict_tokens(model, p)
        gold = p.gold_labels
        for a, g in zip(pred, gold):
            if g is not None:
                total += 1
                correct += int(a == g)
    return correct / total if total else 0.0


def evaluate_macro_f1(model: TokenClassifier, pages: Sequence[Page]) -> float:
    pred, gold = [], []
    for p in pages:
        pr = predict_tokens(model, p)
        for a, g in zip(pr, p.gold_labels):
            if g is not None:
                pred.append(a)
                gold.append(g)
    return macro_f1(pred, gold, model.labels).macro_f1


def train_token_classifier(
    pages: Sequence[Page],
    labels: LabelSet,
    mode: str,
    config: ModelConfig,
    hyper: TrainConfig,
    vocab: Optional[Vocab] = None,
    dev_pages: Optional[Sequence[Page]] = None,
    use_layout: bool = True,
) -> tuple[TokenClassifier, TrainLog]:
    if not pages:
        raise ValueError("training set is empty")
    vocab = vocab or Vocab.build(pages)
    if config.vocab_size != len(vocab):
        config = replace(config, vocab_size=len(vocab))
    model = TokenClassifier.init(config, vocab, labels, mode, use_layout)
    windows = [w for p in pages for w in model.windows(p)]
    buckets = config.coord_buckets

    def loss_fn(params, batch_windows, rng):
        return loss_and_grads(params, config, make_batch(batch_windows, buckets), use_layout, rng)

    dev_score = (lambda params: evaluate_macro_f1(model, dev_pages)) if dev_pages else None
    train_acc = lambda params: token_accuracy(model, pages)
    _, record = fit(model.params, windows, loss_fn, hyper, dev_score, train_acc)
    return model, record
