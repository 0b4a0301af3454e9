"""Tiny fixtures for finite-difference checks of the full models."""

from __future__ import annotations

from vila.core import BBox, GroupKind, LabelSet, Page, Token, VisualGroup
from vila.hvila import (
    HVilaConfig,
    HVilaModel,
    SimpleGroupClassifier,
    hvila_loss_and_grads,
    simple_loss_and_grads,
)
from vila.ivila import TokenClassifier, build_windows, loss_and_grads, make_batch
from vila.nn.encoder import ModelConfig
from vila.nn.gradcheck import GradCheckReport, gradcheck
from vila.vocab import Vocab

TINY_LABELS = LabelSet(("title", "paragraph", "footer"), 1)


def tiny_page() -> Page:
    """Eight tokens on three lines in two blocks."""
    words = [("Deep", 0), ("Layout", 0), ("we", 1), ("show", 1), ("that", 1), ("it", 1), ("works.", 1), ("7", 2)]
    rows = [(0, 1), (2, 3, 4), (5, 6), (7,)]
    ys = [40.0, 80.0, 92.0, 180.0]
    tokens = [None] * len(words)
    for r, row in enumerate(rows):
        for k, i in enumerate(row):
            x = 30.0 + 40.0 * k
            tokens[i] = Token(words[i][0], BBox(x, ys[r], x + 34.0, ys[r] + 9.0), words[i][1])

    def group(idx, kind, label):
        return VisualGroup(BBox.enclosing(tokens[i].bbox for i in idx), kind, idx, label)

    lines = tuple(group(r, GroupKind.LINE, words[r[0]][1]) for r in rows)
    blocks = (
        group((0, 1), GroupKind.BLOCK, 0),
        group((2, 3, 4, 5, 6), GroupKind.BLOCK, 1),
        group((7,), GroupKind.BLOCK, 2),
    )
    return Page("tiny", 0, 200.0, 200.0, tuple(tokens), lines, blocks)


def _config(vocab: Vocab, n_layers: int) -> ModelConfig:
    return ModelConfig(len(vocab), len(TINY_LABELS), d=32, n_heads=2, n_layers=n_layers, max_seq_len=16, dropout_rate=0.0, seed=3)


def gradcheck_model(name: str, sample_count: int = 200, epsilon: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Check one of ``ivila``, ``hvila`` or ``simple`` on :func:`tiny_page` (dropout off)."""
    page = tiny_page()
    vocab = Vocab.build([page])
    if name == "ivila":
        cfg = _config(vocab, 2)
        model = TokenClassifier.init(cfg, vocab, TINY_LABELS, "block")
        batch = make_batch(build_windows(page, "block", vocab, cfg.max_seq_len), cfg.coord_buckets)
        fn = lambda p: loss_and_grads(p, cfg, batch)
    elif name == "hvila":
        cfg = _config(vocab, 2)
        model = HVilaModel.init(HVilaConfig(group_layers=1, page_layers=1), cfg, vocab, TINY_LABELS, n_tilde=4)
        chunks = model.prepare(page)
        fn = lambda p: hvila_loss_and_grads(p, cfg, chunks)
    elif name == "simple":
        cfg = _config(vocab, 2)
        model = SimpleGroupClassifier.init(cfg, vocab, TINY_LABELS)
        seqs = model.prepare(page)
        fn = lambda p: simple_loss_and_grads(p, cfg, seqs)
    else:
        raise ValueError(f"unknown model {name!r}")
    return gradcheck(fn, model.params, sample_count, epsilon, seed)
