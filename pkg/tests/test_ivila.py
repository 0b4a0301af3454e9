import pytest

from conftest import make_page
from vila.ivila import (
    build_windows,
    make_batch,
    predict_tokens,
    sentence_break_boundaries,
    train_token_classifier,
    windows_to_jsonl,
)
from vila.nn.encoder import BLK, CLS, SEP, ModelConfig
from vila.nn.loss import IGNORE
from vila.training import TrainConfig
from vila.vocab import Vocab


def _page():
    return make_page([["a", "b", "c"], ["d", "e", "f"]], labels=[0, 1])


def test_two_blocks_give_nine_ids():
    page = _page()
    [w] = build_windows(page, "block", Vocab.build([page]))
    assert len(w) == 9
    assert w.token_ids[0] == CLS and w.token_ids[4] == BLK and w.token_ids[-1] == SEP
    assert w.label_ids[0] == w.label_ids[4] == w.label_ids[8] == IGNORE
    assert w.origin == [-1, 0, 1, 2, -1, 3, 4, 5, -1]


def test_indicator_carries_following_group_box():
    page = _page()
    [w] = build_windows(page, "block", Vocab.build([page]))
    assert w.bboxes[4] == page.blocks[1].bbox.as_list()
    full = page.full_bbox.as_list()
    assert w.bboxes[0] == full and w.bboxes[-1] == full


def test_baseline_has_no_indicators():
    page = _page()
    [w] = build_windows(page, "baseline", Vocab.build([page]))
    assert len(w) == 8 and BLK not in w.token_ids


def test_long_single_group_splits_without_indicators():
    page = make_page([[f"w{i}" for i in range(600)]], labels=[0], width=20000.0)
    wins = build_windows(page, "block", Vocab.build([page]), 512)
    assert len(wins) == 2
    assert all(BLK not in w.token_ids for w in wins)
    assert [w.end - w.start for w in wins] == [510, 90]
    # every token lands in exactly one window
    assert sorted(i for w in wins for i in w.origin if i >= 0) == list(range(600))


def test_windows_break_at_group_boundaries():
    rows = [[f"r{r}c{k}" for k in range(5)] for r in range(4)]
    page = make_page(rows, labels=[0, 1, 0, 1], width=400.0)
    wins = build_windows(page, "line", Vocab.build([page]), 14)
    # a window of 14 holds two lines of 5 plus one [BLK]
    assert [len(w) for w in wins] == [13, 13]
    assert [w.token_ids[1] for w in wins] == [Vocab.build([page]).encode("r0c0"), Vocab.build([page]).encode("r2c0")]
    assert all(w.token_ids[1] != BLK for w in wins)


def test_sentence_rules():
    page = make_page([["We", "show", "this.", "See", "Fig.", "2", "and", "J.", "Doe", "(2020)."]], labels=[0])
    assert sentence_break_boundaries(page) == [2]


def test_uncovered_tokens_become_segments():
    page = _page()
    partial = page.with_groups("block", page.blocks[:1])
    [w] = build_windows(partial, "block", Vocab.build([page]))
    assert w.token_ids.count(BLK) == 3


def test_unknown_mode_and_empty_page():
    page = _page()
    with pytest.raises(ValueError):
        build_windows(page, "paragraph", Vocab.build([page]))
    with pytest.raises(ValueError):
        build_windows(page, "block", Vocab.build([page]), 2)


def test_jsonl_dump_is_one_line_per_window():
    page = _page()
    text = windows_to_jsonl(build_windows(page, "block", Vocab.build([page])))
    assert text.count("\n") == 1 and '"token_ids":' in text


def test_batch_padding_masks_extra_positions():
    page = _page()
    vocab = Vocab.build([page])
    short = build_windows(page, "baseline", vocab)[0]
    long = build_windows(page, "block", vocab)[0]
    batch = make_batch([short, long], 128)
    assert batch.ids.shape == (2, 9)
    assert batch.mask.sum(axis=1).tolist() == [8, 9]
    assert batch.labels[0, 8] == IGNORE


def test_overfits_tiny_page(tiny, tiny_labels):
    cfg = ModelConfig(1, len(tiny_labels), d=32, n_heads=2, n_layers=2, max_seq_len=32, dropout_rate=0.0)
    model, log = train_token_classifier(
        [tiny], tiny_labels, "block", cfg, TrainConfig(epochs=60, batch_size=1, lr=3e-3, stop_at_train_accuracy=1.0, check_every=5)
    )
    assert predict_tokens(model, tiny) == tiny.gold_labels
    assert log.epoch_losses[-1] < log.epoch_losses[0]
