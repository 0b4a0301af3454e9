import warnings
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_page
from vila.core import GroupKind
from vila.hvila import (
    HVilaConfig,
    HVilaModel,
    MixedGroupWarning,
    SimpleGroupClassifier,
    choose_truncation,
    encode_group,
    hvila_forward,
    hvila_macs,
    prepare_page,
    simple_group_classifier_forward,
    token_baseline_macs,
    train_hvila,
)
from vila.nn.encoder import ModelConfig
from vila.training import TrainConfig
from vila.vocab import Vocab


def _page_with(n_tokens, n_blocks):
    per = n_tokens // n_blocks
    rows = [[f"w{i}" for i in range(per)] for _ in range(n_blocks)]
    return make_page(rows, labels=[0] * n_blocks, width=30.0 * per + 40, height=20.0 * n_blocks + 40)


def _model(page, labels, n_tilde=4, **kw):
    vocab = Vocab.build([page])
    mcfg = ModelConfig(len(vocab), len(labels), d=16, n_heads=2, max_seq_len=32, dropout_rate=0.0, seed=1)
    return HVilaModel.init(HVilaConfig(1, 1, **kw), mcfg, vocab, labels, n_tilde)


@pytest.mark.parametrize(
    "pages,want",
    [
        ([(100, 10)], 10),
        ([(100, 10), (150, 10)], 13),  # mean ratio 12.5 rounds half up
    ],
)
def test_truncation_is_rounded_mean_ratio(pages, want):
    assert choose_truncation([_page_with(n, m) for n, m in pages], GroupKind.BLOCK).n_tilde == want


def test_truncation_clamps_to_encoder_length():
    page = make_page([[f"w{i}" for i in range(600)]], labels=[0], width=20000.0)
    assert choose_truncation([page], GroupKind.BLOCK, 512).n_tilde == 512


def test_truncation_needs_groups():
    with pytest.raises(ValueError):
        choose_truncation([], GroupKind.BLOCK)


def test_config_rejects_unsupported_depths():
    with pytest.raises(ValueError):
        HVilaConfig(group_layers=2)


def test_group_vector_ignores_tokens_past_truncation(tiny, tiny_labels):
    model = _model(tiny, tiny_labels, n_tilde=2)
    block = tiny.blocks[1]
    before = encode_group(block, tiny, model)
    toks = list(tiny.tokens)
    toks[block.token_indices[3]] = replace(toks[block.token_indices[3]], text="zzz")
    after = encode_group(block, replace(tiny, tokens=tuple(toks)), model)
    np.testing.assert_array_equal(before, after)
    # the first token does matter
    toks[block.token_indices[0]] = replace(toks[block.token_indices[0]], text="zzz")
    assert not np.array_equal(before, encode_group(block, replace(tiny, tokens=tuple(toks)), model))


def test_identical_groups_encode_identically(tiny, tiny_labels):
    model = _model(tiny, tiny_labels)
    a = encode_group(tiny.blocks[0], tiny, model)
    moved = replace(tiny, paper_id="other", blocks=tiny.blocks[:1])
    np.testing.assert_array_equal(a, encode_group(moved.blocks[0], moved, model))
    with pytest.raises(ValueError):
        encode_group(replace(tiny.blocks[0], token_indices=()), tiny, model)


def test_single_group_encoding_matches_batched_path(tiny, tiny_labels):
    from vila.hvila import _group_vectors

    model = _model(tiny, tiny_labels, n_tilde=3)
    [chunk] = model.prepare(tiny)
    batched, _ = _group_vectors(model.params, model.model_config, chunk.ids, chunk.mask, chunk.coord_idx)
    for j, block in enumerate(tiny.blocks):
        np.testing.assert_allclose(encode_group(block, tiny, model), batched[j], atol=1e-12)


def test_position_source_choice_changes_group_box(tiny, tiny_labels):
    first = _model(tiny, tiny_labels)
    whole = _model(tiny, tiny_labels, position_source="group_bbox")
    a = first.prepare(tiny)[0].coord_idx
    b = whole.prepare(tiny)[0].coord_idx
    assert not np.array_equal(a, b)


def test_zero_parameters_predict_first_class(tiny, tiny_labels):
    model = _model(tiny, tiny_labels)
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    pred = hvila_forward(tiny, model)
    assert set(pred.token_labels) == {0}
    np.testing.assert_allclose(pred.probs, 1 / 3)


def test_tokens_inherit_group_label(tiny, tiny_labels):
    pred = hvila_forward(tiny, _model(tiny, tiny_labels))
    for lab, g in zip(pred.group_labels, pred.groups):
        assert {pred.token_labels[i] for i in g} == {lab}


def test_oversized_pages_split_into_chunks(tiny_labels):
    page = _page_with(40, 20)
    model = _model(page, tiny_labels)
    mcfg = replace(model.model_config, max_seq_len=8)
    chunks = prepare_page(page, model.vocab, 4, model.config, mcfg)
    assert [len(c.ids) for c in chunks] == [5, 5, 5, 5]
    assert [g for c in chunks for g in c.groups] == [list(b.token_indices) for b in page.blocks]


def test_mixed_training_groups_warn(tiny, tiny_labels):
    toks = list(tiny.tokens)
    toks[2] = replace(toks[2], gold_label=0)
    page = replace(tiny, tokens=tuple(toks), blocks=tuple(replace(b, label=None) for b in tiny.blocks))
    mcfg = ModelConfig(1, len(tiny_labels), d=16, n_heads=2, max_seq_len=32, dropout_rate=0.0)
    with pytest.warns(MixedGroupWarning):
        train_hvila([page], tiny_labels, HVilaConfig(1, 1), mcfg, TrainConfig(epochs=1))


def test_overfits_tiny_page(tiny, tiny_labels):
    mcfg = ModelConfig(1, len(tiny_labels), d=32, n_heads=2, max_seq_len=32, dropout_rate=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", MixedGroupWarning)
        model, _ = train_hvila(
            [tiny], tiny_labels, HVilaConfig(1, 1), mcfg,
            TrainConfig(epochs=100, batch_size=1, lr=3e-3, stop_at_train_accuracy=1.0, check_every=5),
        )
    assert hvila_forward(tiny, model).token_labels == tiny.gold_labels


def test_simple_classifier_labels_each_group(tiny, tiny_labels):
    vocab = Vocab.build([tiny])
    mcfg = ModelConfig(len(vocab), len(tiny_labels), d=16, n_heads=2, max_seq_len=32, dropout_rate=0.0)
    model = SimpleGroupClassifier.init(mcfg, vocab, tiny_labels)
    seqs = model.prepare(tiny)
    # [CLS] plus the longest block
    assert seqs.ids.shape == (3, 6)
    pred = simple_group_classifier_forward(tiny, model)
    assert len(pred.group_labels) == 3 and -1 not in pred.token_labels


def test_cost_model_favours_grouping_on_long_pages():
    d, ff = 32, 4
    flat = token_baseline_macs(800, d, ff, 2)
    grouped = hvila_macs(40, 20, d, ff, 1, 1)
    assert grouped < flat / 4
    # the advantage grows with page length at a fixed group size
    assert hvila_macs(80, 20, d, ff, 1, 1) / token_baseline_macs(1600, d, ff, 2) < grouped / flat
