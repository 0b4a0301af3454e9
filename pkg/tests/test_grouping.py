import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_page
from oracles import allocate_reference, random_allocation_case
from vila.core import BBox, GroupKind, Page, Token
from vila.grouping import (
    GroupingConfig,
    PerturbConfig,
    allocate_tokens,
    detect_blocks,
    detect_groups,
    detect_lines,
    group_agreement,
    majority_vote_relabel,
    modal_label,
    perturb_groups,
    perturb_groups_logged,
)


def _tok(x, y, w=8.0, h=8.0, text="w", label=None):
    return Token(text, BBox(x, y, x + w, y + h), label)


def test_lines_follow_y_bands_and_split_columns():
    toks = [_tok(10, 10), _tok(20, 10.5), _tok(200, 10), _tok(210, 10), _tok(10, 30)]
    lines = detect_lines(Page("p", 0, 300.0, 300.0, tuple(toks)))
    assert [g.token_indices for g in lines] == [(0, 1), (2, 3), (4,)]
    merged = detect_lines(Page("p", 0, 300.0, 300.0, tuple(toks)), GroupingConfig(line_x_gap=None))
    assert [g.token_indices for g in merged] == [(0, 1, 2, 3), (4,)]


def test_blocks_split_on_vertical_gap():
    # line pitch 10 with height 8 (gap 2), then a 40-unit gap
    toks = [_tok(10, y) for y in (10, 20, 30, 78, 88)]
    page = Page("p", 0, 300.0, 300.0, tuple(toks))
    blocks = detect_blocks(detect_lines(page))
    assert [g.token_indices for g in blocks] == [(0, 1, 2), (3, 4)]
    assert blocks[0].bbox == BBox(10, 10, 18, 38)


def test_blocks_need_horizontal_overlap():
    toks = [_tok(10, 10, w=50), _tok(200, 20, w=50)]
    blocks = detect_blocks(detect_lines(Page("p", 0, 300.0, 300.0, tuple(toks))))
    assert len(blocks) == 2


def test_detect_groups_on_empty_page():
    page = detect_groups(Page("p", 0, 10.0, 10.0, ()))
    assert page.lines == () and page.blocks == ()


def test_grouping_config_validation():
    with pytest.raises(ValueError):
        GroupingConfig(line_y_tolerance=0)
    with pytest.raises(ValueError):
        GroupingConfig(block_x_overlap_min=1.5)
    with pytest.raises(ValueError):
        PerturbConfig(p_merge=1.2)


def test_allocation_examples():
    page = Page("p", 0, 100.0, 100.0, (_tok(0, 0, 2, 2), _tok(10, 10, 2, 2), _tok(50, 50, 2, 2)))
    # token 1 sits inside both boxes; box 1 already owns token 0 so it wins
    boxes = [BBox(5, 5, 20, 20), BBox(-1, -1, 15, 15)]
    groups = allocate_tokens(page, boxes)
    assert [g.token_indices for g in groups] == [(0, 1), (2,)]
    assert groups[0].bbox == boxes[1]
    # a center on the box edge is outside (strict test)
    edge = Page("p", 0, 100.0, 100.0, (_tok(9, 9, 2, 2),))
    assert allocate_tokens(edge, [BBox(10, 0, 20, 20)])[0].bbox == edge.tokens[0].bbox


def test_allocation_tie_between_empty_boxes_goes_to_first_listed():
    page = Page("p", 0, 100.0, 100.0, (_tok(10, 10, 2, 2),))
    groups = allocate_tokens(page, [BBox(5, 5, 20, 20), BBox(0, 0, 30, 30)])
    assert groups[0].bbox == BBox(5, 5, 20, 20)


def test_allocation_rejects_no_boxes():
    with pytest.raises(ValueError):
        allocate_tokens(make_page([["a"]]), [])


def test_allocation_matches_reference_on_random_pages():
    rng = np.random.default_rng(1)
    for _ in range(200):
        page, boxes = random_allocation_case(rng)
        got = [g.token_indices for g in allocate_tokens(page, boxes)]
        assert got == allocate_reference(page, boxes)


def test_modal_label_tie_goes_to_smallest():
    assert modal_label([3, 1, 3, 1, 2]) == 1
    assert modal_label([5]) == 5


def test_majority_vote_relabel():
    page = make_page([["a", "b", "c"], ["d"]], labels=[0, 1])
    page = page.with_groups(GroupKind.BLOCK, [page.blocks[0].__class__(BBox(0, 0, 1, 1), GroupKind.BLOCK, (0, 1, 2, 3))])
    assert majority_vote_relabel(page, page.blocks) == [0, 0, 0, 0]
    assert majority_vote_relabel(page, page.lines) == [0, 0, 0, 1]
    with pytest.raises(ValueError):
        majority_vote_relabel(make_page([["a"]]), [])


def test_zero_noise_perturbation_keeps_groups(small_corpus):
    page = small_corpus.pages[0]
    same = perturb_groups(page, PerturbConfig(), seed=3)
    assert [g.token_indices for g in same.blocks] == [g.token_indices for g in page.blocks]


def test_perturbation_is_seeded_and_counts_edits(small_corpus):
    page = small_corpus.pages[0]
    noise = PerturbConfig(0.5, 0.5, 0.5)
    a, log_a = perturb_groups_logged(page, noise, seed=9)
    b, _ = perturb_groups_logged(page, noise, seed=9)
    assert a == b
    assert log_a.merges + log_a.splits + log_a.jitters > 0
    covered = sorted(i for g in a.blocks for i in g.token_indices)
    assert covered == list(range(len(page.tokens)))
    assert a.lines == page.lines


def test_group_agreement():
    page = make_page([["a", "b"], ["c", "d"]])
    assert group_agreement(4, page.lines, page.lines) == 1.0
    merged = [page.blocks[0].__class__(BBox(0, 0, 1, 1), GroupKind.LINE, (0, 1, 2, 3))]
    assert group_agreement(4, merged, page.lines) == 0.5
    assert group_agreement(4, page.lines, merged) == 0.5
    assert group_agreement(0, [], []) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), min_size=1, max_size=30))
def test_detected_groups_partition_tokens(cells):
    toks = tuple(_tok(10.0 * x, 12.0 * y) for x, y in cells)
    page = detect_groups(Page("h", 0, 500.0, 500.0, toks))
    for groups in (page.lines, page.blocks):
        covered = sorted(i for g in groups for i in g.token_indices)
        assert covered == list(range(len(toks)))
