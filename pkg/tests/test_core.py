import math

import numpy as np
import pytest

from conftest import make_page
from vila.core import (
    BBox,
    GroupKind,
    LabelSet,
    Page,
    Token,
    VisualGroup,
    group_of_token,
    reading_order_sort,
    validate_page,
)


def test_bbox_geometry():
    b = BBox(1.0, 2.0, 4.0, 8.0)
    assert (b.width, b.height, b.center) == (3.0, 6.0, (2.5, 5.0))
    assert b.union(BBox(0.0, 5.0, 2.0, 9.0)) == BBox(0.0, 2.0, 4.0, 9.0)
    assert BBox.enclosing([b, BBox(5, 5, 6, 6)]) == BBox(1.0, 2.0, 6, 8.0)
    assert not BBox(2, 0, 1, 1).is_well_formed()
    assert not BBox(0, 0, math.nan, 1).is_finite()
    with pytest.raises(ValueError):
        BBox.enclosing([])


def test_labelset_rules():
    with pytest.raises(ValueError):
        LabelSet(("a", "a"))
    with pytest.raises(ValueError):
        LabelSet(("only",))
    with pytest.raises(ValueError):
        LabelSet(tuple(f"c{i}" for i in range(65)))
    ls = LabelSet(("x", "y"), 1)
    assert ls.index("y") == 1
    with pytest.raises(KeyError):
        ls.index("z")


@pytest.mark.parametrize("name,size,background", [("s2vl", 15, "paragraph"), ("grotoap2", 22, "BODY_CONTENT"), ("docbank", 12, "paragraph")])
def test_builtin_label_sets(name, size, background):
    ls = LabelSet.builtin(name)
    assert len(ls) == size
    assert ls.names[ls.background_index] == background


def test_valid_page_has_no_violations(s2vl):
    page = make_page([["a", "b"], ["c"]], labels=[0, 4])
    assert validate_page(page, s2vl).ok


def test_overlapping_groups_are_named(s2vl):
    page = make_page([["a", "b"], ["c"]])
    bad = page.with_groups(GroupKind.LINE, page.lines + (VisualGroup(BBox(0, 0, 1, 1), GroupKind.LINE, (1,)),))
    report = validate_page(bad, s2vl)
    [v] = report.of_kind("overlap")
    assert v.token == 1
    assert v.groups == ("line[0]", "line[2]")


def test_validation_is_total(s2vl):
    toks = (
        Token("", BBox(0, 0, 1, 1)),
        Token("ok", BBox(5, 5, 1, 1)),
        Token("nan", BBox(math.nan, 0, 1, 1)),
        Token("far", BBox(0, 0, 999, 1)),
        Token("lab", BBox(0, 0, 1, 1), 99),
    )
    groups = (VisualGroup(BBox(0, 0, 1, 1), GroupKind.BLOCK, (3, 1, 17)),)
    page = Page("p", 0, 100.0, 100.0, toks, (), groups)
    kinds = {v.kind for v in validate_page(page, s2vl).violations}
    assert {"token_text", "bbox", "out_of_bounds", "label", "group_order", "group_index"} <= kinds
    assert not validate_page(Page("p", 0, -1.0, 0.0, ()), s2vl).ok


def test_reading_order_sort_is_line_major():
    # tokens stored right-to-left and bottom line first
    toks = (
        Token("d", BBox(40, 30, 50, 38)),
        Token("c", BBox(10, 30, 20, 38)),
        Token("b", BBox(40, 10, 50, 18)),
        Token("a", BBox(10, 10, 20, 18)),
        Token("z", BBox(80, 80, 90, 88)),
    )
    lines = (
        VisualGroup(BBox(10, 30, 50, 38), GroupKind.LINE, (0, 1)),
        VisualGroup(BBox(10, 10, 50, 18), GroupKind.LINE, (2, 3)),
    )
    blocks = (VisualGroup(BBox(10, 10, 50, 38), GroupKind.BLOCK, (0, 1, 2, 3)),)
    page = reading_order_sort(Page("p", 0, 100.0, 100.0, toks, lines, blocks))
    assert [t.text for t in page.tokens] == ["a", "b", "c", "d", "z"]
    assert [g.token_indices for g in page.lines] == [(0, 1), (2, 3)]
    assert page.blocks[0].token_indices == (0, 1, 2, 3)


def test_reading_order_needs_lines():
    with pytest.raises(ValueError):
        reading_order_sort(Page("p", 0, 10.0, 10.0, (Token("a", BBox(0, 0, 1, 1)),)))


def test_group_of_token():
    page = make_page([["a", "b"], ["c"], ["d"]])
    np.testing.assert_array_equal(group_of_token(5, page.lines), [0, 0, 1, 2, -1])
