import math

import pytest

from vila.core import BBox, GroupKind, LabelSet, VisualGroup
from vila.evaluation import (
    EvalReport,
    group_entropy,
    group_inconsistency,
    group_inconsistency_pages,
    kfold_split_by_paper,
    macro_f1,
    mean_std,
    time_inference,
)

LABELS = LabelSet(("a", "b", "c"), 0)


def _group(*idx):
    return VisualGroup(BBox(0, 0, 1, 1), GroupKind.BLOCK, idx)


def test_split_pair_scores_ln2():
    assert group_inconsistency([0, 1], [_group(0, 1)]) == pytest.approx(69.31, abs=0.01)


def test_consistent_groups_score_zero():
    assert group_inconsistency([2, 2, 1], [_group(0, 1), _group(2)]) == 0.0


def test_entropy_uniform_over_three():
    assert group_entropy([0, 1, 2]) == pytest.approx(math.log(3))


def test_pooling_counts_groups_not_pages():
    diag = {}
    h = group_inconsistency_pages([[0, 1], [0, 0, 0]], [[_group(0, 1)], [_group(0), _group(1), _group(2), _group()]], diag)
    # one split pair among four non-empty groups
    assert h == pytest.approx(100 * math.log(2) / 4)
    assert diag == {"empty_groups": 1, "groups": 4}


def test_macro_f1_by_hand():
    gold = [0, 0, 1, 1]
    pred = [0, 1, 1, 1]
    rep = macro_f1(pred, gold, LABELS)
    # a: p=1 r=.5 f=2/3; b: p=2/3 r=1 f=.8; c absent from gold
    assert rep.macro_f1 == pytest.approx((2 / 3 + 0.8) / 2)
    assert rep.excluded_classes == ["c"]
    assert rep.per_class["b"].support == 2


def test_perfect_and_disjoint_predictions():
    assert macro_f1([0, 1, 2], [0, 1, 2], LABELS).macro_f1 == 1.0
    assert macro_f1([1, 2, 0], [0, 1, 2], LABELS).macro_f1 == 0.0
    with pytest.raises(ValueError):
        macro_f1([0], [0, 1], LABELS)


def test_flat_report_keys():
    flat = macro_f1([0, 1], [0, 1], LABELS).to_flat_dict()
    assert {"macro_f1", "h_g_block", "f1.a", "support.c", "time_mean_ms"} <= set(flat)
    assert EvalReport().to_flat_dict()["time_mean_ms"] is None


def test_kfold_keeps_papers_together():
    papers = ["p1", "p1", "p2", "p3", "p3", "p3", "p4", "p5", "p6"]
    folds = kfold_split_by_paper(papers, k=3, seed=4)
    seen = []
    for train, test in folds:
        assert not {papers[i] for i in train} & {papers[i] for i in test}
        assert sorted(train + test) == list(range(len(papers)))
        seen.extend(test)
    assert sorted(seen) == list(range(len(papers)))
    assert folds == kfold_split_by_paper(papers, k=3, seed=4)
    assert folds != kfold_split_by_paper(papers, k=3, seed=5)


def test_kfold_rejects_too_many_folds():
    with pytest.raises(ValueError):
        kfold_split_by_paper(["a", "b"], k=3)


def test_timing_counts_runs_and_pages():
    calls = []
    stats = time_inference(calls.append, ["x", "y"], runs=3, warmup=2)
    assert len(calls) == 10
    assert stats.n_pages == 2 and len(stats.run_totals_ms) == 3 and stats.mean_ms >= 0


def test_mean_std_skips_missing():
    assert mean_std([1.0, None, float("nan"), 3.0]) == (2.0, 1.0)  # population std
