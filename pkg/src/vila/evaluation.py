"""Metrics: per-class and Macro F1, group category inconsistency, timing, paper-level folds."""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from vila.core import Dataset, LabelSet, VisualGroup


@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class TimingStats:
    mean_ms: float
    std_ms: float
    run_totals_ms: list
    n_pages: int


@dataclass
class EvalReport:
    per_class: dict = field(default_factory=dict)
    macro_f1: float = 0.0
    excluded_classes: list = field(default_factory=list)
    h_g_block: Optional[float] = None
    h_g_line: Optional[float] = None
    timing: Optional[TimingStats] = None
    n_tokens: int = 0
    n_groups: int = 0
    n_pages: int = 0

    def to_flat_dict(self) -> dict:
        """Flat JSON-ready mapping; keys are stable across versions."""
        out = {
            "macro_f1": self.macro_f1,
            "h_g_block": self.h_g_block,
            "h_g_line": self.h_g_line,
            "n_tokens": self.n_tokens,
            "n_groups": self.n_groups,
            "n_pages": self.n_pages,
            "excluded_classes": ",".join(self.excluded_classes),
            "time_mean_ms": self.timing.mean_ms if self.timing else None,
            "time_std_ms": self.timing.std_ms if self.timing else None,
        }
        for name, s in self.per_class.items():
            out[f"precision.{name}"] = s.precision
            out[f"recall.{name}"] = s.recall
            out[f"f1.{name}"] = s.f1
            out[f"support.{name}"] = s.support
        return out


def macro_f1(pred: Sequence[int], gold: Sequence[int], labels: LabelSet) -> EvalReport:
    """Per-class precision/recall/F1 and their unweighted mean over classes present in ``gold``."""
    pred = np.asarray(pred, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {gold.size} gold labels")
    C = len(labels)
    tp = np.bincount(gold[pred == gold], minlength=C)[:C]
    pred_count = np.bincount(pred, minlength=C)[:C]
    support = np.bincount(gold, minlength=C)[:C]

    report = EvalReport(n_tokens=int(gold.size))
    f1s = []
    for c, name in enumerate(labels.names):
        p = tp[c] / pred_count[c] if pred_count[c] else 0.0
        r = tp[c] / support[c] if support[c] else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        report.per_class[name] = ClassScore(float(p), float(r), float(f), int(support[c]))
        if support[c]:
            f1s.append(f)
        else:
            report.excluded_classes.append(name)
    report.macro_f1 = float(np.mean(f1s)) if f1s else 0.0
    return report


def group_entropy(labels: Sequence[int]) -> float:
    """Natural-log entropy of the label distribution inside one group."""
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def group_inconsistency(
    pred: Sequence[int],
    groups: Sequence[VisualGroup],
    diagnostics: Optional[dict] = None,
) -> float:
    """Mean within-group entropy of predicted categories, scaled by 100."""
    return group_inconsistency_pages([pred], [groups], diagnostics)


def group_inconsistency_pages(
    preds: Sequence[Sequence[int]],
    groups: Sequence[Sequence[VisualGroup]],
    diagnostics: Optional[dict] = None,
) -> float:
    """Pooled over every group of every page."""
    total, count, empty = 0.0, 0, 0
    for pred, page_groups in zip(preds, groups):
        pred = np.asarray(pred)
        for g in page_groups:
            if not g.token_indices:
                empty += 1
                continue
            count += 1
            if len(g.token_indices) > 1:
                total += group_entropy(pred[list(g.token_indices)])
    if diagnostics is not None:
        diagnostics["empty_groups"] = diagnostics.get("empty_groups", 0) + empty
        diagnostics["groups"] = diagnostics.get("groups", 0) + count
    return 100.0 * total / count if count else 0.0


def time_inference(model_fn: Callable, pages: Sequence, runs: int = 3, warmup: int = 1) -> TimingStats:
    """Wall-clock per page of ``model_fn(page)``, BLAS pinned to one thread.

    Pages must already be pre-processed; only the model call is on the clock.
    """
    if not pages:
        raise ValueError("no pages to time")
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            for p in pages:
                model_fn(p)
        totals = []
        for _ in range(runs):
            start = time.perf_counter()
            for p in pages:
                model_fn(p)
            totals.append((time.perf_counter() - start) * 1e3)
    per_page = [t / len(pages) for t in totals]
    return TimingStats(
        mean_ms=statistics.fmean(per_page),
        std_ms=statistics.pstdev(per_page) if len(per_page) > 1 else 0.0,
        run_totals_ms=totals,
        n_pages=len(pages),
    )


def kfold_split_by_paper(dataset, k: int = 5, seed: int = 0) -> list[tuple[list[int], list[int]]]:
    """Page-index (train, test) pairs with every paper confined to one fold.

    ``dataset`` is a :class:`Dataset` or a sequence of per-page paper ids.
    """
    paper_of = [p.paper_id for p in dataset.pages] if isinstance(dataset, Dataset) else list(dataset)
    papers = list(dict.fromkeys(paper_of))
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(papers):
        raise ValueError(f"k={k} exceeds the number of distinct papers ({len(papers)})")
    rng = np.random.default_rng(seed)
    shuffled = [papers[i] for i in rng.permutation(len(papers))]
    fold_of = {pid: i % k for i, pid in enumerate(shuffled)}
    folds = []
    for f in range(k):
        test = [i for i, pid in enumerate(paper_of) if fold_of[pid] == f]
        train = [i for i, pid in enumerate(paper_of) if fold_of[pid] != f]
        folds.append((train, test))
    return folds


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    if not vals:
        return float("nan"), float("nan")
    return statistics.fmean(vals), statistics.pstdev(vals) if len(vals) > 1 else 0.0
