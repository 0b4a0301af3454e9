"""Experiment grids: train and score every (method, fold, seed) cell, merge the results.

Cells run one after another so timing measurements do not compete for the
CPU. A failing cell is recorded and the grid carries on.
"""

from __future__ import annotations

import json
import logging
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from vila.config import METHODS, RunConfig, to_plain
from vila.core import Dataset, GroupKind, LabelSet, Page
from vila.evaluation import EvalReport, group_inconsistency_pages, kfold_split_by_paper, macro_f1, mean_std, time_inference
from vila.grouping import PerturbConfig, detect_groups, majority_vote_relabel, perturb_groups
from vila.hvila import (
    HVilaConfig,
    HVilaModel,
    SimpleGroupClassifier,
    predict_prepared,
    simple_predict_prepared,
    train_hvila,
    train_simple_group_classifier,
)
from vila.ivila import TokenClassifier, make_batch, predict_batch, train_token_classifier
from vila.nn.checkpoint import load_checkpoint, save_checkpoint
from vila.nn.encoder import ModelConfig
from vila.vocab import Vocab

log = logging.getLogger(__name__)

TOKEN_MODES = {"baseline": "baseline", "sentence": "sentence", "ivila-line": "line", "ivila-block": "block"}
DISPLAY = {
    "baseline": "Baseline",
    "sentence": "Sentence break",
    "ivila-line": "I-VILA (line)",
    "ivila-block": "I-VILA (block)",
    "hvila-line": "H-VILA (line)",
    "hvila-block": "H-VILA (block)",
    "simple-group": "Simple group classifier",
}


def method_kind(method: str) -> GroupKind:
    return GroupKind.LINE if method.endswith("line") else GroupKind.BLOCK


# ---------------------------------------------------------------------------
# a trained model behind one interface


@dataclass
class Predictor:
    method: str
    model: object

    def prepare(self, page: Page):
        """Everything that happens before the model runs: windows, groups, padding."""
        m = self.model
        if isinstance(m, TokenClassifier):
            return make_batch(m.windows(page), m.config.coord_buckets), len(page.tokens)
        return m.prepare(page)

    def run(self, prepared) -> list[int]:
        m = self.model
        if isinstance(m, TokenClassifier):
            return predict_batch(m, *prepared)
        if isinstance(m, HVilaModel):
            return predict_prepared(m, prepared).token_labels
        return simple_predict_prepared(m, prepared).token_labels

    def predict(self, page: Page) -> list[int]:
        return self.run(self.prepare(page))


def model_config(cfg: RunConfig, vocab: Vocab, labels: LabelSet, seed: int) -> ModelConfig:
    return ModelConfig(vocab_size=len(vocab), n_classes=len(labels), seed=seed, **asdict(cfg.model))


def train_method(method: str, pages: Sequence[Page], labels: LabelSet, cfg: RunConfig, seed: int, vocab: Optional[Vocab] = None):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    vocab = vocab or Vocab.build(pages)
    mcfg = model_config(cfg, vocab, labels, seed)
    hyper = replace(cfg.train, seed=seed)
    if method in TOKEN_MODES:
        model, record = train_token_classifier(pages, labels, TOKEN_MODES[method], mcfg, hyper, vocab)
    elif method.startswith("hvila"):
        hcfg = replace(cfg.hvila, group_kind=method_kind(method))
        model, record = train_hvila(pages, labels, hcfg, mcfg, hyper, vocab)
    else:
        model, record = train_simple_group_classifier(pages, labels, mcfg, hyper, GroupKind.BLOCK, vocab)
    return Predictor(method, model), record


# ---------------------------------------------------------------------------
# checkpoints


def save_predictor(path, predictor: Predictor) -> None:
    m = predictor.model
    extra = {
        "method": predictor.method,
        "vocab": list(m.vocab.words),
        "labels": list(m.labels.names),
        "background": m.labels.background_index,
    }
    if isinstance(m, TokenClassifier):
        extra.update(mode=m.mode, max_len=m.max_len, use_layout=m.use_layout)
        mcfg = m.config
    elif isinstance(m, HVilaModel):
        extra.update(hvila=to_plain(m.config), n_tilde=m.n_tilde)
        mcfg = m.model_config
    else:
        extra.update(group_kind=m.group_kind.value)
        mcfg = m.config
    save_checkpoint(path, m.params, predictor.method, asdict(mcfg), extra)


def load_predictor(path) -> Predictor:
    params, header = load_checkpoint(path)
    extra = header["extra"]
    mcfg = ModelConfig(**header["config"])
    vocab = Vocab(tuple(extra["vocab"]))
    labels = LabelSet(tuple(extra["labels"]), extra["background"])
    method = extra["method"]
    if method in TOKEN_MODES:
        model = TokenClassifier(mcfg, params, vocab, labels, extra["mode"], extra["max_len"], extra["use_layout"])
    elif method.startswith("hvila"):
        model = HVilaModel(HVilaConfig(**extra["hvila"]), mcfg, params, vocab, labels, extra["n_tilde"])
    else:
        model = SimpleGroupClassifier(mcfg, params, vocab, labels, GroupKind(extra["group_kind"]))
    return Predictor(method, model)


# ---------------------------------------------------------------------------
# scoring


def score(
    preds: Sequence[Sequence[int]],
    gold_pages: Sequence[Page],
    labels: LabelSet,
) -> EvalReport:
    """Macro F1 over labelled tokens plus H(G) against the gold lines and blocks."""
    flat_pred, flat_gold = [], []
    for pred, page in zip(preds, gold_pages):
        for a, g in zip(pred, page.gold_labels):
            if g is not None:
                flat_pred.append(a)
                flat_gold.append(g)
    report = macro_f1(flat_pred, flat_gold, labels)
    report.h_g_block = group_inconsistency_pages(preds, [p.blocks for p in gold_pages])
    report.h_g_line = group_inconsistency_pages(preds, [p.lines for p in gold_pages])
    report.n_groups = sum(1 for p in gold_pages for g in p.blocks if g.token_indices)
    report.n_pages = len(gold_pages)
    return report


def model_view(pages: Sequence[Page], cfg: RunConfig) -> list[Page]:
    """Pages as the models see them: gold groups, or groups from the detector."""
    if cfg.groups == "detected":
        return [detect_groups(p, cfg.grouping) for p in pages]
    return list(pages)


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# experiment grid


@dataclass
class CellResult:
    method: str
    fold: int
    seed: int
    report: Optional[EvalReport] = None
    error: Optional[str] = None


@dataclass
class GridResult:
    cells: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c.error is not None]


def cell_name(method: str, fold: int, seed: int) -> str:
    return f"{method}.fold{fold}.seed{seed}"


def run_experiment(cfg: RunConfig, dataset: Dataset, out: Path, progress: Callable[[str], None] = log.info) -> GridResult:
    folds = kfold_split_by_paper(dataset, cfg.folds, cfg.fold_seed)
    chosen = cfg.run_folds if cfg.run_folds is not None else tuple(range(cfg.folds))
    result = GridResult()
    for f in chosen:
        train_idx, test_idx = folds[f]
        gold_train = [dataset.pages[i] for i in train_idx]
        gold_test = [dataset.pages[i] for i in test_idx]
        train_pages, test_pages = model_view(gold_train, cfg), model_view(gold_test, cfg)
        vocab = Vocab.build(train_pages)
        for seed in cfg.seeds:
            for method in cfg.methods:
                name = cell_name(method, f, seed)
                progress(f"cell {name}")
                cell = CellResult(method, f, seed)
                try:
                    predictor, record = train_method(method, train_pages, dataset.labels, cfg, seed, vocab)
                    preds = [predictor.predict(p) for p in test_pages]
                    cell.report = score(preds, gold_test, dataset.labels)
                    _dump(out / "cells" / f"{name}.json", {"method": method, "fold": f, "seed": seed, **cell.report.to_flat_dict()})
                    _dump(out / "cells" / f"{name}.train.json", record.to_dict())
                    if cfg.timing.runs:
                        timed = test_pages[: cfg.timing.max_pages]
                        prepared = [predictor.prepare(p) for p in timed]
                        cell.report.timing = time_inference(predictor.run, prepared, cfg.timing.runs, cfg.timing.warmup)
                        _dump(out / "cells" / f"{name}.timing.json", asdict(cell.report.timing))
                except Exception as exc:  # one bad cell must not sink the grid
                    cell.error = f"{type(exc).__name__}: {exc}"
                    log.error("cell %s failed: %s", name, cell.error)
                    (out / "cells").mkdir(parents=True, exist_ok=True)
                    (out / "cells" / f"{name}.error.txt").write_text(traceback.format_exc(), encoding="utf-8")
                result.cells.append(cell)
    return result


def _fmt(mean: float, std: float) -> str:
    if mean != mean:  # nan
        return "-"
    return f"{mean:.2f}({std:.2f})"


def merge_grid(result: GridResult, methods: Sequence[str]) -> tuple[str, list[dict]]:
    """Per-method mean(std) over folds and seeds, as a text table and flat rows."""
    rows, lines = [], []
    header = ("Method", "Macro F1", "H(G^B)", "H(G^L)", "ms/page", "cells")
    table = [header]
    for method in methods:
        ok = [c for c in result.cells if c.method == method and c.report is not None]
        failed = sum(1 for c in result.cells if c.method == method and c.error is not None)
        f1 = mean_std([100.0 * c.report.macro_f1 for c in ok])
        hb = mean_std([c.report.h_g_block for c in ok])
        hl = mean_std([c.report.h_g_line for c in ok])
        ms = mean_std([c.report.timing.mean_ms for c in ok if c.report.timing is not None])
        rows.append(
            {
                "method": method,
                "macro_f1_mean": f1[0], "macro_f1_std": f1[1],
                "h_g_block_mean": hb[0], "h_g_block_std": hb[1],
                "h_g_line_mean": hl[0], "h_g_line_std": hl[1],
                "time_mean_ms": ms[0], "time_std_ms": ms[1],
                "cells": len(ok), "failed_cells": failed,
            }
        )
        cells = f"{len(ok)}" + (f" ({failed} failed)" if failed else "")
        table.append((DISPLAY[method], _fmt(*f1), _fmt(*hb), _fmt(*hl), _fmt(*ms), cells))
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    for k, r in enumerate(table):
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths))).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    # NaN is not JSON; missing values become null
    rows = [{k: (None if isinstance(v, float) and v != v else v) for k, v in r.items()} for r in rows]
    return "\n".join(lines) + "\n", rows


# ---------------------------------------------------------------------------
# group-detector study


def oracle_predictions(pages: Sequence[Page], kind: GroupKind) -> list[list[int]]:
    """Modal gold label per group of ``kind``: the best any group-uniform labeller can do."""
    return [majority_vote_relabel(p, p.groups(kind)) for p in pages]


def _page_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def perturb_conditions(cfg: RunConfig, pages: Sequence[Page], kind: GroupKind) -> list[tuple[str, list[Page]]]:
    """(name, pages) for gold, detected and every configured perturbation rate."""
    out = [("gold", list(pages))]
    if cfg.perturb.detected:
        detected = []
        for p in pages:
            q = detect_groups(p, cfg.grouping)
            detected.append(p.with_groups(kind, q.groups(kind)))
        out.append(("detected", detected))
    for rates in cfg.perturb.rates:
        noise = PerturbConfig(*rates, jitter_scale=cfg.perturb.jitter_scale)
        name = "perturbed({:g},{:g},{:g})".format(*rates)
        out.append((name, [perturb_groups(p, noise, _page_seed(cfg.perturb.seed, i), kind) for i, p in enumerate(pages)]))
    return out


@dataclass
class StudyResult:
    # condition -> method (or "oracle") -> list of (fold, seed, EvalReport)
    scores: dict = field(default_factory=dict)
    failed: list = field(default_factory=list)

    def add(self, condition: str, method: str, fold: int, seed: int, report: EvalReport) -> None:
        self.scores.setdefault(condition, {}).setdefault(method, []).append((fold, seed, report))


def run_perturb_study(cfg: RunConfig, dataset: Dataset, out: Path, progress: Callable[[str], None] = log.info) -> StudyResult:
    """Train on gold groups once per fold and seed, then score under every grouping condition."""
    kinds = {method_kind(m) for m in cfg.perturb.methods}
    if len(kinds) != 1:
        raise ValueError("perturb.methods must all use the same group kind")
    kind = kinds.pop()
    folds = kfold_split_by_paper(dataset, cfg.folds, cfg.fold_seed)
    chosen = cfg.run_folds if cfg.run_folds is not None else tuple(range(cfg.folds))
    study = StudyResult()
    for f in chosen:
        train_idx, test_idx = folds[f]
        train_pages = [dataset.pages[i] for i in train_idx]
        gold_test = [dataset.pages[i] for i in test_idx]
        conditions = perturb_conditions(cfg, gold_test, kind)
        for cond, pages in conditions:
            report = score(oracle_predictions(pages, kind), gold_test, dataset.labels)
            study.add(cond, "oracle", f, -1, report)
            _dump(out / "cells" / f"oracle.{cond}.fold{f}.json", report.to_flat_dict())
        vocab = Vocab.build(train_pages)
        for seed in cfg.seeds:
            for method in cfg.perturb.methods:
                name = cell_name(method, f, seed)
                progress(f"cell {name}")
                try:
                    predictor, _ = train_method(method, train_pages, dataset.labels, cfg, seed, vocab)
                    for cond, pages in conditions:
                        report = score([predictor.predict(p) for p in pages], gold_test, dataset.labels)
                        study.add(cond, method, f, seed, report)
                        _dump(out / "cells" / f"{name}.{cond}.json", report.to_flat_dict())
                except Exception as exc:
                    msg = f"{type(exc).__name__}: {exc}"
                    log.error("cell %s failed: %s", name, msg)
                    study.failed.append((name, msg))
                    (out / "cells").mkdir(parents=True, exist_ok=True)
                    (out / "cells" / f"{name}.error.txt").write_text(traceback.format_exc(), encoding="utf-8")
    return study


def merge_study(study: StudyResult, methods: Sequence[str], kind: GroupKind) -> tuple[str, list[dict]]:
    h_key = "h_g_block" if kind is GroupKind.BLOCK else "h_g_line"
    columns = ["oracle"] + list(methods)
    header = ["Group source"]
    for c in columns:
        name = "Group-uniform Oracle" if c == "oracle" else DISPLAY[c]
        header += [f"{name} F1", "H(G)"]
    table, rows = [header], []
    for cond, by_method in study.scores.items():
        line = [cond]
        row = {"condition": cond}
        for c in columns:
            reps = [r for _, _, r in by_method.get(c, [])]
            f1 = mean_std([100.0 * r.macro_f1 for r in reps])
            hg = mean_std([getattr(r, h_key) for r in reps])
            line += [_fmt(*f1), _fmt(*hg)]
            row.update({f"{c}.macro_f1_mean": f1[0], f"{c}.macro_f1_std": f1[1], f"{c}.h_g_mean": hg[0], f"{c}.h_g_std": hg[1]})
        table.append(line)
        rows.append({k: (None if isinstance(v, float) and v != v else v) for k, v in row.items()})
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for k, r in enumerate(table):
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths))).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n", rows
