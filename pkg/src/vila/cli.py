"""``vila`` command line.

Exit codes: 0 success, 1 config error, 2 data error, 3 at least one grid cell failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from vila import __version__
from vila.config import FORMAT_VERSION, METHODS, ConfigError, RunConfig, dump_yaml, load_config
from vila.core import Dataset, LabelSet
from vila.experiment import (
    load_predictor,
    merge_grid,
    merge_study,
    method_kind,
    model_view,
    run_experiment,
    run_perturb_study,
    save_predictor,
    score,
    train_method,
)
from vila.grouping import PerturbConfig, detect_groups, group_agreement, perturb_groups
from vila.interchange import DataError, load_pages, save_pages
from vila.ivila import MODES, build_windows, windows_to_jsonl
from vila.synth import GenerationError, corpus_statistics, format_statistics, generate_corpus
from vila.vocab import Vocab

log = logging.getLogger("vila")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CELL = 0, 1, 2, 3
PAGES_FILE = "pages.jsonl"


# ---------------------------------------------------------------------------
# helpers


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key] = yaml.safe_load(raw)
    if getattr(args, "seed", None) is not None:
        out["corpus.seed"] = args.seed
    return out


def _config(args) -> RunConfig:
    return load_config(RunConfig, args.config, _overrides(args))


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists():
        if not force:
            raise ConfigError(f"output {path} already exists; pass --force to replace it")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True)
    return path


def _write_run_files(out: Path, command: str, cfg: RunConfig, seeds) -> None:
    (out / "config.yaml").write_text(dump_yaml(cfg), encoding="utf-8")
    meta = {"format_version": FORMAT_VERSION, "command": command, "seeds": list(seeds), "vila_version": __version__}
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _corpus_path(arg: Optional[str]) -> Path:
    path = Path(arg)
    return path / PAGES_FILE if path.is_dir() else path


def _dataset(cfg: RunConfig, corpus_arg: Optional[str] = None) -> Dataset:
    src = corpus_arg or cfg.corpus_path
    if src:
        return load_pages(_corpus_path(src), LabelSet.builtin(cfg.labels))
    return generate_corpus(cfg.corpus)


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> int:
    cfg = _config(args)
    out = _prepare_out(Path(args.out), args.force)
    dataset = generate_corpus(cfg.corpus)
    save_pages(dataset, out / PAGES_FILE)
    stats = format_statistics(corpus_statistics(dataset))
    (out / "stats.txt").write_text(stats + "\n", encoding="utf-8")
    _write_run_files(out, "gen-corpus", cfg, [cfg.corpus.seed])
    print(stats)
    return EXIT_OK


def cmd_group_detect(args) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.corpus)
    out = _prepare_out(Path(args.out), args.force)
    pages, line_agree, block_agree = [], [], []
    noise = PerturbConfig(*args.perturb, jitter_scale=cfg.perturb.jitter_scale) if args.perturb else None
    for i, page in enumerate(dataset.pages):
        if noise is None:
            new = detect_groups(page, cfg.grouping)
        else:
            new = perturb_groups(page, noise, int(np.random.SeedSequence([cfg.perturb.seed, i]).generate_state(1)[0]))
        line_agree.append(group_agreement(len(page.tokens), new.lines, page.lines))
        block_agree.append(group_agreement(len(page.tokens), new.blocks, page.blocks))
        pages.append(new)
    save_pages(Dataset(tuple(pages), dataset.labels), out / PAGES_FILE)
    summary = {"pages": len(pages), "line_agreement": float(np.mean(line_agree)), "block_agreement": float(np.mean(block_agree))}
    _json(out / "agreement.json", summary)
    _write_run_files(out, "group-detect", cfg, [cfg.perturb.seed])
    print(f"line agreement  {100 * summary['line_agreement']:.2f}%")
    print(f"block agreement {100 * summary['block_agreement']:.2f}%")
    return EXIT_OK


def cmd_prepare(args) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.corpus)
    out = _prepare_out(Path(args.out), args.force)
    pages = model_view(dataset.pages, cfg)
    vocab = Vocab.build(pages)
    n = 0
    with open(out / "windows.jsonl", "w", encoding="utf-8") as fh:
        for page in pages:
            windows = build_windows(page, args.mode, vocab, cfg.model.max_seq_len)
            fh.write(windows_to_jsonl(windows))
            n += len(windows)
    _json(out / "vocab.json", {"words": list(vocab.words), "fingerprint": vocab.fingerprint})
    _write_run_files(out, "prepare", cfg, [])
    print(f"{n} windows from {len(pages)} pages, vocabulary {len(vocab)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.corpus)
    out = _prepare_out(Path(args.out), args.force)
    pages = model_view(dataset.pages, cfg)
    seed = cfg.seeds[0]
    predictor, record = train_method(args.method, pages, dataset.labels, cfg, seed)
    save_predictor(out / "model.npz", predictor)
    _json(out / "train_log.json", record.to_dict())
    _write_run_files(out, "train", cfg, [seed])
    print(f"trained {args.method} for {record.epochs_run} epochs, final loss {record.epoch_losses[-1]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.corpus)
    out = _prepare_out(Path(args.out), args.force)
    try:
        predictor = load_predictor(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(args.checkpoint, f"cannot load checkpoint: {exc}") from exc
    pages = model_view(dataset.pages, cfg)
    report = score([predictor.predict(p) for p in pages], dataset.pages, dataset.labels)
    _json(out / "report.json", report.to_flat_dict())
    _write_run_files(out, "eval", cfg, [])
    print(f"Macro F1 {100 * report.macro_f1:.2f}  H(G^B) {report.h_g_block:.2f}  H(G^L) {report.h_g_line:.2f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.corpus)
    out = _prepare_out(Path(args.out), args.force)
    _write_run_files(out, "experiment", cfg, cfg.seeds)
    result = run_experiment(cfg, dataset, out, progress=log.info)
    text, rows = merge_grid(result, cfg.methods)
    (out / "merged.txt").write_text(text, encoding="utf-8")
    _json(out / "merged.json", rows)
    print(text, end="")
    if result.failed:
        print(f"{len(result.failed)} cell(s) failed; see {out / 'cells'}", file=sys.stderr)
        return EXIT_CELL
    return EXIT_OK


def cmd_perturb_study(args) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.corpus)
    out = _prepare_out(Path(args.out), args.force)
    _write_run_files(out, "perturb-study", cfg, cfg.seeds)
    study = run_perturb_study(cfg, dataset, out, progress=log.info)
    kind = method_kind(cfg.perturb.methods[0])
    text, rows = merge_study(study, cfg.perturb.methods, kind)
    (out / "merged.txt").write_text(text, encoding="utf-8")
    _json(out / "merged.json", rows)
    print(text, end="")
    if study.failed:
        print(f"{len(study.failed)} cell(s) failed; see {out / 'cells'}", file=sys.stderr)
        return EXIT_CELL
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from vila.checks import gradcheck_model

    report = gradcheck_model(args.model, sample_count=args.samples, epsilon=args.epsilon, seed=args.check_seed)
    print(f"{args.model}: max relative error {report.max_rel_error:.3e} over {report.checked} entries")
    for name, err in sorted(report.per_tensor.items(), key=lambda kv: -kv[1])[:5]:
        print(f"  {name:<24} {err:.3e}")
    return EXIT_OK if report.passed(args.tolerance) else EXIT_CELL


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vila", description="Layout-group-aware token classification experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=True, out=True):
        p.add_argument("--config", help="YAML or JSON run config (defaults apply when omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. train.epochs=5")
        if corpus:
            p.add_argument("--corpus", help="pages file or corpus directory (default: config corpus_path, else generate)")
        if out:
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--force", action="store_true", help="replace an existing output directory")

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus and print its statistics")
    common(p, corpus=False)
    p.add_argument("--seed", type=int, help="corpus seed (overrides corpus.seed)")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("group-detect", help="replace gold lines/blocks with detected or perturbed ones")
    common(p)
    p.add_argument("--perturb", type=float, nargs=3, metavar=("MERGE", "SPLIT", "JITTER"), help="perturb gold blocks instead of detecting")
    p.set_defaults(func=cmd_group_detect)

    p = sub.add_parser("prepare", help="dump model input windows as JSONL")
    common(p)
    p.add_argument("--mode", choices=MODES, default="block")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one method on a whole corpus")
    common(p)
    p.add_argument("--method", choices=METHODS, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the method x fold x seed grid")
    common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("perturb-study", help="score models and the group-uniform oracle under corrupted groups")
    common(p)
    p.set_defaults(func=cmd_perturb_study)

    p = sub.add_parser("gradcheck", help="finite-difference check of a tiny model")
    p.add_argument("--model", choices=("ivila", "hvila", "simple"), default="ivila")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--check-seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GenerationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
