import json

import pytest

from vila.cli import main
from vila.config import ConfigError, RunConfig, dump_yaml, load_config
from vila.core import GroupKind
from vila.evaluation import group_inconsistency_pages
from vila.experiment import oracle_predictions, score
from vila.grouping import majority_vote_relabel

SMALL = [
    "corpus.n_papers=4",
    "corpus.pages_per_paper=[1,1]",
    "corpus.tokens_per_page_mean=200",
    "corpus.tokens_per_page_std=20",
    "model.d=16",
    "model.max_seq_len=64",
    "train.epochs=1",
    "folds=2",
]


def _set(*items):
    return [a for it in items for a in ("--set", it)]


def test_defaults_and_overrides():
    cfg = load_config(RunConfig, None, {"train.epochs": 3, "model.n_heads": 4})
    assert cfg.train.epochs == 3 and cfg.model.n_heads == 4
    assert load_config(RunConfig, None) == RunConfig()


def test_unknown_field_is_named(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("corpus:\n  bogus: 1\n")
    with pytest.raises(ConfigError, match="corpus.bogus"):
        load_config(RunConfig, path)


def test_bad_value_is_named():
    with pytest.raises(ConfigError, match="train.epochs"):
        load_config(RunConfig, None, {"train.epochs": "many"})


def test_yaml_round_trip(tmp_path):
    cfg = load_config(RunConfig, None, {"methods": ["baseline", "hvila-block"], "groups": "detected"})
    path = tmp_path / "c.yaml"
    path.write_text(dump_yaml(cfg))
    assert load_config(RunConfig, path) == cfg


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["gen-corpus", "--out", str(tmp_path / "c"), *_set("corpus.nope=1")]) == 1
    assert "corpus.nope" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "pages.jsonl"
    bad.write_text('{"paper_id": "x"\n')
    assert main(["eval", "--corpus", str(bad), "--checkpoint", "none.npz", "--out", str(tmp_path / "o")]) == 2


def test_existing_output_needs_force(tmp_path, capsys):
    out = tmp_path / "c"
    args = ["gen-corpus", "--out", str(out), *_set(*SMALL)]
    assert main(args) == 0
    assert main(args) == 1
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0
    run = json.loads((out / "run.json").read_text())
    assert run["format_version"] == "vila-run/1" and run["command"] == "gen-corpus"
    assert (out / "config.yaml").exists() and (out / "pages.jsonl").exists()


def test_train_then_eval(tmp_path, capsys):
    corpus = tmp_path / "c"
    assert main(["gen-corpus", "--out", str(corpus), *_set(*SMALL)]) == 0
    model = tmp_path / "m"
    assert main(["train", "--corpus", str(corpus), "--method", "hvila-block", "--out", str(model), *_set(*SMALL)]) == 0
    ev = tmp_path / "e"
    assert main(["eval", "--corpus", str(corpus), "--checkpoint", str(model / "model.npz"), "--out", str(ev), *_set(*SMALL)]) == 0
    report = json.loads((ev / "report.json").read_text())
    assert 0.0 <= report["macro_f1"] <= 1.0


def test_group_detect_and_prepare(tmp_path, capsys):
    corpus = tmp_path / "c"
    main(["gen-corpus", "--out", str(corpus), *_set(*SMALL)])
    assert main(["group-detect", "--corpus", str(corpus), "--out", str(tmp_path / "d")]) == 0
    agree = json.loads((tmp_path / "d" / "agreement.json").read_text())
    assert agree["block_agreement"] > 0.95
    assert main(["group-detect", "--corpus", str(corpus), "--perturb", "0.5", "0.5", "0.5", "--out", str(tmp_path / "p")]) == 0
    assert json.loads((tmp_path / "p" / "agreement.json").read_text())["block_agreement"] < agree["block_agreement"]
    assert main(["prepare", "--corpus", str(corpus), "--mode", "line", "--out", str(tmp_path / "w"), *_set(*SMALL)]) == 0
    first = json.loads((tmp_path / "w" / "windows.jsonl").read_text().splitlines()[0])
    assert len(first["token_ids"]) <= 64


def test_experiment_is_byte_reproducible(tmp_path, capsys):
    args = _set(*SMALL, "methods=[baseline,ivila-block]")
    assert main(["experiment", "--out", str(tmp_path / "a"), *args]) == 0
    assert main(["experiment", "--out", str(tmp_path / "b"), *args]) == 0
    cells = sorted(p.name for p in (tmp_path / "a" / "cells").iterdir())
    assert len(cells) == 8  # 2 methods x 2 folds, report plus train log
    for name in cells + ["../merged.json", "../merged.txt"]:
        assert (tmp_path / "a" / "cells" / name).read_bytes() == (tmp_path / "b" / "cells" / name).read_bytes()


def test_failing_cell_gives_exit_3(tmp_path, capsys):
    # a group encoder length below ñ makes every H-VILA cell fail at init
    args = _set(*SMALL, "methods=[hvila-block]", "model.max_seq_len=8", "hvila.truncation=9")
    assert main(["experiment", "--out", str(tmp_path / "x"), *args]) == 3
    assert list((tmp_path / "x" / "cells").glob("*.error.txt"))


def test_oracle_is_majority_vote(small_corpus):
    pages = small_corpus.pages
    preds = oracle_predictions(pages, GroupKind.BLOCK)
    assert preds == [majority_vote_relabel(p, p.blocks) for p in pages]
    assert group_inconsistency_pages(preds, [p.blocks for p in pages]) == 0.0
    assert score(preds, pages, small_corpus.labels).h_g_block == 0.0


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--model", "simple", "--samples", "20"]) == 0
    assert "max relative error" in capsys.readouterr().out
