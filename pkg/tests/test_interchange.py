import json

import pytest

from vila.interchange import DataError, load_pages, save_pages


def _lines(path):
    return path.read_text().splitlines()


def test_round_trip(small_corpus, tmp_path):
    path = tmp_path / "pages.jsonl"
    save_pages(small_corpus, path)
    assert load_pages(path) == small_corpus
    assert len(_lines(path)) == len(small_corpus.pages)


def test_missing_bbox_names_line_and_field(small_corpus, tmp_path):
    path = tmp_path / "pages.jsonl"
    save_pages(small_corpus, path)
    lines = _lines(path)
    rec = json.loads(lines[1])
    del rec["tokens"][3]["bbox"]
    lines[1] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError) as err:
        load_pages(path)
    assert err.value.line == 2 and err.value.field == "tokens[3].bbox"
    assert ":2" in str(err.value) and "tokens[3].bbox" in str(err.value)


def test_truncated_file_reports_byte_offset(small_corpus, tmp_path):
    path = tmp_path / "pages.jsonl"
    save_pages(small_corpus, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 40])
    with pytest.raises(DataError, match="truncated record") as err:
        load_pages(path)
    assert err.value.line == len(small_corpus.pages)
    assert err.value.offset is not None and err.value.offset > 0


def test_unknown_label_and_bad_types(small_corpus, tmp_path):
    path = tmp_path / "pages.jsonl"
    save_pages(small_corpus, path)
    first = json.loads(_lines(path)[0])
    first["tokens"][0]["label"] = "nonsense"
    path.write_text(json.dumps(first) + "\n")
    with pytest.raises(DataError, match="unknown label"):
        load_pages(path)
    first["tokens"][0]["label"] = None
    first["width"] = "wide"
    path.write_text(json.dumps(first) + "\n")
    with pytest.raises(DataError, match="width"):
        load_pages(path)


def test_invalid_page_lists_violations(small_corpus, tmp_path):
    path = tmp_path / "pages.jsonl"
    save_pages(small_corpus, path)
    rec = json.loads(_lines(path)[0])
    rec["blocks"][0]["tokens"] = [10**6]
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DataError, match="is invalid"):
        load_pages(path)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        load_pages(tmp_path / "absent.jsonl")
