"""Line-delimited JSON page files: one page record per line.

Record layout::

    {"paper_id": str, "page_index": int, "width": num, "height": num,
     "tokens": [{"text": str, "bbox": [x0, y0, x1, y1], "label": str | null}],
     "lines":  [{"bbox": [...], "tokens": [int], "label": str | null}],
     "blocks": [same as lines]}

Labels are stored as names and mapped through a ``LabelSet`` on load.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterator, Optional, Union

from vila.core import BBox, Dataset, GroupKind, LabelSet, Page, Token, VisualGroup, validate_page

FORMAT_VERSION = "vila-pages/1"


class DataError(ValueError):
    """A page file that cannot be read; the message names file, line and field."""

    def __init__(self, path, message: str, line: Optional[int] = None, field: Optional[str] = None, offset: Optional[int] = None):
        self.path, self.line, self.field, self.offset = str(path), line, field, offset
        where = self.path
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" (byte {offset})"
        if field is not None:
            where += f" field {field!r}"
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# writing


def _label_name(labels: LabelSet, idx: Optional[int]) -> Optional[str]:
    return None if idx is None else labels.names[idx]


def page_to_record(page: Page, labels: LabelSet) -> dict:
    def group(g: VisualGroup) -> dict:
        return {"bbox": g.bbox.as_list(), "tokens": list(g.token_indices), "label": _label_name(labels, g.label)}

    return {
        "paper_id": page.paper_id,
        "page_index": page.page_index,
        "width": page.width,
        "height": page.height,
        "tokens": [{"text": t.text, "bbox": t.bbox.as_list(), "label": _label_name(labels, t.gold_label)} for t in page.tokens],
        "lines": [group(g) for g in page.lines],
        "blocks": [group(g) for g in page.blocks],
    }


def save_pages(dataset: Dataset, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for page in dataset.pages:
            fh.write(json.dumps(page_to_record(page, dataset.labels), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# reading


class _Record:
    """Field access that turns a bad value into a ``DataError``."""

    def __init__(self, path, line: int, labels: LabelSet):
        self.path, self.line, self.labels = path, line, labels

    def fail(self, field: str, message: str):
        raise DataError(self.path, message, line=self.line, field=field)

    def get(self, obj: dict, key: str, kind, where: str):
        name = f"{where}.{key}" if where else key
        if not isinstance(obj, dict):
            self.fail(where or "<record>", "expected a JSON object")
        if key not in obj:
            self.fail(name, "missing field")
        val = obj[key]
        ok = isinstance(val, kind) and not (kind is not bool and isinstance(val, bool))
        if not ok:
            self.fail(name, f"expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
        return val

    def number(self, obj, key, where) -> float:
        return float(self.get(obj, key, (int, float), where))

    def bbox(self, obj, where) -> BBox:
        raw = self.get(obj, "bbox", list, where)
        if len(raw) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
            self.fail(f"{where}.bbox", "expected four numbers [x0, y0, x1, y1]")
        return BBox(*(float(v) for v in raw))

    def label(self, obj, where) -> Optional[int]:
        if not isinstance(obj, dict) or "label" not in obj:
            self.fail(f"{where}.label", "missing field")
        name = obj["label"]
        if name is None:
            return None
        if not isinstance(name, str):
            self.fail(f"{where}.label", f"expected a label name or null, got {type(name).__name__}")
        try:
            return self.labels.index(name)
        except KeyError:
            self.fail(f"{where}.label", f"unknown label {name!r}")

    def groups(self, rec, key: str, kind: GroupKind) -> tuple[VisualGroup, ...]:
        out = []
        for j, g in enumerate(self.get(rec, key, list, "")):
            where = f"{key}[{j}]"
            idx = self.get(g, "tokens", list, where)
            if not all(isinstance(i, int) and not isinstance(i, bool) for i in idx):
                self.fail(f"{where}.tokens", "expected integer token indices")
            out.append(VisualGroup(self.bbox(g, where), kind, tuple(idx), self.label(g, where)))
        return tuple(out)

    def page(self, rec) -> Page:
        tokens = []
        for i, t in enumerate(self.get(rec, "tokens", list, "")):
            where = f"tokens[{i}]"
            tokens.append(Token(self.get(t, "text", str, where), self.bbox(t, where), self.label(t, where)))
        return Page(
            paper_id=self.get(rec, "paper_id", str, ""),
            page_index=self.get(rec, "page_index", int, ""),
            width=self.number(rec, "width", ""),
            height=self.number(rec, "height", ""),
            tokens=tuple(tokens),
            lines=self.groups(rec, "lines", GroupKind.LINE),
            blocks=self.groups(rec, "blocks", GroupKind.BLOCK),
        )


def iter_pages(path: Union[str, os.PathLike], labels: LabelSet) -> Iterator[Page]:
    """Parse and validate page records lazily."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(path, f"cannot read file: {exc.strerror}") from exc
    offset = 0
    for lineno, raw in enumerate(data.splitlines(keepends=True), start=1):
        start, offset = offset, offset + len(raw)
        text = raw.strip()
        if not text:
            continue
        try:
            rec = json.loads(text.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(path, "not valid UTF-8", line=lineno, offset=start + exc.start) from exc
        except json.JSONDecodeError as exc:
            last = offset == len(data) and not raw.endswith(b"\n")
            msg = "truncated record" if last else f"invalid JSON: {exc.msg}"
            raise DataError(path, msg, line=lineno, offset=start + exc.pos) from exc
        if not isinstance(rec, dict):
            raise DataError(path, "expected a JSON object per line", line=lineno, offset=start)
        page = _Record(path, lineno, labels).page(rec)
        report = validate_page(page, labels)
        if not report.ok:
            details = "; ".join(v.message for v in report.violations[:5])
            more = len(report.violations) - 5
            if more > 0:
                details += f"; and {more} more"
            raise DataError(path, f"page {page.paper_id}/{page.page_index} is invalid: {details}", line=lineno)
        yield page


def load_pages(path: Union[str, os.PathLike], labels: Union[LabelSet, str] = "s2vl") -> Dataset:
    if isinstance(labels, str):
        labels = LabelSet.builtin(labels)
    return Dataset(tuple(iter_pages(path, labels)), labels)
