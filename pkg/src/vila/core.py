"""Document data model: boxes, tokens, visual groups, pages and label sets.

Coordinates are page points with the origin at the top-left corner and y
growing downward. All types are immutable once built.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np


class GroupKind(str, Enum):
    LINE = "line"
    BLOCK = "block"


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x0, self.y0, self.x1, self.y1))

    def is_well_formed(self) -> bool:
        return (
            self.is_finite()
            and self.x0 <= self.x1
            and self.y0 <= self.y1
            and min(self.x0, self.y0) >= 0
        )

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x0, other.x0),
            min(self.y0, other.y0),
            max(self.x1, other.x1),
            max(self.y1, other.y1),
        )

    @staticmethod
    def enclosing(boxes: Iterable["BBox"]) -> "BBox":
        boxes = list(boxes)
        if not boxes:
            raise ValueError("cannot enclose an empty box list")
        return BBox(
            min(b.x0 for b in boxes),
            min(b.y0 for b in boxes),
            max(b.x1 for b in boxes),
            max(b.y1 for b in boxes),
        )


@dataclass(frozen=True)
class Token:
    text: str
    bbox: BBox
    gold_label: Optional[int] = None


@dataclass(frozen=True)
class VisualGroup:
    bbox: BBox
    kind: GroupKind
    token_indices: tuple[int, ...]
    label: Optional[int] = None

    def __post_init__(self):
        # accept lists from callers; stored as a tuple for hashability
        object.__setattr__(self, "token_indices", tuple(int(i) for i in self.token_indices))

    def __len__(self) -> int:
        return len(self.token_indices)


@dataclass(frozen=True)
class LabelSet:
    names: tuple[str, ...]
    background_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")
        if not 2 <= len(self.names) <= 64:
            raise ValueError(f"label set size must be in [2, 64], got {len(self.names)}")
        if not 0 <= self.background_index < len(self.names):
            raise ValueError("background_index out of range")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise KeyError(f"unknown label {name!r}") from None

    @cached_property
    def _lookup(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    @classmethod
    def builtin(cls, name: str) -> "LabelSet":
        """Load one of the shipped category inventories (``s2vl``, ``grotoap2``, ``docbank``)."""
        text = resources.files("vila.labelsets").joinpath(f"{name}.json").read_text()
        data = json.loads(text)
        names = data["names"]
        return cls(tuple(names), names.index(data["background"]))


@dataclass(frozen=True)
class Page:
    paper_id: str
    page_index: int
    width: float
    height: float
    tokens: tuple[Token, ...]
    lines: tuple[VisualGroup, ...] = ()
    blocks: tuple[VisualGroup, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def __len__(self) -> int:
        return len(self.tokens)

    def groups(self, kind: GroupKind) -> tuple[VisualGroup, ...]:
        return self.lines if GroupKind(kind) is GroupKind.LINE else self.blocks

    def with_groups(self, kind: GroupKind, groups: Sequence[VisualGroup]) -> "Page":
        if GroupKind(kind) is GroupKind.LINE:
            return replace(self, lines=tuple(groups))
        return replace(self, blocks=tuple(groups))

    @cached_property
    def boxes(self) -> np.ndarray:
        """Token boxes as an ``(n, 4)`` float array."""
        if not self.tokens:
            return np.zeros((0, 4))
        return np.array([t.bbox.as_list() for t in self.tokens], dtype=float)

    @property
    def gold_labels(self) -> list[Optional[int]]:
        return [t.gold_label for t in self.tokens]

    @property
    def extent(self) -> tuple[float, float]:
        return (self.width, self.height)

    @property
    def full_bbox(self) -> BBox:
        return BBox(0.0, 0.0, self.width, self.height)


@dataclass(frozen=True)
class Dataset:
    pages: tuple[Page, ...]
    labels: LabelSet

    def __post_init__(self):
        object.__setattr__(self, "pages", tuple(self.pages))

    def __len__(self) -> int:
        return len(self.pages)

    def __iter__(self):
        return iter(self.pages)

    @property
    def paper_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self.pages:
            seen.setdefault(p.paper_id, None)
        return list(seen)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.pages[i] for i in indices), self.labels)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    token: Optional[int] = None
    groups: tuple[str, ...] = ()


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:  # truthy when there is something to report
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def of_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]


def _finite(*vals) -> bool:
    try:
        return all(math.isfinite(float(v)) for v in vals)
    except (TypeError, ValueError):
        return False


def validate_page(page: Page, labels: LabelSet) -> ValidationReport:
    """Collect every invariant violation on ``page``. Never raises on bad data."""
    report = ValidationReport()
    add = report.violations.append
    n = len(page.tokens)

    if not _finite(page.width, page.height) or page.width <= 0 or page.height <= 0:
        add(Violation("page_extent", f"page extent must be positive and finite: {page.width}x{page.height}"))

    for i, tok in enumerate(page.tokens):
        if not isinstance(tok.text, str) or not tok.text or any(c.isspace() for c in tok.text):
            add(Violation("token_text", f"token {i} text must be one non-empty word: {tok.text!r}", token=i))
        b = tok.bbox
        if not _finite(b.x0, b.y0, b.x1, b.y1):
            add(Violation("bbox", f"token {i} has non-finite coordinates", token=i))
            continue
        if b.x0 > b.x1 or b.y0 > b.y1 or min(b.x0, b.y0, b.x1, b.y1) < 0:
            add(Violation("bbox", f"token {i} bbox is malformed: {b.as_list()}", token=i))
            continue
        if _finite(page.width, page.height) and (b.x1 > page.width or b.y1 > page.height):
            add(Violation("out_of_bounds", f"token {i} lies outside the page: {b.as_list()}", token=i))
        if tok.gold_label is not None and not (
            isinstance(tok.gold_label, (int, np.integer)) and 0 <= tok.gold_label < len(labels)
        ):
            add(Violation("label", f"token {i} label {tok.gold_label!r} not in label set", token=i))

    for kind, groups in ((GroupKind.LINE, page.lines), (GroupKind.BLOCK, page.blocks)):
        owner: dict[int, int] = {}
        for j, g in enumerate(groups):
            name = f"{kind.value}[{j}]"
            if g.kind is not kind:
                add(Violation("group_kind", f"{name} has kind {g.kind.value}", groups=(name,)))
            if not g.bbox.is_well_formed():
                add(Violation("group_bbox", f"{name} bbox is malformed: {g.bbox.as_list()}", groups=(name,)))
            if g.label is not None and not 0 <= g.label < len(labels):
                add(Violation("label", f"{name} label {g.label!r} not in label set", groups=(name,)))
            idx = g.token_indices
            if any(b <= a for a, b in zip(idx, idx[1:])):
                add(Violation("group_order", f"{name} token indices not strictly increasing", groups=(name,)))
            for t in idx:
                if not 0 <= t < n:
                    add(Violation("group_index", f"{name} references token {t} outside [0, {n})", token=t, groups=(name,)))
                    continue
                if t in owner and owner[t] != j:
                    other = f"{kind.value}[{owner[t]}]"
                    add(Violation("overlap", f"{other} and {name} share token {t}", token=t, groups=(other, name)))
                else:
                    owner[t] = j
    return report


# ---------------------------------------------------------------------------
# reading order


def reading_order_sort(page: Page) -> Page:
    """Reorder tokens line-major (line top y, then left x), left to right within a line.

    Tokens not covered by any line keep their relative order after all lined
    tokens. Group indices are remapped to the new order.
    """
    if not page.lines:
        raise ValueError("reading order needs line groups; run detect_lines first")

    line_order = sorted(range(len(page.lines)), key=lambda j: (page.lines[j].bbox.y0, page.lines[j].bbox.x0, j))
    order: list[int] = []
    seen: set[int] = set()
    for j in line_order:
        members = [i for i in page.lines[j].token_indices if i not in seen]
        members.sort(key=lambda i: (page.tokens[i].bbox.x0, i))
        order.extend(members)
        seen.update(members)
    order.extend(i for i in range(len(page.tokens)) if i not in seen)

    new_index = {old: new for new, old in enumerate(order)}

    def remap(groups: Sequence[VisualGroup], reorder: bool) -> tuple[VisualGroup, ...]:
        out = [replace(g, token_indices=tuple(sorted(new_index[i] for i in g.token_indices))) for g in groups]
        if reorder:
            out = [out[j] for j in line_order]
        return tuple(out)

    return replace(
        page,
        tokens=tuple(page.tokens[i] for i in order),
        lines=remap(page.lines, reorder=True),
        blocks=remap(page.blocks, reorder=False),
    )


def group_of_token(n_tokens: int, groups: Sequence[VisualGroup]) -> np.ndarray:
    """Map each token index to its group index (-1 when uncovered)."""
    out = np.full(n_tokens, -1, dtype=np.int64)
    for j, g in enumerate(groups):
        out[list(g.token_indices)] = j
    return out
