"""Text line / block detection from token geometry and token-to-box allocation."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from vila.core import BBox, GroupKind, Page, VisualGroup, group_of_token

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroupingConfig:
    """Segmentation thresholds, all relative to median token / line height.

    ``line_x_gap`` splits a y-band into separate lines wherever the horizontal
    gap between neighbouring tokens exceeds that many median token heights,
    which keeps the two columns of a page apart. ``None`` disables the split.
    """

    line_y_tolerance: float = 0.5
    block_gap_threshold: float = 1.5
    block_x_overlap_min: float = 0.1
    line_x_gap: Optional[float] = 2.0

    def __post_init__(self):
        for name in ("line_y_tolerance", "block_gap_threshold", "block_x_overlap_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.block_x_overlap_min > 1:
            raise ValueError("block_x_overlap_min must be <= 1")
        if self.line_x_gap is not None and not self.line_x_gap > 0:
            raise ValueError("line_x_gap must be > 0")


@dataclass(frozen=True)
class PerturbConfig:
    p_merge: float = 0.0
    p_split: float = 0.0
    p_jitter: float = 0.0
    # max box margin change, in median token heights
    jitter_scale: float = 1.0

    def __post_init__(self):
        for name in ("p_merge", "p_split", "p_jitter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.jitter_scale < 0:
            raise ValueError("jitter_scale must be >= 0")


def _median_height(heights: np.ndarray) -> float:
    heights = heights[heights > 0]
    return float(np.median(heights)) if heights.size else 1.0


def _make_group(page: Page, indices: Sequence[int], kind: GroupKind, label=None) -> VisualGroup:
    indices = sorted(indices)
    box = page.boxes[indices]
    bbox = BBox(float(box[:, 0].min()), float(box[:, 1].min()), float(box[:, 2].max()), float(box[:, 3].max()))
    return VisualGroup(bbox, kind, tuple(indices), label)


def detect_lines(page: Page, cfg: GroupingConfig = GroupingConfig()) -> list[VisualGroup]:
    if not page.tokens:
        return []
    boxes = page.boxes
    yc = (boxes[:, 1] + boxes[:, 3]) / 2.0
    h = _median_height(boxes[:, 3] - boxes[:, 1])
    tol = cfg.line_y_tolerance * h

    bands: list[list[int]] = []
    band_mean = 0.0
    for i in np.argsort(yc, kind="stable"):
        if bands and abs(yc[i] - band_mean) <= tol:
            band = bands[-1]
            band.append(int(i))
            band_mean += (yc[i] - band_mean) / len(band)
        else:
            bands.append([int(i)])
            band_mean = yc[i]

    max_gap = None if cfg.line_x_gap is None else cfg.line_x_gap * h
    lines: list[VisualGroup] = []
    for band in bands:
        band.sort(key=lambda i: (boxes[i, 0], i))
        current = [band[0]]
        right = boxes[band[0], 2]
        for i in band[1:]:
            if max_gap is not None and boxes[i, 0] - right > max_gap:
                lines.append(_make_group(page, current, GroupKind.LINE))
                current = []
            current.append(i)
            right = max(right, boxes[i, 2])
        lines.append(_make_group(page, current, GroupKind.LINE))

    lines.sort(key=lambda g: (g.bbox.y0, g.bbox.x0, g.token_indices[0]))
    return lines


def _adjacency(boxes: np.ndarray, cfg: GroupingConfig) -> np.ndarray:
    """Pairwise 'these two lines belong to one block' matrix."""
    h = _median_height(boxes[:, 3] - boxes[:, 1])
    y0, y1 = boxes[:, 1], boxes[:, 3]
    gap = np.maximum(0.0, np.maximum(y0[:, None], y0[None, :]) - np.minimum(y1[:, None], y1[None, :]))
    x0, x1 = boxes[:, 0], boxes[:, 2]
    inter = np.minimum(x1[:, None], x1[None, :]) - np.maximum(x0[:, None], x0[None, :])
    w = x1 - x0
    min_w = np.minimum(w[:, None], w[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(min_w > 0, inter / np.where(min_w > 0, min_w, 1.0), np.where(inter >= 0, 1.0, 0.0))
    return (gap <= cfg.block_gap_threshold * h) & (frac >= cfg.block_x_overlap_min)


def detect_blocks(lines: Sequence[VisualGroup], cfg: GroupingConfig = GroupingConfig()) -> list[VisualGroup]:
    if not lines:
        return []
    boxes = np.array([g.bbox.as_list() for g in lines], dtype=float)
    adj = _adjacency(boxes, cfg)

    parent = list(range(len(lines)))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in zip(*np.nonzero(np.triu(adj, k=1))):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    members: dict[int, list[int]] = {}
    for j in range(len(lines)):
        members.setdefault(find(j), []).append(j)

    blocks = []
    for root in sorted(members):
        js = members[root]
        indices = sorted(i for j in js for i in lines[j].token_indices)
        bbox = BBox.enclosing(lines[j].bbox for j in js)
        blocks.append(VisualGroup(bbox, GroupKind.BLOCK, tuple(indices)))
    return blocks


def detect_groups(page: Page, cfg: GroupingConfig = GroupingConfig()) -> Page:
    """Replace a page's lines and blocks with detected ones."""
    lines = detect_lines(page, cfg)
    return page.with_groups(GroupKind.LINE, lines).with_groups(GroupKind.BLOCK, detect_blocks(lines, cfg))


def group_agreement(n_tokens: int, pred: Sequence[VisualGroup], gold: Sequence[VisualGroup]) -> float:
    """Token-level agreement between two groupings of the same tokens.

    Each predicted group is mapped to the gold group holding most of its
    tokens and vice versa; a token agrees when the mapping sends it to its
    own group. The smaller of the two directions is returned, so both
    merges and splits are penalised.
    """
    if n_tokens == 0:
        return 1.0
    a, b = group_of_token(n_tokens, pred), group_of_token(n_tokens, gold)

    def one_way(src, dst):
        hits = 0
        for g in np.unique(src):
            members = dst[src == g]
            if g < 0:
                continue
            hits += Counter(members.tolist()).most_common(1)[0][1] if members.size else 0
        return hits / n_tokens

    return min(one_way(a, b), one_way(b, a))


def allocate_tokens(
    page: Page,
    group_boxes: Sequence[BBox],
    kind: GroupKind = GroupKind.BLOCK,
) -> list[VisualGroup]:
    """Assign each token to the box strictly containing its center.

    A token inside several boxes goes to the box whose first allocated token
    comes earliest in page order; boxes still empty rank after non-empty ones
    and among themselves by list position. Tokens inside no box become
    singleton groups appended at the end. Boxes that receive no token are
    dropped.
    """
    if not group_boxes:
        raise ValueError("allocate_tokens needs at least one group box")
    n, m = len(page.tokens), len(group_boxes)
    gb = np.array([b.as_list() for b in group_boxes], dtype=float)
    if n:
        cx = (page.boxes[:, 0] + page.boxes[:, 2]) / 2.0
        cy = (page.boxes[:, 1] + page.boxes[:, 3]) / 2.0
        inside = (
            (cx[:, None] > gb[None, :, 0])
            & (cx[:, None] < gb[None, :, 2])
            & (cy[:, None] > gb[None, :, 1])
            & (cy[:, None] < gb[None, :, 3])
        )
    else:
        inside = np.zeros((0, m), dtype=bool)

    first = np.full(m, n, dtype=np.int64)  # n == "empty so far"
    members: list[list[int]] = [[] for _ in range(m)]
    orphans: list[int] = []
    for i in range(n):
        cands = np.flatnonzero(inside[i])
        if cands.size == 0:
            orphans.append(i)
            continue
        if cands.size == 1:
            j = int(cands[0])
        else:
            # lexsort: last key is primary
            j = int(cands[np.lexsort((cands, first[cands]))[0]])
        if not members[j]:
            first[j] = i
        members[j].append(i)

    groups = [VisualGroup(group_boxes[j], kind, tuple(members[j])) for j in range(m) if members[j]]
    groups.extend(VisualGroup(page.tokens[i].bbox, kind, (i,)) for i in orphans)
    return groups


def modal_label(labels: Sequence[int]) -> int:
    """Most frequent label; ties go to the smallest id."""
    counts = Counter(labels)
    best = max(counts.values())
    return min(c for c, k in counts.items() if k == best)


def majority_vote_relabel(
    page: Page,
    groups: Sequence[VisualGroup],
    labels: Optional[Sequence[Optional[int]]] = None,
) -> list[int]:
    """Give every token the modal label of its group (gold labels by default)."""
    labels = list(page.gold_labels if labels is None else labels)
    missing = [i for i, c in enumerate(labels) if c is None]
    if missing:
        raise ValueError(f"{len(missing)} tokens lack a label (first: {missing[0]})")
    out = [int(c) for c in labels]
    for g in groups:
        if len(g.token_indices) < 2:
            continue
        winner = modal_label([labels[i] for i in g.token_indices])
        for i in g.token_indices:
            out[i] = winner
    return out


@dataclass
class PerturbLog:
    merges: int = 0
    split_candidates: int = 0
    splits: int = 0
    jitters: int = 0
    notes: list[str] = field(default_factory=list)


def perturb_groups_logged(
    page: Page,
    noise: PerturbConfig,
    seed: int,
    kind: GroupKind = GroupKind.BLOCK,
) -> tuple[Page, PerturbLog]:
    """Corrupt the page's ``kind`` groups by seeded merge / split / jitter edits."""
    rng = np.random.default_rng(seed)
    record = PerturbLog()
    gold = sorted(page.groups(kind), key=lambda g: g.token_indices[0] if g.token_indices else -1)
    if not gold:
        raise ValueError("page has no gold groups to perturb")

    # (token indices, box or None when it must be recomputed)
    parts: list[tuple[list[int], Optional[BBox]]] = []
    for g in gold:
        if parts and rng.random() < noise.p_merge:
            idx, box = parts[-1]
            parts[-1] = (sorted(idx + list(g.token_indices)), box.union(g.bbox))
            record.merges += 1
        else:
            parts.append((list(g.token_indices), g.bbox))

    split_parts: list[tuple[list[int], Optional[BBox]]] = []
    for idx, box in parts:
        if len(idx) >= 2:
            record.split_candidates += 1
            if rng.random() < noise.p_split:
                k = int(rng.integers(1, len(idx)))
                split_parts.append((idx[:k], None))
                split_parts.append((idx[k:], None))
                record.splits += 1
                continue
        split_parts.append((idx, box))

    h = _median_height(page.boxes[:, 3] - page.boxes[:, 1]) if len(page.tokens) else 1.0
    boxes: list[BBox] = []
    for idx, box in split_parts:
        if box is None:
            box = BBox.enclosing(page.tokens[i].bbox for i in idx)
        if rng.random() < noise.p_jitter:
            d = rng.uniform(-noise.jitter_scale, noise.jitter_scale, size=4) * h
            x0 = min(max(0.0, box.x0 - d[0]), page.width)
            y0 = min(max(0.0, box.y0 - d[1]), page.height)
            x1 = min(max(x0, box.x1 + d[2]), page.width)
            y1 = min(max(y0, box.y1 + d[3]), page.height)
            box = BBox(float(x0), float(y0), float(x1), float(y1))
            record.jitters += 1
        boxes.append(box)

    return page.with_groups(kind, allocate_tokens(page, boxes, kind)), record


def perturb_groups(page: Page, noise: PerturbConfig, seed: int, kind: GroupKind = GroupKind.BLOCK) -> Page:
    return perturb_groups_logged(page, noise, seed, kind)[0]
