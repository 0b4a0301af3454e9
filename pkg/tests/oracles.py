"""Independent reference implementations used to cross-check the package."""

import math

import numpy as np

from vila.core import BBox, Page, Token


def allocate_reference(page, boxes):
    """Token-by-token allocation written without vectorisation.

    Returns a list of token-index tuples: non-empty boxes in list order, then
    one singleton per orphan token in page order.
    """
    members = [[] for _ in boxes]
    orphans = []
    for i, tok in enumerate(page.tokens):
        cx = (tok.bbox.x0 + tok.bbox.x1) / 2.0
        cy = (tok.bbox.y0 + tok.bbox.y1) / 2.0
        hits = [j for j, b in enumerate(boxes) if b.x0 < cx < b.x1 and b.y0 < cy < b.y1]
        if not hits:
            orphans.append(i)
            continue
        best = min(hits, key=lambda j: (members[j][0] if members[j] else math.inf, j))
        members[best].append(i)
    return [tuple(m) for m in members if m] + [(i,) for i in orphans]


def random_allocation_case(rng, max_tokens=200, max_boxes=10, size=100.0):
    n = int(rng.integers(0, max_tokens + 1))
    tokens = []
    for _ in range(n):
        x0, y0 = rng.uniform(0, size - 6, size=2)
        w, h = rng.uniform(0.5, 6, size=2)
        # snap some coordinates to a grid so centers land exactly on box edges
        if rng.random() < 0.3:
            x0, y0 = np.round(x0), np.round(y0)
            w, h = 2.0, 2.0
        tokens.append(Token("w", BBox(float(x0), float(y0), float(x0 + w), float(y0 + h))))
    page = Page("r", 0, size, size, tuple(tokens))
    boxes = []
    for _ in range(int(rng.integers(1, max_boxes + 1))):
        x0, y0 = rng.uniform(0, size * 0.8, size=2)
        w, h = rng.uniform(5, size * 0.6, size=2)
        if rng.random() < 0.3:
            x0, y0, w, h = np.round([x0, y0, w, h])
        boxes.append(BBox(float(x0), float(y0), float(min(size, x0 + w)), float(min(size, y0 + h))))
    return page, boxes
