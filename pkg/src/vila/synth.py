"""Seeded synthetic scientific pages with gold token labels and gold lines/blocks.

Pages are laid out block-first: a paper template fixes columns, fonts,
margins and running header text; each page samples a block sequence (front
matter on the first page, references on the last, body in between), flows
the blocks through the columns, wraps them into lines and fills the lines
with words from per-category vocabularies. Token labels come from their
block, so every gold group is label-uniform.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from vila.core import BBox, Dataset, GroupKind, LabelSet, Page, Token, VisualGroup, validate_page

log = logging.getLogger(__name__)

CATEGORIES = (
    "title", "author", "abstract", "section", "paragraph", "list", "bibliography", "equation",
    "figure", "table", "caption", "header", "footer", "footnote", "keywords",
)
PROSE = ("abstract", "paragraph", "list", "caption", "footnote", "bibliography", "keywords")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    n_papers: int = 60
    pages_per_paper: tuple = (2, 5)
    label_set: str = "s2vl"
    tokens_per_page_mean: float = 790.0
    tokens_per_page_std: float = 450.0
    # lower clamp; the upper clamp mirrors it around the mean so the mean is unbiased
    min_tokens_per_page: int = 150
    two_column_prob: float = 0.5
    page_size: tuple = (612.0, 792.0)
    body_font: tuple = (8.5, 10.5)
    leading: float = 1.2
    words_per_category: int = 120
    shared_word_rate: float = 0.25
    # share of block boundaries whose next block opens with words of the previous category
    boundary_noise: float = 0.0
    max_retries: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pages_per_paper", tuple(self.pages_per_paper))
        object.__setattr__(self, "page_size", tuple(self.page_size))
        object.__setattr__(self, "body_font", tuple(self.body_font))
        lo, hi = self.pages_per_paper
        if self.n_papers < 1 or lo < 1 or hi < lo:
            raise ValueError("n_papers and pages_per_paper must be positive ranges")
        if not 0 < self.min_tokens_per_page <= self.tokens_per_page_mean:
            raise ValueError("min_tokens_per_page must be in (0, tokens_per_page_mean]")
        if self.tokens_per_page_std < 0 or self.words_per_category < 10:
            raise ValueError("tokens_per_page_std must be >= 0 and words_per_category >= 10")
        for name in ("two_column_prob", "shared_word_rate", "boundary_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if min(self.page_size) <= 0 or self.body_font[0] <= 0 or self.body_font[1] < self.body_font[0]:
            raise ValueError("page_size and body_font must be positive ranges")


# ---------------------------------------------------------------------------
# vocabularies

_ONSETS = ["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl", "dr", "st", "tr", "pl", "gr", "sh", "th"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "io", "ou"]
_CODAS = ["", "", "n", "r", "s", "l", "m", "x", "nd", "st"]
_FUNCTION_WORDS = (
    "the of and in to a is for that with on as by we are this from be an which at our these it "
    "can was not or has have their than also both"
).split()


def _pseudo_word(rng, syllables: int) -> str:
    return "".join(
        _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] + _CODAS[rng.integers(len(_CODAS))]
        for _ in range(syllables)
    )


@dataclass
class Lexicon:
    words: dict  # category -> list of words
    shared: list

    @classmethod
    def build(cls, seed: int, per_category: int) -> "Lexicon":
        rng = np.random.default_rng([seed, 7])
        used = set(_FUNCTION_WORDS)
        words = {}
        for cat in CATEGORIES:
            pool = []
            while len(pool) < per_category:
                w = _pseudo_word(rng, int(rng.integers(1, 4)))
                if w not in used and len(w) > 1:
                    used.add(w)
                    pool.append(w)
            words[cat] = pool
        return cls(words, list(_FUNCTION_WORDS))


def _zipf_choice(rng, pool: list, size: int) -> list:
    ranks = np.arange(1, len(pool) + 1)
    p = 1.0 / ranks
    p /= p.sum()
    return [pool[i] for i in rng.choice(len(pool), size=size, p=p)]


class _Writer:
    """Produces category-styled word sequences."""

    def __init__(self, rng, lex: Lexicon, shared_rate: float):
        self.rng, self.lex, self.shared_rate = rng, lex, shared_rate

    def words(self, cat: str, n: int, shared: bool = True) -> list:
        out = _zipf_choice(self.rng, self.lex.words[cat], n)
        if shared and cat in PROSE:
            mask = self.rng.random(n) < self.shared_rate
            fw = _zipf_choice(self.rng, self.lex.shared, int(mask.sum()))
            it = iter(fw)
            out = [next(it) if m else w for w, m in zip(out, mask)]
        return out

    def prose(self, cat: str, n: int) -> list:
        """Sentences with terminal periods, so sentence breaks fall inside blocks."""
        out = self.words(cat, n)
        i = 0
        while i < n:
            i += int(self.rng.integers(6, 18))
            if i - 1 < n:
                out[i - 1] = out[i - 1] + "."
        if out and not out[-1].endswith("."):
            out[-1] += "."
        return out

    def capitalized(self, cat: str, n: int) -> list:
        return [w.capitalize() for w in self.words(cat, n, shared=False)]

    def number(self, lo=0, hi=100, decimals=0) -> str:
        v = self.rng.uniform(lo, hi)
        return f"{v:.{decimals}f}"

    def block_text(self, cat: str, n: int, extra: dict) -> list:
        r = self.rng
        if cat == "title":
            return self.capitalized(cat, n)
        if cat == "author":
            out = []
            while len(out) < n:
                out += [_pseudo_word(r, 1).upper()[0] + ".", self.capitalized(cat, 1)[0] + ","]
            out = out[:n]
            out[-1] = out[-1].rstrip(",")
            return out
        if cat == "keywords":
            return ["Keywords:"] + [w + "," for w in self.words(cat, n - 1, shared=False)]
        if cat == "abstract":
            return ["Abstract"] + self.prose(cat, n - 1)
        if cat == "section":
            num = f"{extra.get('section_no', 1)}."
            return [num] + self.capitalized(cat, n - 1)
        if cat == "paragraph":
            return self.prose(cat, n)
        if cat == "list":
            return ["•"] + self.prose(cat, n - 1)
        if cat == "caption":
            return [extra.get("caption_kind", "Figure"), f"{extra.get('fig_no', 1)}:"] + self.prose(cat, n - 2)
        if cat == "footnote":
            return [str(extra.get("note_no", 1))] + self.prose(cat, n - 1)
        if cat == "bibliography":
            ref = [f"[{extra.get('ref_no', 1)}]"]
            for _ in range(int(r.integers(1, 4))):
                ref += [_pseudo_word(r, 1).upper()[0] + ".", self.capitalized(cat, 1)[0] + ","]
            rest = max(1, n - len(ref) - 1)
            return ref + self.prose(cat, rest)[:-1] + [f"{int(r.integers(1980, 2022))}."]
        if cat == "equation":
            sym = ["=", "+", "−", "(", ")", "∑", "∫", "α", "β", "λ", "·", "≤"]
            out = []
            for i in range(n - 1):
                out.append(sym[r.integers(len(sym))] if i % 2 else self.words(cat, 1, shared=False)[0])
            return out + [f"({extra.get('eq_no', 1)})"]
        if cat == "figure":
            return [self.number(0, 1, 1) if r.random() < 0.6 else self.words(cat, 1, shared=False)[0] for _ in range(n)]
        if cat == "table":
            return [self.number(0, 100, 2) if r.random() < 0.6 else self.words(cat, 1, shared=False)[0] for _ in range(n)]
        if cat == "header":
            return self.capitalized(cat, n)
        if cat == "footer":
            return self.words(cat, n - 1, shared=False) + [str(extra.get("page_no", 1))]
        raise ValueError(cat)


# ---------------------------------------------------------------------------
# layout


@dataclass
class _PaperTemplate:
    columns: int
    body_font: float
    margin_x: float
    margin_top: float
    margin_bottom: float
    gutter: float
    header_words: list
    footer_words: list


@dataclass
class _PageBuilder:
    width: float
    height: float
    leading: float
    rng: np.random.Generator
    tokens: list = field(default_factory=list)
    lines: list = field(default_factory=list)  # (token indices, label)
    blocks: list = field(default_factory=list)  # (token indices, label)

    def emit_line(self, words, x0, x1, y, font, label, align="left", word_gap=None):
        """Place ``words`` on one line; returns the token indices."""
        gap = font * 0.28 if word_gap is None else word_gap
        widths = [max(1, len(w)) * font * 0.5 for w in words]
        total = sum(widths) + gap * (len(words) - 1)
        if align == "center":
            x = x0 + max(0.0, (x1 - x0 - total) / 2)
        else:
            x = x0
        idx = []
        for w, wd in zip(words, widths):
            jitter = self.rng.uniform(-0.04, 0.04) * font
            box = BBox(round(x, 2), round(y + jitter, 2), round(min(x + wd, self.width), 2), round(y + font + jitter, 2))
            idx.append(len(self.tokens))
            self.tokens.append((w, box, label))
            x += wd + gap
        return idx

    @staticmethod
    def wrap(words, width, font, indent=0.0, word_gap=None):
        gap = font * 0.28 if word_gap is None else word_gap
        lines, cur, used = [], [], indent
        for w in words:
            wd = max(1, len(w)) * font * 0.5
            need = wd if not cur else gap + wd
            if cur and used + need > width:
                lines.append(cur)
                cur, used = [], 0.0
                need = wd
            cur.append(w)
            used += need
        if cur:
            lines.append(cur)
        return lines


class _Flow:
    """Vertical flow of blocks through full-width space then the columns."""

    def __init__(self, page: _PageBuilder, tpl: _PaperTemplate, top: float, font: float):
        self.page, self.tpl = page, tpl
        self.block_gap = 2.0 * font
        self.bottom = page.height - tpl.margin_bottom
        self.y = top
        self.col = -1  # -1 = full width region
        self.col_top = top
        self.fresh = True  # nothing placed yet in the current region
        w = page.width - 2 * tpl.margin_x
        cw = (w - (tpl.columns - 1) * tpl.gutter) / tpl.columns
        self.cols = [(tpl.margin_x + c * (cw + tpl.gutter), tpl.margin_x + c * (cw + tpl.gutter) + cw) for c in range(tpl.columns)]
        self.full = (tpl.margin_x, page.width - tpl.margin_x)

    @property
    def region(self):
        return self.full if self.col < 0 else self.cols[self.col]

    def gap(self) -> float:
        return 0.0 if self.fresh else self.block_gap

    def start_columns(self):
        if self.col < 0:
            self.col = 0
            self.col_top = self.y + self.gap()
            self.y = self.col_top
            self.fresh = True

    def next_column(self) -> bool:
        if self.col < 0:
            self.start_columns()
            return True
        if self.col + 1 >= len(self.cols):
            return False
        self.col += 1
        self.y = self.col_top
        self.fresh = True
        return True

    def room(self) -> float:
        return self.bottom - (self.y + self.gap())

    def place(self, words, label, font, align="left", indent=0.0, truncatable=False, word_gap=None, reserve=0.0):
        """Flow one block; returns the number of words placed (0 when the page is full)."""
        lead = font * self.page.leading
        while True:
            x0, x1 = self.region
            lines = _PageBuilder.wrap(words, x1 - x0, font, indent, word_gap)
            height = reserve + len(lines) * lead
            if height <= self.room():
                break
            fit = int((self.room() - reserve) // lead)
            if truncatable and fit >= 2:
                lines = lines[:fit]
                break
            if not self.next_column():
                return 0
        y = self.y + self.gap() + reserve
        block_idx = []
        for k, line in enumerate(lines):
            ind = indent if k == 0 else 0.0
            idx = self.page.emit_line(line, x0 + ind, x1, y, font, label, align, word_gap)
            self.page.lines.append((idx, label))
            block_idx += idx
            y += lead
        self.page.blocks.append((block_idx, label))
        self.y = y - (lead - font)
        self.fresh = False
        return len(block_idx)


def _template(rng, cfg: CorpusConfig, writer: _Writer) -> _PaperTemplate:
    cols = 2 if rng.random() < cfg.two_column_prob else 1
    return _PaperTemplate(
        columns=cols,
        body_font=float(rng.uniform(*cfg.body_font)),
        margin_x=float(rng.uniform(50, 72)),
        margin_top=float(rng.uniform(60, 76)),
        margin_bottom=float(rng.uniform(60, 76)),
        gutter=float(rng.uniform(22, 30)),
        header_words=writer.block_text("header", int(rng.integers(3, 8)), {}),
        footer_words=writer.block_text("footer", int(rng.integers(2, 5)), {}),
    )


def _capacity_font(cfg: CorpusConfig, tpl: _PaperTemplate, target: int) -> float:
    """Body font size whose page capacity comfortably exceeds ``target`` tokens."""
    w = cfg.page_size[0] - 2 * tpl.margin_x - (tpl.columns - 1) * tpl.gutter
    h = cfg.page_size[1] - tpl.margin_top - tpl.margin_bottom
    # tokens ~ w*h / (avg word advance * line advance * block overhead), both ~ font
    per_font2 = w * h / (3.3 * cfg.leading * 1.35)
    return float(min(tpl.body_font, max(5.0, math.sqrt(per_font2 / (1.15 * target)))))


def _lay_out_page(cfg, rng, writer, tpl, paper_id, page_index, n_pages, target, font) -> Optional[Page]:
    W, H = cfg.page_size
    pb = _PageBuilder(W, H, cfg.leading, rng)
    small = font * 0.85

    # running header band
    hdr = writer.block_text("header", len(tpl.header_words), {}) if page_index == 0 else tpl.header_words
    idx = pb.emit_line(hdr, tpl.margin_x, W - tpl.margin_x, tpl.margin_top * 0.45, small, "header")
    pb.lines.append((idx, "header"))
    pb.blocks.append((idx, "header"))

    flow = _Flow(pb, tpl, tpl.margin_top, font)
    counters = {"section_no": 1 + page_index * 2, "fig_no": 1 + page_index, "eq_no": 1 + page_index * 3, "note_no": 1, "ref_no": 1}
    budget = target - len(pb.tokens) - len(tpl.footer_words)

    def placed(words, label, f, **kw) -> int:
        nonlocal budget
        n = flow.place(words, label, f, **kw)
        budget -= n
        return n

    if page_index == 0:
        placed(writer.block_text("title", int(rng.integers(6, 16)), {}), "title", font * 1.8, align="center")
        placed(writer.block_text("author", int(rng.integers(6, 16)), {}), "author", font * 1.1, align="center")
        placed(writer.block_text("abstract", int(rng.integers(80, 180)), {}), "abstract", font * 0.95, truncatable=True)
        if rng.random() < 0.6:
            placed(writer.block_text("keywords", int(rng.integers(5, 10)), {}), "keywords", font * 0.95)
    flow.start_columns()

    last_page = page_index == n_pages - 1 and n_pages > 1
    refs_from = budget * float(rng.uniform(0.2, 0.6)) if last_page else -1.0
    while budget >= 8:
        before = budget
        if last_page and budget <= refs_from:
            kind = "bibliography"
        else:
            kind = rng.choice(
                ["section", "paragraph", "list", "equation", "figure", "table", "footnote"],
                p=[0.12, 0.55, 0.07, 0.08, 0.07, 0.06, 0.05],
            )
        if kind == "section":
            placed(writer.block_text("section", int(rng.integers(2, 6)), counters), "section", font * 1.2)
            counters["section_no"] += 1
            n = int(min(budget, rng.integers(40, 160)))
            if n >= 8:
                placed(writer.block_text("paragraph", n, {}), "paragraph", font, indent=font, truncatable=True)
        elif kind == "paragraph":
            n = int(min(budget, rng.integers(30, 170)))
            placed(writer.block_text("paragraph", n, {}), "paragraph", font, indent=font, truncatable=True)
        elif kind == "list":
            for _ in range(int(rng.integers(2, 5))):
                n = int(min(budget, rng.integers(10, 35)))
                if n < 4 or not placed(writer.block_text("list", n, {}), "list", font, indent=font * 0.5):
                    break
        elif kind == "equation":
            placed(writer.block_text("equation", int(rng.integers(5, 14)), counters), "equation", font, align="center")
            counters["eq_no"] += 1
        elif kind == "figure":
            ticks = writer.block_text("figure", int(rng.integers(8, 24)), {})
            if placed(ticks, "figure", small, word_gap=small * 1.2, reserve=float(rng.uniform(60, 140))):
                cap = writer.block_text("caption", int(rng.integers(10, 40)), {**counters, "caption_kind": "Figure"})
                placed(cap, "caption", small, truncatable=True)
                counters["fig_no"] += 1
        elif kind == "table":
            cap = writer.block_text("caption", int(rng.integers(8, 25)), {**counters, "caption_kind": "Table"})
            if placed(cap, "caption", small):
                cells = writer.block_text("table", int(rng.integers(16, 60)), {})
                placed(cells, "table", small, word_gap=small * 1.0)
        elif kind == "footnote":
            placed(writer.block_text("footnote", int(rng.integers(8, 30)), counters), "footnote", small * 0.9)
            counters["note_no"] += 1
        elif kind == "bibliography":
            placed(writer.block_text("bibliography", int(min(budget, rng.integers(15, 40))), counters), "bibliography", small)
            counters["ref_no"] += 1
        if budget == before:
            # the drawn block did not fit; fill what is left with prose or stop
            n = int(min(budget, 60))
            fill = "bibliography" if last_page and budget <= refs_from else "paragraph"
            if not placed(writer.block_text(fill, n, counters), fill, small if fill == "bibliography" else font, truncatable=True):
                break

    if budget > 0.05 * target and budget >= 8:
        log.debug("%s p%d: %d of %d tokens at font %.2f", paper_id, page_index, target - budget, target, font)
        return None  # page overflowed before reaching the token target

    ftr = tpl.footer_words[:-1] + [str(page_index + 1)]
    idx = pb.emit_line(ftr, tpl.margin_x, W - tpl.margin_x, H - tpl.margin_bottom * 0.55, small, "footer", align="center")
    pb.lines.append((idx, "footer"))
    pb.blocks.append((idx, "footer"))
    return _to_page(pb, paper_id, page_index)


def _to_page(pb: _PageBuilder, paper_id: str, page_index: int) -> Page:
    cat = {c: i for i, c in enumerate(CATEGORIES)}
    tokens = tuple(Token(w, b, cat[lab]) for w, b, lab in pb.tokens)

    def groups(items, kind):
        out = []
        for idx, lab in items:
            if idx:
                bbox = BBox.enclosing(tokens[i].bbox for i in idx)
                out.append(VisualGroup(bbox, kind, tuple(idx), cat[lab]))
        return tuple(out)

    return Page(paper_id, page_index, pb.width, pb.height, tokens, groups(pb.lines, GroupKind.LINE), groups(pb.blocks, GroupKind.BLOCK))


def _inject_boundary_noise(page: Page, rng, writer: _Writer, rate: float) -> Page:
    """Rewrite the opening words of some blocks with the previous block's vocabulary.

    Gold labels are untouched, so the text misleads exactly where a group
    boundary falls.
    """
    if rate <= 0:
        return page
    tokens = list(page.tokens)
    for prev, nxt in zip(page.blocks, page.blocks[1:]):
        if prev.label == nxt.label or rng.random() >= rate:
            continue
        k = min(len(nxt.token_indices), int(rng.integers(3, 9)))
        fake = writer.words(CATEGORIES[prev.label], k, shared=False)
        for i, w in zip(nxt.token_indices[:k], fake):
            t = tokens[i]
            tokens[i] = Token(w, t.bbox, t.gold_label)
    return Page(page.paper_id, page.page_index, page.width, page.height, tuple(tokens), page.lines, page.blocks)


def sample_token_target(rng, cfg: CorpusConfig) -> int:
    lo = cfg.min_tokens_per_page
    hi = 2 * cfg.tokens_per_page_mean - lo
    return int(round(float(np.clip(rng.normal(cfg.tokens_per_page_mean, cfg.tokens_per_page_std), lo, hi))))


def generate_paper(cfg: CorpusConfig, paper_no: int, lex: Lexicon, labels: LabelSet) -> list[Page]:
    rng = np.random.default_rng([cfg.seed, paper_no])
    writer = _Writer(rng, lex, cfg.shared_word_rate)
    tpl = _template(rng, cfg, writer)
    lo, hi = cfg.pages_per_paper
    n_pages = int(rng.integers(lo, hi + 1))
    paper_id = f"paper-{cfg.seed}-{paper_no:04d}"
    # separate stream so the noise rate never shifts the layout draws
    noise_rng = np.random.default_rng([cfg.seed, paper_no, 1])
    noise_writer = _Writer(noise_rng, lex, cfg.shared_word_rate)
    pages = []
    for k in range(n_pages):
        target = sample_token_target(rng, cfg)
        font = _capacity_font(cfg, tpl, target)
        page = None
        for _ in range(cfg.max_retries):
            page = _lay_out_page(cfg, rng, writer, tpl, paper_id, k, n_pages, target, font)
            if page is not None:
                break
            font = max(4.0, font * 0.9)
        if page is None:
            raise GenerationError(f"{paper_id} page {k}: could not fit {target} tokens after {cfg.max_retries} retries")
        page = _inject_boundary_noise(page, noise_rng, noise_writer, cfg.boundary_noise)
        report = validate_page(page, labels)
        if not report.ok:
            raise GenerationError(f"{paper_id} page {k} failed validation: {report.violations[0].message}")
        pages.append(page)
    return pages


def generate_corpus(cfg: CorpusConfig) -> Dataset:
    """Deterministic given ``cfg.seed``; papers use independent derived seeds."""
    labels = LabelSet.builtin(cfg.label_set)
    if tuple(labels.names) != CATEGORIES:
        raise ValueError(f"the page templates are written for the s2vl inventory, not {cfg.label_set!r}")
    lex = Lexicon.build(cfg.seed, cfg.words_per_category)
    pages = []
    for paper_no in range(cfg.n_papers):
        pages.extend(generate_paper(cfg, paper_no, lex, labels))
    return Dataset(tuple(pages), labels)


def corpus_statistics(dataset: Dataset) -> dict:
    """Mean and std of token / line / block counts per page."""
    stats = {}
    for key, fn in (
        ("tokens", lambda p: len(p.tokens)),
        ("lines", lambda p: len(p.lines)),
        ("blocks", lambda p: len(p.blocks)),
    ):
        vals = np.array([fn(p) for p in dataset.pages], dtype=float)
        stats[key] = (float(vals.mean()), float(vals.std()))
    stats["pages"] = len(dataset.pages)
    stats["papers"] = len(dataset.paper_ids)
    return stats


def format_statistics(stats: dict) -> str:
    rows = [
        ("Pages / Papers", f"{stats['pages']} / {stats['papers']}"),
        ("Average Token Count", "{:.0f} ({:.0f})".format(*stats["tokens"])),
        ("Average Text Line Count", "{:.0f} ({:.0f})".format(*stats["lines"])),
        ("Average Text Block Count", "{:.0f} ({:.0f})".format(*stats["blocks"])),
    ]
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{width}}  {val}" for name, val in rows)
