import pytest

from vila.checks import TINY_LABELS, tiny_page
from vila.core import BBox, GroupKind, LabelSet, Page, Token, VisualGroup
from vila.synth import CorpusConfig, generate_corpus


def make_page(rows, labels=None, width=300.0, height=300.0, kind_blocks=None):
    """Page from rows of words; each row is one line, each row its own block unless ``kind_blocks`` groups rows."""
    tokens, lines = [], []
    for r, words in enumerate(rows):
        idx = []
        for k, w in enumerate(words):
            x, y = 10.0 + 30.0 * k, 10.0 + 20.0 * r
            lab = None if labels is None else labels[r]
            idx.append(len(tokens))
            tokens.append(Token(w, BBox(x, y, x + 25.0, y + 8.0), lab))
        lines.append(idx)
    line_groups = tuple(
        VisualGroup(BBox.enclosing(tokens[i].bbox for i in idx), GroupKind.LINE, idx, None if labels is None else labels[r])
        for r, idx in enumerate(lines)
    )
    block_rows = kind_blocks or [[r] for r in range(len(rows))]
    blocks = []
    for rs in block_rows:
        idx = [i for r in rs for i in lines[r]]
        blocks.append(VisualGroup(BBox.enclosing(tokens[i].bbox for i in idx), GroupKind.BLOCK, idx))
    return Page("p", 0, width, height, tuple(tokens), line_groups, tuple(blocks))


@pytest.fixture
def tiny():
    return tiny_page()


@pytest.fixture
def tiny_labels():
    return TINY_LABELS


@pytest.fixture(scope="session")
def s2vl():
    return LabelSet.builtin("s2vl")


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusConfig(n_papers=6, pages_per_paper=(1, 2), seed=11))


# acceptance results, printed together at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
