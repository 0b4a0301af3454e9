"""Whole-word vocabulary: one PDF token is one model token."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

from vila.nn.encoder import SPECIAL_TOKENS, UNK


@dataclass(frozen=True)
class Vocab:
    words: tuple[str, ...]

    @classmethod
    def build(cls, pages: Iterable, min_count: int = 1) -> "Vocab":
        counts = Counter(t.text for p in pages for t in p.tokens)
        # frequency-descending, then lexical, so the id assignment is reproducible
        kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
        return cls(tuple(SPECIAL_TOKENS) + tuple(kept))

    def __len__(self) -> int:
        return len(self.words)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}

    def encode(self, word: str) -> int:
        return self._index.get(word, UNK)

    def encode_all(self, words: Iterable[str]) -> list[int]:
        idx = self._index
        return [idx.get(w, UNK) for w in words]

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.words).encode()).hexdigest()[:16]
