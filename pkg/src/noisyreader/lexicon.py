"""Vocabulary management: word frequencies, edit-distance neighbors, and
morphological variants over a fixed word list.

All comparisons happen on lowercased forms; surface case is display-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

MIN_STEM_LEN = 4
MIN_STEM_RATIO = 0.6

_PUNCT = ".,;:!?\"'()[]"


class FrequencyFileError(ValueError):
    """Raised when a frequency file row cannot be parsed."""


def strip_token(token: str) -> tuple[str, str]:
    """Split a surface token into (word, trailing punctuation).

    Leading quotes/parens are folded into the word to keep indices stable;
    only trailing punctuation is stripped.
    """
    word = token
    punct = ""
    while word and word[-1] in _PUNCT:
        punct = word[-1] + punct
        word = word[:-1]
    return word, punct


def tokenize(text: str) -> list[str]:
    """Whitespace-split a sentence into lowercased model tokens
    (trailing punctuation removed)."""
    out = []
    for tok in text.split():
        word, _ = strip_token(tok)
        if word:
            out.append(word.lower())
    return out


@dataclass(frozen=True)
class Vocabulary:
    """An ordered (lexicographic) set of lowercase words with counts."""

    words: tuple[str, ...]
    freq: dict[str, int]
    source_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __contains__(self, w: str) -> bool:
        return w in self.freq

    def __iter__(self) -> Iterator[str]:
        return iter(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def index_of(self, w: str) -> int:
        return self._index[w]

    def freq_of(self, w: str) -> int:
        return self.freq[w]

    @classmethod
    def from_counts(cls, counts: dict[str, int], source_tag: str = "") -> "Vocabulary":
        norm: dict[str, int] = {}
        for w, c in counts.items():
            lw = w.lower()
            norm[lw] = max(norm.get(lw, 0), int(c))
        words = tuple(sorted(norm))
        if not words:
            raise ValueError("vocabulary is empty")
        return cls(words=words, freq=norm, source_tag=source_tag)

    def to_json(self) -> str:
        return json.dumps([{"word": w, "freq": self.freq[w]} for w in self.words])

    @classmethod
    def from_json(cls, text: str, source_tag: str = "json") -> "Vocabulary":
        rows = json.loads(text)
        return cls.from_counts({r["word"]: r["freq"] for r in rows}, source_tag)


def build_vocabulary(
    freq_file: str | Path,
    extra_words: Iterable[str] = (),
    word_col: int = 0,
    count_col: int = 1,
) -> Vocabulary:
    """Union of a tab-separated frequency list and extra words.

    Extra words missing from the list get count 1.  ``word_col``/``count_col``
    select columns when the file has more than two (count defaults to the raw
    count column).
    """
    counts: dict[str, int] = {}
    path = Path(freq_file)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                word = parts[word_col].strip().lower()
                count = int(parts[count_col])
            except (IndexError, ValueError) as exc:
                raise FrequencyFileError(
                    f"{path.name}:{lineno}: cannot parse row {line!r}"
                ) from exc
            if not word:
                raise FrequencyFileError(f"{path.name}:{lineno}: empty word")
            if count < 0:
                raise FrequencyFileError(f"{path.name}:{lineno}: negative count")
            counts[word] = max(counts.get(word, 0), count)
    for w in extra_words:
        lw = w.lower()
        if lw and lw not in counts:
            counts[lw] = 1
    if not counts:
        raise ValueError(f"no vocabulary entries from {path} and extras")
    return Vocabulary.from_counts(counts, source_tag=str(path))


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit-cost insert/delete/substitute."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def neighbors(
    vocab: Vocabulary, w: str, max_distance: int
) -> list[tuple[str, int]]:
    """Vocabulary words within ``max_distance`` edits of ``w`` (never ``w``
    itself), sorted by (distance, word).

    ``w`` need not be in the vocabulary, so non-word tokens can be looked up.
    """
    if max_distance < 1:
        raise ValueError("max_distance must be >= 1")
    out = []
    for u in vocab.words:
        if u == w:
            continue
        if abs(len(u) - len(w)) > max_distance:
            continue
        d = edit_distance(u, w)
        if d <= max_distance:
            out.append((u, d))
    out.sort(key=lambda t: (t[1], t[0]))
    return out


@dataclass(frozen=True)
class NeighborIndex:
    """Precomputed neighbor lists for every vocabulary word."""

    max_distance: int
    table: dict[str, tuple[tuple[str, int], ...]] = field(repr=False)

    @classmethod
    def build(cls, vocab: Vocabulary, max_distance: int) -> "NeighborIndex":
        table = {
            w: tuple(neighbors(vocab, w, max_distance)) for w in vocab.words
        }
        return cls(max_distance=max_distance, table=table)

    def neighbors_of(self, w: str) -> tuple[tuple[str, int], ...]:
        return self.table.get(w, ())


def _common_prefix_len(a: str, b: str) -> int:
    n = 0
    for ca, cb in zip(a, b):
        if ca != cb:
            break
        n += 1
    return n


def shares_stem(a: str, b: str, min_stem: int = MIN_STEM_LEN) -> bool:
    """Morphological-variant relation: common prefix of length >= min_stem
    that covers >= 60% of the shorter word."""
    if a == b:
        return False
    p = _common_prefix_len(a, b)
    return p >= min_stem and p >= MIN_STEM_RATIO * min(len(a), len(b))


def morph_variants(
    vocab: Vocabulary, w: str, min_stem: int = MIN_STEM_LEN
) -> list[str]:
    """Vocabulary words sharing a stem with ``w`` (excluding ``w``), sorted."""
    if w not in vocab:
        raise KeyError(f"{w!r} not in vocabulary")
    return sorted(u for u in vocab.words if shares_stem(w, u, min_stem))


_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def single_edit_strings(w: str) -> set[str]:
    """All distinct strings at edit distance exactly 1 from ``w``
    (substitutions, insertions, deletions over a-z)."""
    out: set[str] = set()
    for i in range(len(w)):
        for c in _ALPHABET:
            if c != w[i]:
                out.add(w[:i] + c + w[i + 1 :])
        out.add(w[:i] + w[i + 1 :])
    for i in range(len(w) + 1):
        for c in _ALPHABET:
            out.add(w[:i] + c + w[i:])
    out.discard(w)
    return out
