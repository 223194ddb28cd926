"""Experimental items and their expansion into the five conditions.

An item contributes ten sentence variants: two per condition, counterbalanced
over the two critical words (and, for the garden-path condition, formed by
swapping the two predicates).  Ten rotation lists assign each item to exactly
one variant per list so that the full design covers every variant once.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import lexicon
from .lexicon import Vocabulary, edit_distance

CONDITIONS = ("Plausible", "NeighborGP", "Typo", "UnrelatedGP", "LateError")
REGIONS = ("Preamble", "CriticalWord", "Intervening", "Predicate")
# widest critical-pair separation in the packaged materials (genes/jeans)
NEIGHBOR_MAX_DISTANCE = 3
VARIANTS_PER_ITEM = 10


class ItemValidationError(ValueError):
    def __init__(self, item_id, violations: list[str]):
        super().__init__(f"item {item_id}: " + "; ".join(violations))
        self.item_id = item_id
        self.violations = violations


@dataclass(frozen=True)
class Item:
    """One experimental item; spans are surface strings (punctuation stays
    attached to its word, e.g. a predicate ends with '.' or '?')."""

    id: int
    preamble: str
    critical_pair: tuple[str, str]
    typo_pair: tuple[str, str]
    unrelated_word: str
    intervening: str
    predicate_pair: tuple[str, str]
    late_predicate: str

    @classmethod
    def from_dict(cls, doc: dict) -> "Item":
        return cls(
            id=int(doc["id"]),
            preamble=doc["preamble"],
            critical_pair=tuple(doc["critical_pair"]),
            typo_pair=tuple(doc["typo_pair"]),
            unrelated_word=doc["unrelated_word"],
            intervening=doc["intervening"],
            predicate_pair=tuple(doc["predicate_pair"]),
            late_predicate=doc["late_predicate"],
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "preamble": self.preamble,
            "critical_pair": list(self.critical_pair),
            "typo_pair": list(self.typo_pair),
            "unrelated_word": self.unrelated_word,
            "intervening": self.intervening,
            "predicate_pair": list(self.predicate_pair),
            "late_predicate": self.late_predicate,
        }

    def model_words(self, include_typos: bool = False) -> list[str]:
        """Lowercased vocabulary words used by this item (typo forms are
        non-words and excluded unless requested)."""
        words = []
        for span in (self.preamble, self.intervening, *self.predicate_pair,
                     self.late_predicate):
            words.extend(lexicon.tokenize(span))
        words.extend(w.lower() for w in self.critical_pair)
        words.append(self.unrelated_word.lower())
        if include_typos:
            words.extend(w.lower() for w in self.typo_pair)
        return words


@dataclass(frozen=True)
class ConditionVariant:
    item_id: int
    condition: str
    variant: int                      # 1 or 2
    sentence: tuple[str, ...]         # surface tokens
    region_map: tuple[str, ...]       # region label per token

    @property
    def sentence_id(self) -> str:
        return f"{self.item_id:03d}_{self.condition}_{self.variant}"

    def text(self) -> str:
        return " ".join(self.sentence)

    def model_tokens(self) -> list[str]:
        return lexicon.tokenize(self.text())

    def region_indices(self, region: str) -> list[int]:
        return [i for i, r in enumerate(self.region_map) if r == region]


def load_items(path: str | Path) -> list[Item]:
    with open(path, encoding="utf-8") as fh:
        docs = json.load(fh)
    return [Item.from_dict(d) for d in docs]


def _make_variant(item: Item, condition: str, variant: int,
                  critical: str, predicate: str) -> ConditionVariant:
    pre = item.preamble.split()
    mid = item.intervening.split()
    pred = predicate.split()
    sentence = tuple(pre + [critical] + mid + pred)
    regions = tuple(
        ["Preamble"] * len(pre) + ["CriticalWord"]
        + ["Intervening"] * len(mid) + ["Predicate"] * len(pred)
    )
    return ConditionVariant(item.id, condition, variant, sentence, regions)


def expand_item(item: Item) -> list[ConditionVariant]:
    """The ten variants of an item.

    Variant numbering follows the predicate where both alternate (Plausible,
    NeighborGP, Typo carry predicate k in variant k) and the critical word
    for UnrelatedGP/LateError.
    """
    violations = _violations(item)
    if violations:
        raise ItemValidationError(item.id, violations)
    a, b = item.critical_pair
    ta, tb = item.typo_pair
    pa, pb = item.predicate_pair
    return [
        _make_variant(item, "Plausible", 1, a, pa),
        _make_variant(item, "Plausible", 2, b, pb),
        _make_variant(item, "NeighborGP", 1, b, pa),
        _make_variant(item, "NeighborGP", 2, a, pb),
        _make_variant(item, "Typo", 1, ta, pa),
        _make_variant(item, "Typo", 2, tb, pb),
        _make_variant(item, "UnrelatedGP", 1, item.unrelated_word, pa),
        _make_variant(item, "UnrelatedGP", 2, item.unrelated_word, pb),
        _make_variant(item, "LateError", 1, a, item.late_predicate),
        _make_variant(item, "LateError", 2, b, item.late_predicate),
    ]


def expand_items(items: Iterable[Item]) -> list[ConditionVariant]:
    out = []
    for item in items:
        out.extend(expand_item(item))
    return out


def _violations(item: Item, vocab: Vocabulary | None = None) -> list[str]:
    v: list[str] = []
    a, b = (w.lower() for w in item.critical_pair)
    if a == b:
        v.append("critical pair words are identical")
    if edit_distance(a, b) > NEIGHBOR_MAX_DISTANCE:
        v.append("critical pair not orthographic neighbors")
    for span, name in ((item.preamble, "preamble"),
                       (item.intervening, "intervening"),
                       (item.predicate_pair[0], "predicate_pair[0]"),
                       (item.predicate_pair[1], "predicate_pair[1]"),
                       (item.late_predicate, "late_predicate")):
        if not span.strip():
            v.append(f"empty span: {name}")
    for typo, src in zip(item.typo_pair, item.critical_pair):
        t, s = typo.lower(), src.lower()
        if edit_distance(t, s) != 1:
            v.append(f"typo form {typo!r} not at edit distance 1 from {src!r}")
    if vocab is not None:
        for w in (a, b):
            if w not in vocab:
                v.append(f"critical word {w!r} not in vocabulary")
        for typo in item.typo_pair:
            if typo.lower() in vocab:
                v.append(f"typo form {typo!r} is in vocabulary")
        for w in set(item.model_words()):
            if w not in vocab:
                v.append(f"word {w!r} not in vocabulary")
    return v


def validate_item(item: Item, vocab: Vocabulary | None = None) -> list[str]:
    """Machine-readable violation list; empty when the item is well-formed."""
    return _violations(item, vocab)


@dataclass(frozen=True)
class ExperimentList:
    list_id: int                                   # 1..10
    assignment: tuple[tuple[int, str, int], ...]   # (item, condition, variant)


# canonical variant order: index 1..10 over (condition, variant)
VARIANT_TABLE = [
    (cond, var) for cond in CONDITIONS for var in (1, 2)
]


def generate_lists(items: list[Item], seed: int = 0,
                   expected_items: int | None = None) -> list[ExperimentList]:
    """Latin-square rotation: list l assigns item k the variant
    ((k + l) mod 10) + 1; the seed only shuffles presentation order."""
    if expected_items is not None and len(items) != expected_items:
        raise ValueError(
            f"expected {expected_items} items, got {len(items)}"
        )
    n_lists = VARIANTS_PER_ITEM
    lists = []
    for l in range(1, n_lists + 1):
        rows = []
        for k, item in enumerate(items):
            vidx = ((k + l) % VARIANTS_PER_ITEM) + 1
            cond, var = VARIANT_TABLE[vidx - 1]
            rows.append((item.id, cond, var))
        rng = np.random.default_rng([seed, l])
        order = rng.permutation(len(rows))
        lists.append(ExperimentList(l, tuple(rows[i] for i in order)))
    return lists


def write_variants_csv(variants: list[ConditionVariant], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "condition", "variant", "sentence",
                    "preamble_span", "critical_span", "intervening_span",
                    "predicate_span"])
        for var in variants:
            spans = {}
            for region in REGIONS:
                ix = var.region_indices(region)
                spans[region] = f"{ix[0]}-{ix[-1]}" if ix else ""
            w.writerow([
                var.item_id, var.condition, var.variant, var.text(),
                spans["Preamble"], spans["CriticalWord"],
                spans["Intervening"], spans["Predicate"],
            ])


def write_lists_csv(lists: list[ExperimentList], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["list", "item", "condition", "variant"])
        for lst in lists:
            for item_id, cond, var in lst.assignment:
                w.writerow([lst.list_id, item_id, cond, var])
