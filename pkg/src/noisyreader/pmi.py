"""Masked-prediction PMI between the critical word and the predicate.

For every item, four scores pair each critical word with each predicate; the
matched pairings average into the plausible-condition score and the crossed
pairings into the garden-path score.  The per-item differences feed a
Wilcoxon signed-rank test (exact by sign enumeration for small n).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .stimuli import ConditionVariant, Item, expand_item

MASK = "[MASK]"
LOG2 = math.log(2.0)


class ItemExcluded(Exception):
    """Item cannot be scored (critical word is multi-token for the oracle)."""


class OracleError(RuntimeError):
    """Masked-prediction backend failure."""


class MaskedOracle(Protocol):
    """Minimal masked-prediction capability: subword counts for a span and
    the probability of a single-token word at a mask position."""

    mask_token: str
    max_span_tokens: int

    def span_token_count(self, span: str) -> int: ...

    def is_multi_token(self, word: str) -> bool: ...

    def word_prob(self, tokens: Sequence[str], target_index: int,
                  candidate: str) -> float: ...


@dataclass(frozen=True)
class MaskedQueryPair:
    """The two masked sentences behind one PMI score."""

    item_id: int
    j: int                          # critical-word index (1 or 2)
    k: int                          # predicate index (1 or 2)
    candidate: str
    numerator: tuple[str, ...]      # predicate visible, critical masked
    denominator: tuple[str, ...]    # critical masked, predicate -> k masks
    target_index: int
    span_token_count: int


@dataclass(frozen=True)
class PmiScore:
    item_id: int
    j: int
    k: int
    bits: float


@dataclass(frozen=True)
class ItemPmiAggregate:
    item_id: int
    pmi_plausible: float
    pmi_gp: float
    delta: float


def build_queries(variant: ConditionVariant, oracle: MaskedOracle) -> MaskedQueryPair:
    """Masked numerator/denominator sentences for one Plausible or
    NeighborGP variant.

    The numerator masks only the critical word; the denominator also replaces
    the predicate span with exactly as many masks as the oracle tokenizes it
    to.  Raises ``ItemExcluded`` when the critical word is multi-token.
    """
    crit_ix = variant.region_indices("CriticalWord")
    pred_ix = variant.region_indices("Predicate")
    if len(crit_ix) != 1 or not pred_ix:
        raise ValueError(f"{variant.sentence_id}: malformed region map")
    c_pos = crit_ix[0]
    candidate = variant.sentence[c_pos]
    if oracle.is_multi_token(candidate):
        raise ItemExcluded(
            f"item {variant.item_id}: critical word {candidate!r} is multi-token"
        )
    tokens = list(variant.sentence)
    numerator = tokens.copy()
    numerator[c_pos] = oracle.mask_token

    span = " ".join(tokens[pred_ix[0]: pred_ix[-1] + 1])
    k = oracle.span_token_count(span)
    if k < 1:
        raise OracleError(f"span_token_count returned {k} for {span!r}")
    denominator = tokens[: pred_ix[0]] + [oracle.mask_token] * k
    denominator[c_pos] = oracle.mask_token
    return MaskedQueryPair(
        item_id=variant.item_id,
        j=0, k=0,  # filled by the item-level driver
        candidate=candidate,
        numerator=tuple(numerator),
        denominator=tuple(denominator),
        target_index=c_pos,
        span_token_count=k,
    )


def pmi_bits(oracle: MaskedOracle, queries: MaskedQueryPair) -> PmiScore:
    """log2 P(c | predicate visible) - log2 P(c | predicate masked)."""
    p_num = oracle.word_prob(queries.numerator, queries.target_index,
                             queries.candidate)
    p_den = oracle.word_prob(queries.denominator, queries.target_index,
                             queries.candidate)
    for name, p in (("numerator", p_num), ("denominator", p_den)):
        if not (0.0 < p <= 1.0):
            raise OracleError(
                f"item {queries.item_id} ({queries.j},{queries.k}): "
                f"{name} probability {p} outside (0, 1]"
            )
    return PmiScore(
        item_id=queries.item_id, j=queries.j, k=queries.k,
        bits=(math.log(p_num) - math.log(p_den)) / LOG2,
    )


def item_queries(item: Item, oracle: MaskedOracle) -> list[MaskedQueryPair]:
    """The four (critical j, predicate k) query pairs for one item.

    Queries are built from the item's Plausible/NeighborGP variants, whose
    sentences are exactly the four critical x predicate combinations.
    """
    variants = {
        (v.condition, v.variant): v for v in expand_item(item)
    }
    # (j, k) -> the variant carrying critical_pair[j-1] with predicate_pair[k-1]
    grid = {
        (1, 1): variants[("Plausible", 1)],
        (2, 2): variants[("Plausible", 2)],
        (2, 1): variants[("NeighborGP", 1)],
        (1, 2): variants[("NeighborGP", 2)],
    }
    out = []
    for (j, k), variant in sorted(grid.items()):
        q = build_queries(variant, oracle)
        out.append(MaskedQueryPair(
            item_id=q.item_id, j=j, k=k, candidate=q.candidate,
            numerator=q.numerator, denominator=q.denominator,
            target_index=q.target_index, span_token_count=q.span_token_count,
        ))
    return out


def aggregate_item(scores: Sequence[PmiScore]) -> ItemPmiAggregate:
    """Within-condition means and their difference for one item."""
    by_jk = {(s.j, s.k): s.bits for s in scores}
    if sorted(by_jk) != [(1, 1), (1, 2), (2, 1), (2, 2)]:
        missing = {(1, 1), (1, 2), (2, 1), (2, 2)} - set(by_jk)
        raise ValueError(f"missing (j,k) combinations: {sorted(missing)}")
    item_ids = {s.item_id for s in scores}
    if len(item_ids) != 1:
        raise ValueError(f"scores from multiple items: {sorted(item_ids)}")
    plausible = 0.5 * (by_jk[(1, 1)] + by_jk[(2, 2)])
    gp = 0.5 * (by_jk[(1, 2)] + by_jk[(2, 1)])
    return ItemPmiAggregate(
        item_id=item_ids.pop(), pmi_plausible=plausible, pmi_gp=gp,
        delta=plausible - gp,
    )


def _signed_rank_stat(deltas: np.ndarray) -> tuple[float, np.ndarray]:
    """W+ (sum of ranks of positive differences) and the tied ranks."""
    mags = np.abs(deltas)
    order = np.argsort(mags, kind="stable")
    ranks = np.empty(len(mags))
    sorted_mags = mags[order]
    i = 0
    while i < len(sorted_mags):
        j = i
        while j < len(sorted_mags) and sorted_mags[j] == sorted_mags[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # average of ranks i+1..j
        i = j
    w_plus = float(ranks[deltas > 0].sum())
    return w_plus, ranks


def wilcoxon_signed_rank(deltas: Sequence[float],
                         exact_max_n: int = 20) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test on the per-item differences.

    Zero differences are dropped; ties get average ranks.  Up to
    ``exact_max_n`` the null distribution of W+ is computed exactly over all
    sign assignments of the observed ranks (via a subset-sum table); larger
    samples use the normal approximation with tie and continuity
    corrections.  Returns (W+, two-sided p).
    """
    d = np.asarray([x for x in deltas if x != 0.0], dtype=float)
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero")
    w_plus, ranks = _signed_rank_stat(d)

    if n <= exact_max_n:
        # distribution of 2*W+ over all 2^n equally likely sign choices
        scaled = np.rint(2 * ranks).astype(int)
        max_sum = int(scaled.sum())
        table = np.zeros(max_sum + 1)
        table[0] = 1.0
        for r in scaled:
            shifted = np.zeros_like(table)
            shifted[r:] = table[: max_sum + 1 - r]
            table = table + shifted
        table /= 2.0 ** n
        target = int(round(2 * w_plus))
        p_le = float(table[: target + 1].sum())
        p_ge = float(table[target:].sum())
        p = min(1.0, 2.0 * min(p_le, p_ge))
        return w_plus, p

    mean = n * (n + 1) / 4.0
    tie_groups = {}
    for r in ranks:
        tie_groups[r] = tie_groups.get(r, 0) + 1
    tie_term = sum(t ** 3 - t for t in tie_groups.values())
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    diff = w_plus - mean
    cc = 0.5 * np.sign(diff)
    z = (diff - cc) / math.sqrt(var)
    p = 2.0 * 0.5 * math.erfc(abs(z) / math.sqrt(2.0))
    return w_plus, min(1.0, p)


def brute_force_sign_p(deltas: Sequence[float]) -> tuple[float, float]:
    """Independent oracle: enumerate every sign assignment directly."""
    d = np.asarray([x for x in deltas if x != 0.0], dtype=float)
    n = len(d)
    w_plus, ranks = _signed_rank_stat(d)
    n_le = n_ge = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for s, r in zip(signs, ranks) if s)
        n_le += w <= w_plus
        n_ge += w >= w_plus
    total = 2 ** n
    p = min(1.0, 2.0 * min(n_le / total, n_ge / total))
    return w_plus, p


class LookupOracle:
    """Dict-backed masked-prediction fake sharing the service's contract.

    Probabilities are registered per (sentence tokens, position, candidate);
    span token counts default to the word count unless registered.
    """

    mask_token = MASK
    max_span_tokens = 64

    def __init__(self, probs: dict | None = None,
                 span_tokens: dict[str, int] | None = None,
                 multi_token_words: set[str] | None = None,
                 default_prob: float | None = None):
        self.probs = dict(probs or {})
        self.span_tokens = dict(span_tokens or {})
        self.multi_token_words = set(multi_token_words or ())
        self.default_prob = default_prob

    def register(self, tokens: Sequence[str], target_index: int,
                 candidate: str, prob: float) -> None:
        self.probs[(tuple(tokens), target_index, candidate)] = prob

    def span_token_count(self, span: str) -> int:
        return self.span_tokens.get(span, len(span.split()))

    def is_multi_token(self, word: str) -> bool:
        return word in self.multi_token_words

    def word_prob(self, tokens: Sequence[str], target_index: int,
                  candidate: str) -> float:
        key = (tuple(tokens), target_index, candidate)
        if key in self.probs:
            return self.probs[key]
        if self.default_prob is not None:
            return self.default_prob
        raise OracleError(f"no registered probability for {key!r}")


class RemoteMaskedOracle:
    """HTTP client for the LM service's masked-prediction endpoints."""

    mask_token = MASK
    max_span_tokens = 64

    def __init__(self, url: str, timeout: float = 60.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def _post(self, path: str, payload: dict) -> dict:
        import requests

        try:
            resp = requests.post(self.url + path, json=payload,
                                 timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except Exception as exc:
            raise OracleError(f"{path} failed: {exc}") from exc

    def span_token_count(self, span: str) -> int:
        return int(self._post("/v1/span_tokens", {"span": span})["k"])

    def is_multi_token(self, word: str) -> bool:
        doc = self._post("/v1/span_tokens", {"span": word})
        return int(doc["k"]) > 1

    def word_prob(self, tokens: Sequence[str], target_index: int,
                  candidate: str) -> float:
        doc = self._post("/v1/masked", {
            "tokens": list(tokens), "target_index": target_index,
            "candidate": candidate,
        })
        if doc.get("multi_token"):
            raise ItemExcluded(f"candidate {candidate!r} is multi-token")
        return float(doc["prob"])


def run_pmi_analysis(items: Sequence[Item], oracle: MaskedOracle):
    """Score every item; returns (scores, aggregates, excluded item ids,
    wilcoxon summary dict)."""
    scores: list[PmiScore] = []
    aggregates: list[ItemPmiAggregate] = []
    excluded: list[int] = []
    for item in items:
        try:
            qs = item_queries(item, oracle)
        except ItemExcluded:
            excluded.append(item.id)
            continue
        item_scores = [pmi_bits(oracle, q) for q in qs]
        scores.extend(item_scores)
        aggregates.append(aggregate_item(item_scores))
    deltas = [a.delta for a in aggregates]
    if deltas and any(d != 0.0 for d in deltas):
        stat, p = wilcoxon_signed_rank(deltas)
    else:
        stat, p = None, None
    summary = {
        "n_items": len(aggregates),
        "n_excluded": len(excluded),
        "excluded_items": excluded,
        "statistic_w_plus": stat,
        "p_two_sided": p,
    }
    return scores, aggregates, excluded, summary
