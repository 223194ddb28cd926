"""Language-model priors over intended word sequences.

Two implementations of the same next-word interface: a count-based
interpolated n-gram model (exactly reproducible by a counting oracle) and a
thin client for the HTTP language-model service.  Returned distributions are
always over the restricted vocabulary and sum to one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .lexicon import Vocabulary

BOS = "<s>"
EOS = "</s>"


class BackendError(RuntimeError):
    """Remote prior failure (timeout, protocol, or server error)."""


class PriorModel(Protocol):
    """Next-word distribution over a fixed vocabulary.

    ``context_order`` is the model's Markov order (``None`` = unbounded
    context).  ``next_logprobs`` must return a vector aligned with
    ``vocab.words`` whose exponentials sum to 1.
    """

    vocab: Vocabulary
    context_order: int | None

    def next_logprobs(self, prefix: Sequence[str]) -> np.ndarray: ...

    def unigram_logprob(self, w: str) -> float: ...

    def sequence_logprob(self, words: Sequence[str]) -> float: ...


def _default_weights(order: int) -> tuple[float, ...]:
    # highest order first
    if order == 1:
        return (1.0,)
    if order == 2:
        return (0.8, 0.2)
    if order == 3:
        return (0.7, 0.2, 0.1)
    return (0.6, 0.2, 0.1, 0.1)


@dataclass(frozen=True)
class SmoothingConfig:
    """Additive-delta smoothing with fixed interpolation weights
    (highest order first; must sum to 1)."""

    delta: float = 0.1
    weights: tuple[float, ...] | None = None

    def weights_for(self, order: int) -> tuple[float, ...]:
        w = self.weights if self.weights is not None else _default_weights(order)
        if len(w) != order:
            raise ValueError(f"need {order} weights, got {len(w)}")
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError("interpolation weights must be >= 0 and sum to 1")
        return tuple(float(x) for x in w)


class NGramModel:
    """Interpolated additive-delta n-gram model over a fixed vocabulary.

    Conditionals are restricted to vocabulary continuations, so every
    returned distribution is normalized over the vocabulary exactly.  A
    zero-count context falls back to the next lower order (only reachable
    with delta == 0).
    """

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        counts: dict[tuple[str, ...], dict[str, int]],
        context_totals: dict[tuple[str, ...], int],
        smoothing: SmoothingConfig,
        prompt: tuple[str, ...] = (),
    ):
        self.vocab = vocab
        self.order = order
        self.context_order = order
        self.counts = counts
        self.context_totals = context_totals
        self.smoothing = smoothing
        self.weights = smoothing.weights_for(order)
        self.prompt = prompt
        self._cache: dict[tuple[str, ...], np.ndarray] = {}
        self._word_ix = {w: i for i, w in enumerate(vocab.words)}

    def _component(self, k: int, context: tuple[str, ...]) -> np.ndarray:
        """Order-k conditional over the vocabulary (falls back to k-1 when
        the context has zero vocabulary continuations and delta == 0)."""
        V = len(self.vocab.words)
        delta = self.smoothing.delta
        ctx = context[-(k - 1):] if k > 1 else ()
        total = self.context_totals.get(ctx, 0)
        if total == 0 and delta == 0.0:
            if k == 1:
                raise ValueError("order-1 component has no counts and delta=0")
            return self._component(k - 1, context)
        row = self.counts.get(ctx, {})
        vec = np.full(V, delta, dtype=float)
        for w, c in row.items():
            vec[self._word_ix[w]] += c
        return vec / (total + delta * V)

    def next_logprobs(self, prefix: Sequence[str]) -> np.ndarray:
        full = self.prompt + tuple(prefix)
        context = (BOS,) * (self.order - 1) + full
        key = context[-(self.order - 1):] if self.order > 1 else ()
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        probs = np.zeros(len(self.vocab.words), dtype=float)
        for lam, k in zip(self.weights, range(self.order, 0, -1)):
            if lam:
                probs += lam * self._component(k, key)
        with np.errstate(divide="ignore"):
            out = np.log(probs)
        out.setflags(write=False)
        self._cache[key] = out
        return out

    def unigram_logprob(self, w: str) -> float:
        if w not in self.vocab:
            raise KeyError(f"{w!r} not in vocabulary")
        return float(np.log(self._component(1, ()))[self._word_ix[w]])

    def sequence_logprob(self, words: Sequence[str]) -> float:
        total = 0.0
        for t, w in enumerate(words):
            total += float(self.next_logprobs(words[:t])[self._word_ix[w]])
        return total

    def to_json(self) -> str:
        return json.dumps(
            {
                "order": self.order,
                "delta": self.smoothing.delta,
                "weights": list(self.weights),
                "prompt": list(self.prompt),
                "vocab": [{"word": w, "freq": self.vocab.freq[w]} for w in self.vocab.words],
                "counts": [
                    {"context": list(ctx), "row": row}
                    for ctx, row in sorted(self.counts.items())
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "NGramModel":
        doc = json.loads(text)
        vocab = Vocabulary.from_counts(
            {r["word"]: r["freq"] for r in doc["vocab"]}, source_tag="model-json"
        )
        counts = {tuple(e["context"]): dict(e["row"]) for e in doc["counts"]}
        totals = {ctx: sum(row.values()) for ctx, row in counts.items()}
        smoothing = SmoothingConfig(delta=doc["delta"], weights=tuple(doc["weights"]))
        return cls(vocab, doc["order"], counts, totals, smoothing,
                   prompt=tuple(doc.get("prompt", ())))


def train_ngram(
    corpus: Sequence[Sequence[str] | str],
    order: int,
    smoothing: SmoothingConfig = SmoothingConfig(),
    vocab: Vocabulary | None = None,
    prompt: tuple[str, ...] = (),
) -> NGramModel:
    """Count-based training over whitespace-tokenized sentences.

    Sentences are padded with ``order-1`` begin markers.  Corpus tokens must
    be in the vocabulary.
    """
    if not (1 <= order <= 4):
        raise ValueError("order must be in [1, 4]")
    sents = [s.split() if isinstance(s, str) else list(s) for s in corpus]
    sents = [s for s in sents if s]
    if not sents:
        raise ValueError("empty corpus")
    if vocab is None:
        agg: dict[str, int] = {}
        for s in sents:
            for w in s:
                lw = w.lower()
                agg[lw] = agg.get(lw, 0) + 1
        vocab = Vocabulary.from_counts(agg, source_tag="corpus")
    counts: dict[tuple[str, ...], dict[str, int]] = {}
    totals: dict[tuple[str, ...], int] = {}
    for s in sents:
        toks = [w.lower() for w in s]
        for w in toks:
            if w not in vocab:
                raise ValueError(f"corpus token {w!r} not in vocabulary")
        padded = [BOS] * (order - 1) + toks
        for k in range(1, order + 1):
            for i in range(order - 1, len(padded)):
                ctx = tuple(padded[i - (k - 1): i])
                w = padded[i]
                row = counts.setdefault(ctx, {})
                row[w] = row.get(w, 0) + 1
                totals[ctx] = totals.get(ctx, 0) + 1
    return NGramModel(vocab, order, counts, totals, smoothing, prompt=prompt)


class TableModel:
    """Lookup-table prior for tests: explicit conditionals with a uniform
    fallback, normalized over the vocabulary."""

    def __init__(self, vocab: Vocabulary,
                 table: dict[tuple[str, ...], dict[str, float]],
                 context_order: int | None = None):
        self.vocab = vocab
        self.context_order = context_order
        self._rows = {}
        V = len(vocab.words)
        ix = {w: i for i, w in enumerate(vocab.words)}
        for ctx, row in table.items():
            vec = np.zeros(V, dtype=float)
            for w, p in row.items():
                vec[ix[w]] = p
            with np.errstate(divide="ignore"):
                self._rows[tuple(ctx)] = np.log(vec / vec.sum())
        self._uniform = np.full(V, -math.log(V))
        self._ix = ix

    def _row(self, prefix: Sequence[str]) -> np.ndarray:
        key = tuple(prefix)
        if self.context_order is not None and self.context_order >= 1:
            key = key[-(self.context_order - 1):] if self.context_order > 1 else ()
        return self._rows.get(key, self._uniform)

    def next_logprobs(self, prefix: Sequence[str]) -> np.ndarray:
        return self._row(prefix)

    def unigram_logprob(self, w: str) -> float:
        return float(self._rows.get((), self._uniform)[self._ix[w]])

    def sequence_logprob(self, words: Sequence[str]) -> float:
        return sum(
            float(self.next_logprobs(words[:t])[self._ix[w]])
            for t, w in enumerate(words)
        )


@dataclass
class RemotePrior:
    """Client for the LM service's next_logprobs endpoint.

    Vocabulary order must match the service's restricted vocabulary (both are
    lexicographic).  Never substitutes on failure: any transport or protocol
    problem raises ``BackendError``.
    """

    vocab: Vocabulary
    url: str
    prompt: tuple[str, ...] = ()
    timeout: float = 30.0
    context_order: int | None = None
    _cache: dict[tuple[str, ...], np.ndarray] = field(default_factory=dict, repr=False)

    def next_logprobs(self, prefix: Sequence[str]) -> np.ndarray:
        key = self.prompt + tuple(prefix)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        import requests

        try:
            resp = requests.post(
                self.url.rstrip("/") + "/v1/next_logprobs",
                json={"context": list(key), "candidates": "all"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            doc = resp.json()
            vec = np.asarray(doc["logprobs"], dtype=float)
        except Exception as exc:
            raise BackendError(f"next_logprobs failed for context {key}: {exc}") from exc
        if vec.shape != (len(self.vocab.words),):
            raise BackendError(
                f"service returned {vec.shape[0] if vec.ndim else '?'} logprobs, "
                f"expected {len(self.vocab.words)}"
            )
        vec.setflags(write=False)
        self._cache[key] = vec
        return vec

    def unigram_logprob(self, w: str) -> float:
        if w not in self.vocab:
            raise KeyError(f"{w!r} not in vocabulary")
        return float(self.next_logprobs(())[self.vocab.index_of(w)])

    def sequence_logprob(self, words: Sequence[str]) -> float:
        return sum(
            float(self.next_logprobs(words[:t])[self.vocab.index_of(w)])
            for t, w in enumerate(words)
        )
