"""Black-box contract checks shared by the lookup fakes and the live
language-model service.

Each check raises ``AssertionError`` on violation, so the same suite can be
pointed at any implementation of the prior or masked-oracle interfaces (the
service's own tests and this package's tests both call these).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

NORMALIZATION_TOL = 1e-6


def check_prior_contract(prior, contexts: Sequence[Sequence[str]]) -> None:
    """Normalization, shape, and determinism of next-word distributions."""
    V = len(prior.vocab.words)
    for ctx in contexts:
        vec = np.asarray(prior.next_logprobs(list(ctx)), dtype=float)
        assert vec.shape == (V,), f"expected {V} logprobs, got {vec.shape}"
        m = vec.max()
        total = m + math.log(np.exp(vec - m).sum())
        assert abs(total) < NORMALIZATION_TOL, (
            f"context {ctx!r}: logsumexp {total} exceeds {NORMALIZATION_TOL}"
        )
        again = np.asarray(prior.next_logprobs(list(ctx)), dtype=float)
        assert np.array_equal(vec, again), f"context {ctx!r}: nondeterministic"


def check_prior_unigram(prior, words: Sequence[str]) -> None:
    for w in words:
        lp = prior.unigram_logprob(w)
        assert lp <= 0.0 and math.isfinite(lp), f"unigram of {w!r}: {lp}"


def check_masked_oracle_contract(
    oracle,
    tokens: Sequence[str],
    target_index: int,
    candidate: str,
    span: str,
) -> None:
    """Probability range, determinism, and span-count sanity."""
    p = oracle.word_prob(list(tokens), target_index, candidate)
    assert 0.0 < p <= 1.0, f"probability {p} outside (0, 1]"
    again = oracle.word_prob(list(tokens), target_index, candidate)
    assert p == again, "masked probability nondeterministic"
    k = oracle.span_token_count(span)
    assert k >= len(span.split()), (
        f"span {span!r}: {k} tokens < {len(span.split())} words"
    )


def check_multi_token_signal(oracle, multi_token_word: str) -> None:
    assert oracle.is_multi_token(multi_token_word), (
        f"{multi_token_word!r} should be reported as multi-token"
    )
