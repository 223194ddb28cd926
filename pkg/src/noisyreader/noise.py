"""Generative error model: per-word action prior and emission likelihoods.

Each intended word passes through one of four actions.  Normal copies the
word; form-based substitution emits an orthographic neighbor (or a single-edit
non-word) with edit-distance-decaying probability; morphological substitution
emits a stem-sharing variant uniformly; semantic substitution emits any other
vocabulary word with frequency weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from . import lexicon
from .lexicon import Vocabulary

NEG_INF = float("-inf")


class Action(IntEnum):
    NORMAL = 0
    FORM_SUB = 1
    MORPH_SUB = 2
    SEM_SUB = 3


ACTIONS = tuple(Action)


@dataclass(frozen=True)
class ActionPrior:
    """Dirichlet-style pseudo-counts: normal_alpha for Normal, error_alpha
    for each of the three error actions."""

    normal_alpha: float = 3.0
    error_alpha: float = 1.0

    def __post_init__(self):
        if self.normal_alpha <= 0 or self.error_alpha <= 0:
            raise ValueError("action prior alphas must be positive")


def action_probs(p: ActionPrior) -> dict[Action, float]:
    """Normal gets normal_alpha / (normal_alpha + 3 error_alpha); each error
    action gets error_alpha / the same total."""
    total = p.normal_alpha + 3.0 * p.error_alpha
    e = p.error_alpha / total
    return {
        Action.NORMAL: p.normal_alpha / total,
        Action.FORM_SUB: e,
        Action.MORPH_SUB: e,
        Action.SEM_SUB: e,
    }


@dataclass(frozen=True)
class NoiseConfig:
    lambda_form: float = 1.0
    max_form_distance: int = 2
    min_stem: int = 4
    semantic_floor: float = 0.5

    def __post_init__(self):
        if self.lambda_form <= 0:
            raise ValueError("lambda_form must be positive")
        if self.max_form_distance < 1:
            raise ValueError("max_form_distance must be >= 1")


class SamplingError(RuntimeError):
    """Requested emission action is infeasible for the intended word."""


class NoiseModel:
    """Bundles vocabulary, action prior, and emission shapes; precomputes the
    neighbor/variant structures the engine queries per word.

    With ``errors_enabled=False`` only the Normal action exists (exact
    noise-free inference); the action prior is bypassed rather than taken to
    a zero-alpha limit.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        action_prior: ActionPrior = ActionPrior(),
        config: NoiseConfig = NoiseConfig(),
        errors_enabled: bool = True,
    ):
        self.vocab = vocab
        self.action_prior = action_prior
        self.config = config
        self.errors_enabled = errors_enabled
        if errors_enabled:
            probs = action_probs(action_prior)
        else:
            probs = {a: 0.0 for a in ACTIONS}
            probs[Action.NORMAL] = 1.0
        self.action_logprobs = {
            a: (math.log(p) if p > 0 else NEG_INF) for a, p in probs.items()
        }
        floor = config.semantic_floor
        self._sem_weight = {w: vocab.freq[w] + floor for w in vocab.words}
        self._sem_total = sum(self._sem_weight.values())

    # -- per-word structure (cached) ------------------------------------

    @lru_cache(maxsize=None)
    def form_neighbors(self, w: str) -> tuple[tuple[str, int], ...]:
        return tuple(lexicon.neighbors(self.vocab, w, self.config.max_form_distance))

    @lru_cache(maxsize=None)
    def morph_variants(self, w: str) -> tuple[str, ...]:
        if w not in self.vocab:
            return ()
        return tuple(lexicon.morph_variants(self.vocab, w, self.config.min_stem))

    @lru_cache(maxsize=None)
    def nonword_edits(self, w: str) -> tuple[str, ...]:
        """Single-edit strings of ``w`` that are not vocabulary words."""
        return tuple(sorted(
            s for s in lexicon.single_edit_strings(w)
            if s and s not in self.vocab
        ))

    @lru_cache(maxsize=None)
    def _form_partition(self, w: str) -> float:
        """Z for form substitution from intended ``w``: vocabulary neighbors
        weighted exp(-lambda d) plus one distance-1 lump for the non-word
        class."""
        lam = self.config.lambda_form
        z = sum(math.exp(-lam * d) for _, d in self.form_neighbors(w))
        if self.nonword_edits(w):
            z += math.exp(-lam)
        return z

    # -- spec operations -------------------------------------------------

    def emission_logprob(self, intended: str, observed: str, action: Action) -> float:
        """log P(observed | intended, action); -inf encodes impossibility."""
        if action == Action.NORMAL:
            return 0.0 if observed == intended else NEG_INF
        if not self.errors_enabled:
            return NEG_INF
        if action == Action.FORM_SUB:
            if observed == intended:
                return NEG_INF
            lam = self.config.lambda_form
            z = self._form_partition(intended)
            if z == 0.0:
                return NEG_INF
            if observed in self.vocab:
                d = lexicon.edit_distance(intended, observed)
                if not (1 <= d <= self.config.max_form_distance):
                    return NEG_INF
                return -lam * d - math.log(z)
            nonwords = self.nonword_edits(intended)
            if observed not in nonwords:
                return NEG_INF
            return -lam - math.log(z) - math.log(len(nonwords))
        if action == Action.MORPH_SUB:
            variants = self.morph_variants(intended)
            if observed in variants:
                return -math.log(len(variants))
            return NEG_INF
        if action == Action.SEM_SUB:
            if observed == intended or observed not in self.vocab:
                return NEG_INF
            w = self._sem_weight[observed]
            z = self._sem_total - self._sem_weight[intended]
            if w <= 0 or z <= 0:
                return NEG_INF
            return math.log(w) - math.log(z)
        raise ValueError(f"unknown action {action!r}")

    def sample_emission(self, intended: str, action: Action,
                        rng: np.random.Generator) -> str:
        """Draw one observed token from P(. | intended, action)."""
        if action == Action.NORMAL:
            return intended
        if not self.errors_enabled:
            raise SamplingError("error actions are disabled")
        if action == Action.FORM_SUB:
            lam = self.config.lambda_form
            neigh = self.form_neighbors(intended)
            nonwords = self.nonword_edits(intended)
            outcomes: list[str | None] = [u for u, _ in neigh]
            weights = [math.exp(-lam * d) for _, d in neigh]
            if nonwords:
                outcomes.append(None)  # the non-word lump
                weights.append(math.exp(-lam))
            if not outcomes:
                raise SamplingError(f"no form-substitution support for {intended!r}")
            total = sum(weights)
            pick = rng.choice(len(outcomes), p=[w / total for w in weights])
            chosen = outcomes[int(pick)]
            if chosen is None:
                return nonwords[int(rng.integers(len(nonwords)))]
            return chosen
        if action == Action.MORPH_SUB:
            variants = self.morph_variants(intended)
            if not variants:
                raise SamplingError(f"{intended!r} has no morphological variants")
            return variants[int(rng.integers(len(variants)))]
        if action == Action.SEM_SUB:
            words = [w for w in self.vocab.words if w != intended]
            if not words:
                raise SamplingError("vocabulary too small for semantic substitution")
            weights = np.array([self._sem_weight[w] for w in words], dtype=float)
            if weights.sum() <= 0:
                raise SamplingError("no semantic-substitution mass")
            pick = rng.choice(len(words), p=weights / weights.sum())
            return words[int(pick)]
        raise ValueError(f"unknown action {action!r}")

    @lru_cache(maxsize=None)
    def candidate_pairs(
        self, observed: str, top_m: int
    ) -> tuple[tuple[str, Action, float, float], ...]:
        """Cached flat view of the candidate set: (intended word, action,
        emission log-probability, action log-probability) rows."""
        out = []
        for w, actions in self.candidate_intendeds(observed, top_m).items():
            for a in actions:
                out.append((w, a, self.emission_logprob(w, observed, a),
                            self.action_logprobs[a]))
        return tuple(out)

    def candidate_intendeds(self, observed: str,
                            top_m: int) -> dict[str, tuple[Action, ...]]:
        """Intended-word hypotheses with their feasible actions for one
        observed token.  Every returned (word, action) pair has a finite
        emission log-probability."""
        cands: dict[str, set[Action]] = {}

        def add(word: str, action: Action):
            cands.setdefault(word, set()).add(action)

        in_vocab = observed in self.vocab
        if in_vocab:
            add(observed, Action.NORMAL)
        if self.errors_enabled:
            if in_vocab:
                for u, d in lexicon.neighbors(self.vocab, observed,
                                              self.config.max_form_distance):
                    add(u, Action.FORM_SUB)
            else:
                # a non-word can only be a single-edit slip of its source
                for u, _ in lexicon.neighbors(self.vocab, observed, 1):
                    add(u, Action.FORM_SUB)
            if in_vocab:
                for u in self.morph_variants(observed):
                    add(u, Action.MORPH_SUB)
                if self._sem_weight[observed] > 0:
                    ranked = sorted(self.vocab.words,
                                    key=lambda w: (-self.vocab.freq[w], w))
                    for u in ranked[:top_m]:
                        if u != observed:
                            add(u, Action.SEM_SUB)
        return {
            w: tuple(sorted(acts)) for w, acts in sorted(cands.items())
        }
