"""Sequential Monte Carlo inference over intended sentences.

Each particle carries an intended-word sequence and per-word error actions.
Words are consumed left to right; at each step particles extend by sampling
from a prior-weighted proposal over the feasible (intended word, action)
candidates for the observed token, and the mean incremental weight estimates
the word's predictive probability.  Metropolis-Hastings rejuvenation sweeps
revise earlier commitments, either after the sentence ends (second pass) or
when a word's context surprisal exceeds its unigram surprisal by a threshold.

``enumerate_exact`` computes the same posterior by exhaustive summation and
is the validation oracle for the sampler.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .noise import ACTIONS, Action, NoiseModel
from .prior import PriorModel

LOG2 = math.log(2.0)
NEG_INF = float("-inf")

# rng stream namespaces
_NS_STEP = 1
_NS_RESAMPLE = 2
_NS_SECOND_PASS = 3
_NS_CONDITIONAL = 4


class InferenceDegenerateError(RuntimeError):
    """No particle retains positive weight at some word."""

    def __init__(self, position: int, token: str):
        super().__init__(
            f"all particles at weight 0 for token {token!r} at word {position}"
        )
        self.position = position
        self.token = token


class OracleInfeasibleError(RuntimeError):
    """Exact enumeration would exceed the assignment budget."""


@dataclass(frozen=True)
class InferenceConfig:
    num_particles: int = 128
    resample_ess_fraction: float = 0.5
    conditional_rejuv: bool = False
    conditional_threshold: float = 2.0
    second_pass_rejuv: bool = True
    second_pass_rejuv_p: float = 1.0
    second_pass_rejuv_iters: int = 3
    proposal_top_m: int = 10

    def __post_init__(self):
        if self.num_particles < 1:
            raise ValueError("num_particles must be >= 1")
        if not (0.0 < self.resample_ess_fraction <= 1.0):
            raise ValueError("resample_ess_fraction must be in (0, 1]")
        if not (0.0 <= self.second_pass_rejuv_p <= 1.0):
            raise ValueError("second_pass_rejuv_p must be in [0, 1]")
        if self.second_pass_rejuv_iters < 0:
            raise ValueError("second_pass_rejuv_iters must be >= 0")
        if not math.isfinite(self.conditional_threshold):
            raise ValueError("conditional_threshold must be finite")

    @classmethod
    def from_dict(cls, doc: dict) -> "InferenceConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown engine config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Particle:
    intended: tuple[str, ...]
    actions: tuple[Action, ...]
    log_prior: float
    log_lik: float
    incremental_weight: float


@dataclass
class _PositionCandidates:
    """Feasible (word, action) pairs for one observed token, with the
    action-prior + emission log-density of each pair."""

    observed: str
    word_ids: np.ndarray        # (C,) int
    action_ids: np.ndarray      # (C,) int
    log_emit: np.ndarray        # (C,) emission log-probability
    log_act: np.ndarray         # (C,) action-prior log-probability
    pair_index: dict[tuple[int, int], int]
    pair_map: np.ndarray        # (V, 4) -> candidate row or -1

    @property
    def le(self) -> np.ndarray:
        return self.log_emit + self.log_act


@lru_cache(maxsize=None)
def _position_candidates(
    observed: str, noise: NoiseModel, top_m: int
) -> _PositionCandidates:
    words, acts, le_emit, le_act = [], [], [], []
    for w, a, emit_lp, act_lp in noise.candidate_pairs(observed, top_m):
        words.append(noise.vocab.index_of(w))
        acts.append(int(a))
        le_emit.append(emit_lp)
        le_act.append(act_lp)
    pair_index = {(w, a): i for i, (w, a) in enumerate(zip(words, acts))}
    pair_map = np.full((len(noise.vocab.words), len(ACTIONS)), -1,
                       dtype=np.int64)
    for (w, a), i in pair_index.items():
        pair_map[w, a] = i
    out = _PositionCandidates(
        observed=observed,
        word_ids=np.asarray(words, dtype=np.int64),
        action_ids=np.asarray(acts, dtype=np.int64),
        log_emit=np.asarray(le_emit, dtype=float),
        log_act=np.asarray(le_act, dtype=float),
        pair_index=pair_index,
        pair_map=pair_map,
    )
    for arr in (out.word_ids, out.action_ids, out.log_emit, out.log_act,
                out.pair_map):
        arr.setflags(write=False)
    return out


@dataclass
class Ensemble:
    """K weighted hypotheses plus the per-step bookkeeping the rejuvenation
    sweeps need.  Arrays are aligned by particle index."""

    config: InferenceConfig
    seed: int
    vocab_words: tuple[str, ...]
    intended: np.ndarray            # (K, step) int
    actions: np.ndarray             # (K, step) int
    log_prior: np.ndarray           # (K,)
    log_lik: np.ndarray             # (K,)
    log_act: np.ndarray             # (K,)
    weights: np.ndarray             # (K,) normalized
    incremental: np.ndarray         # (K,) last step's w_t
    step: int = 0
    history: list[float] = field(default_factory=list)
    positions: list[_PositionCandidates] = field(default_factory=list)
    observed: list[str] = field(default_factory=list)
    rejuv_attempted: np.ndarray | None = None
    rejuv_accepted: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.config.num_particles

    @property
    def particles(self) -> list[Particle]:
        return [
            Particle(
                intended=tuple(self.vocab_words[j] for j in self.intended[i]),
                actions=tuple(Action(a) for a in self.actions[i]),
                log_prior=float(self.log_prior[i]),
                log_lik=float(self.log_lik[i]),
                incremental_weight=float(self.incremental[i]),
            )
            for i in range(self.K)
        ]

    def state_arrays(self) -> tuple[np.ndarray, ...]:
        return (
            self.intended.copy(), self.actions.copy(),
            self.weights.copy(), self.log_prior.copy(), self.log_lik.copy(),
        )


def init_ensemble(noise: NoiseModel, config: InferenceConfig, seed: int) -> Ensemble:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    K = config.num_particles
    return Ensemble(
        config=config,
        seed=seed,
        vocab_words=noise.vocab.words,
        intended=np.zeros((K, 0), dtype=np.int64),
        actions=np.zeros((K, 0), dtype=np.int64),
        log_prior=np.zeros(K),
        log_lik=np.zeros(K),
        log_act=np.zeros(K),
        weights=np.full(K, 1.0 / K),
        incremental=np.zeros(K),
    )


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def _context_key(row: np.ndarray, upto: int, order: int | None) -> tuple[int, ...]:
    prefix = row[:upto]
    if order is not None and order >= 1:
        prefix = prefix[max(0, upto - (order - 1)):upto]
    return tuple(int(x) for x in prefix)


def _prior_vector(cache: dict, prior: PriorModel, vocab_words: tuple[str, ...],
                  key: tuple[int, ...]) -> np.ndarray:
    vec = cache.get(key)
    if vec is None:
        vec = prior.next_logprobs([vocab_words[j] for j in key])
        cache[key] = vec
    return vec


def step(
    ens: Ensemble, observed: str, prior: PriorModel, noise: NoiseModel
) -> tuple[Ensemble, float]:
    """Consume one observed token: propagate, weight, estimate the word's
    predictive probability, and resample if the effective sample size drops
    below the configured fraction of K."""
    t = ens.step
    pos = _position_candidates(observed, noise, ens.config.proposal_top_m)
    if len(pos.word_ids) == 0:
        raise InferenceDegenerateError(t, observed)

    K = ens.K
    le = pos.le
    prior_cache: dict = {}
    groups: dict[tuple[int, ...], list[int]] = {}
    for i in range(K):
        groups.setdefault(
            _context_key(ens.intended[i], t, prior.context_order), []
        ).append(i)

    # one keyed stream per step; particle i consumes element i
    u_step = _rng(ens.seed, _NS_STEP, t).random(K)
    new_word = np.zeros(K, dtype=np.int64)
    new_act = np.zeros(K, dtype=np.int64)
    ratio = np.zeros(K)
    d_prior = np.zeros(K)
    d_emit = np.zeros(K)
    d_act = np.zeros(K)
    for key, members in groups.items():
        vec = _prior_vector(prior_cache, prior, ens.vocab_words, key)
        cand_lp = vec[pos.word_ids]
        with np.errstate(over="ignore"):
            cand_p = np.exp(cand_lp)
        S = float(cand_p.sum())
        if S <= 0.0 or not math.isfinite(S):
            continue  # zero-weight group; arrays stay at defaults
        cum = np.cumsum(cand_p / S)
        cum[-1] = 1.0
        ms = np.asarray(members, dtype=np.int64)
        c = np.minimum(
            np.searchsorted(cum, u_step[ms], side="right"), len(cum) - 1
        )
        new_word[ms] = pos.word_ids[c]
        new_act[ms] = pos.action_ids[c]
        ratio[ms] = S * np.exp(le[c])
        d_prior[ms] = cand_lp[c]
        d_emit[ms] = pos.log_emit[c]
        d_act[ms] = pos.log_act[c]

    incremental = K * ens.weights * ratio
    predictive = float(incremental.mean())
    if predictive <= 0.0:
        raise InferenceDegenerateError(t, observed)

    ens.intended = np.column_stack([ens.intended, new_word])
    ens.actions = np.column_stack([ens.actions, new_act])
    ens.log_prior = ens.log_prior + d_prior
    ens.log_lik = ens.log_lik + d_emit
    ens.log_act = ens.log_act + d_act
    ens.incremental = incremental
    unnorm = ens.weights * ratio
    ens.weights = unnorm / unnorm.sum()
    ens.positions.append(pos)
    ens.observed.append(observed)
    ens.history.append(predictive)
    ens.step = t + 1

    ess = 1.0 / float((ens.weights ** 2).sum())
    if ess < ens.config.resample_ess_fraction * K:
        _systematic_resample(ens, t)
    return ens, predictive


def _systematic_resample(ens: Ensemble, t: int) -> None:
    K = ens.K
    u0 = _rng(ens.seed, _NS_RESAMPLE, t).random()
    marks = (u0 + np.arange(K)) / K
    cum = np.cumsum(ens.weights)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, marks, side="left")
    ens.intended = ens.intended[idx]
    ens.actions = ens.actions[idx]
    ens.log_prior = ens.log_prior[idx]
    ens.log_lik = ens.log_lik[idx]
    ens.log_act = ens.log_act[idx]
    ens.incremental = ens.incremental[idx]
    ens.weights = np.full(K, 1.0 / K)


def surprisal_trace(history: Sequence[float]) -> list[float]:
    """Per-word surprisal in bits from the recorded predictive probabilities."""
    return [-math.log(p) / LOG2 for p in history]


def conditional_trigger(
    surprisal_bits: float, unigram_surprisal_bits: float, threshold: float
) -> bool:
    """True when context surprisal exceeds unigram surprisal by strictly more
    than the threshold (all in bits)."""
    return (surprisal_bits - unigram_surprisal_bits) > threshold


def _rejuv_sweep(
    ens: Ensemble,
    prior: PriorModel,
    noise: NoiseModel,
    positions: Sequence[int],
    p_move: float,
    ns: int,
    sweep_idx: int,
    attempted: np.ndarray,
    accepted: np.ndarray,
) -> None:
    """One left-to-right Metropolis-Hastings sweep over the given positions.

    Proposals reuse the step proposal (prior-weighted over the position's
    candidates given the particle's current earlier words); the acceptance
    ratio re-scores the language-model terms whose context windows contain
    the changed position.  Weights are untouched: the kernel leaves the
    target density invariant.
    """
    K = ens.K
    T = ens.step
    order = prior.context_order
    prior_cache: dict = {}
    for t in positions:
        pos = ens.positions[t]
        cand_words = pos.word_ids
        le = pos.le
        if order is None:
            window = range(t + 1, T)
        else:
            window = range(t + 1, min(t + order - 1, T - 1) + 1)

        groups: dict[tuple[int, ...], list[int]] = {}
        for i in range(K):
            groups.setdefault(
                _context_key(ens.intended[i], t, order), []
            ).append(i)

        # one keyed stream per (sweep, position); particle i consumes the
        # i-th coin / proposal / acceptance uniforms
        g = _rng(ens.seed, ns, sweep_idx, t)
        u_coin = g.random(K)
        u_pick = g.random(K)
        u_acc = g.random(K)

        for key, members in groups.items():
            vec = _prior_vector(prior_cache, prior, ens.vocab_words, key)
            cand_lp = vec[cand_words]
            with np.errstate(over="ignore"):
                cand_p = np.exp(cand_lp)
            S = float(cand_p.sum())
            if S <= 0.0 or not math.isfinite(S):
                continue
            q = cand_p / S
            cum = np.cumsum(q)
            cum[-1] = 1.0
            with np.errstate(divide="ignore"):
                logq = np.log(q)
            ms = np.asarray(members, dtype=np.int64)
            moving = ms[u_coin[ms] < p_move]
            attempted[t] += len(moving)
            if len(moving) == 0:
                continue
            c_new = np.minimum(
                np.searchsorted(cum, u_pick[moving], side="right"), len(cum) - 1
            )
            c_cur = pos.pair_map[
                ens.intended[moving, t], ens.actions[moving, t]
            ]
            same = c_new == c_cur
            accepted[t] += int(same.sum())
            with np.errstate(invalid="ignore"):
                base = (le[c_new] - le[c_cur]) \
                    + (logq[c_cur] - logq[c_new]) \
                    + (cand_lp[c_new] - cand_lp[c_cur])
            for j in np.nonzero(~same)[0]:
                i = int(moving[j])
                cn, cc = int(c_new[j]), int(c_cur[j])
                delta = float(base[j])
                dp_prior = cand_lp[cn] - cand_lp[cc]
                dp_down = 0.0
                if math.isfinite(delta):
                    w_new = int(cand_words[cn])
                    for s in window:
                        ctx_old = _context_key(ens.intended[i], s, order)
                        rel = t - (s - len(ctx_old))
                        ctx_new = ctx_old[:rel] + (w_new,) + ctx_old[rel + 1:]
                        w_s = int(ens.intended[i, s])
                        lp_new = _prior_vector(
                            prior_cache, prior, ens.vocab_words, ctx_new)[w_s]
                        lp_old = _prior_vector(
                            prior_cache, prior, ens.vocab_words, ctx_old)[w_s]
                        dp_down += lp_new - lp_old
                        if not math.isfinite(dp_down):
                            break
                    delta += dp_down
                if math.isnan(delta):
                    continue
                if delta >= 0.0 or math.log(max(u_acc[i], 1e-300)) < delta:
                    accepted[t] += 1
                    ens.intended[i, t] = cand_words[cn]
                    ens.actions[i, t] = pos.action_ids[cn]
                    ens.log_prior[i] += dp_prior + dp_down
                    ens.log_lik[i] += pos.log_emit[cn] - pos.log_emit[cc]
                    ens.log_act[i] += pos.log_act[cn] - pos.log_act[cc]


def second_pass_rejuvenate(
    ens: Ensemble, prior: PriorModel, noise: NoiseModel
) -> tuple[Ensemble, list[float]]:
    """Run the configured number of full-sentence rejuvenation sweeps after
    the last word; returns per-word acceptance rates pooled over particles
    and iterations (0.0 where nothing was attempted)."""
    T = ens.step
    attempted = np.zeros(T)
    accepted = np.zeros(T)
    cfg = ens.config
    for r in range(cfg.second_pass_rejuv_iters):
        _rejuv_sweep(
            ens, prior, noise, range(T), cfg.second_pass_rejuv_p,
            _NS_SECOND_PASS, r, attempted, accepted,
        )
    ens.rejuv_attempted = attempted
    ens.rejuv_accepted = accepted
    rates = [
        float(a / n) if n > 0 else 0.0 for a, n in zip(accepted, attempted)
    ]
    return ens, rates


@dataclass(frozen=True)
class PosteriorSummary:
    observed: tuple[str, ...]
    surprisal_trace: tuple[float, ...]
    action_posterior: np.ndarray       # (T, 4), rows sum to 1
    sentence_posterior: tuple[tuple[str, float], ...]
    rejuv_acceptance: tuple[float, ...]
    error_probability: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "observed": list(self.observed),
            "surprisal_trace": list(self.surprisal_trace),
            "action_posterior": [list(map(float, row)) for row in self.action_posterior],
            "sentence_posterior": [
                {"sentence": s, "prob": p} for s, p in self.sentence_posterior
            ],
            "rejuv_acceptance": list(self.rejuv_acceptance),
            "error_probability": list(self.error_probability),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def summarize(
    ens: Ensemble, rejuv_rates: Sequence[float] | None = None, top_n: int | None = 50
) -> PosteriorSummary:
    """Posterior summaries from the final weighted ensemble."""
    T = ens.step
    W = ens.weights / ens.weights.sum()
    ap = np.zeros((T, len(ACTIONS)))
    for t in range(T):
        for a in ACTIONS:
            ap[t, int(a)] = float(W[ens.actions[:, t] == int(a)].sum())
    sent_mass: dict[tuple[int, ...], float] = {}
    for i in range(ens.K):
        key = tuple(int(x) for x in ens.intended[i])
        sent_mass[key] = sent_mass.get(key, 0.0) + float(W[i])
    ranked = sorted(sent_mass.items(), key=lambda kv: (-kv[1], kv[0]))
    if top_n is not None:
        ranked = ranked[:top_n]
    sentences = tuple(
        (" ".join(ens.vocab_words[j] for j in key), mass) for key, mass in ranked
    )
    if rejuv_rates is None:
        rejuv_rates = [0.0] * T
    return PosteriorSummary(
        observed=tuple(ens.observed),
        surprisal_trace=tuple(surprisal_trace(ens.history)),
        action_posterior=ap,
        sentence_posterior=sentences,
        rejuv_acceptance=tuple(float(r) for r in rejuv_rates),
        error_probability=tuple(float(1.0 - ap[t, int(Action.NORMAL)]) for t in range(T)),
    )


def run_inference(
    tokens: Sequence[str],
    prior: PriorModel,
    noise: NoiseModel,
    config: InferenceConfig = InferenceConfig(),
    seed: int = 0,
    top_n: int | None = 50,
) -> PosteriorSummary:
    """Full pipeline for one sentence: steps, optional conditional sweeps,
    second-pass rejuvenation, and the posterior summary."""
    ens = init_ensemble(noise, config, seed)
    for t, tok in enumerate(tokens):
        _, pred = step(ens, tok, prior, noise)
        if config.conditional_rejuv and tok in noise.vocab:
            s_bits = -math.log(pred) / LOG2
            u_bits = -prior.unigram_logprob(tok) / LOG2
            if conditional_trigger(s_bits, u_bits, config.conditional_threshold):
                att = np.zeros(ens.step)
                acc = np.zeros(ens.step)
                _rejuv_sweep(
                    ens, prior, noise, range(ens.step),
                    config.second_pass_rejuv_p, _NS_CONDITIONAL, t, att, acc,
                )
    rates = None
    if config.second_pass_rejuv:
        _, rates = second_pass_rejuvenate(ens, prior, noise)
    return summarize(ens, rates, top_n=top_n)


def _logsumexp(values: np.ndarray) -> float:
    m = values.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(values - m).sum()))


def enumerate_exact(
    tokens: Sequence[str],
    prior: PriorModel,
    noise: NoiseModel,
    top_m: int | None = None,
    budget: int = 10 ** 6,
    top_n: int | None = None,
) -> PosteriorSummary:
    """Exact posterior over (intended sentence, action sequence) pairs by
    exhaustive summation over the per-position candidate sets.

    Candidate sets match the sampler's proposal support (same top_m), so the
    SMC posterior converges to exactly this distribution.
    """
    if top_m is None:
        top_m = len(noise.vocab.words)
    positions = [
        _position_candidates(tok, noise, top_m) for tok in tokens
    ]
    n_assignments = 1
    for pos in positions:
        n_assignments *= max(len(set(pos.word_ids.tolist())), 1)
        if n_assignments > budget:
            raise OracleInfeasibleError(
                f"candidate-set product exceeds budget {budget}"
            )
    T = len(tokens)
    for t, pos in enumerate(positions):
        if len(pos.word_ids) == 0:
            raise InferenceDegenerateError(t, tokens[t])

    # per-position word-level emission marginals m_t(x) = logsumexp_a le
    word_margs: list[dict[int, float]] = []
    word_pair_le: list[dict[int, list[tuple[int, float]]]] = []
    for pos in positions:
        margs: dict[int, float] = {}
        pairs: dict[int, list[tuple[int, float]]] = {}
        le = pos.le
        for c, w in enumerate(pos.word_ids):
            w = int(w)
            pairs.setdefault(w, []).append((int(pos.action_ids[c]), float(le[c])))
        for w, plist in pairs.items():
            margs[w] = _logsumexp(np.array([v for _, v in plist]))
        word_margs.append(margs)
        word_pair_le.append(pairs)

    vocab_words = noise.vocab.words
    prior_cache: dict = {}
    order = prior.context_order

    prefixes: dict[tuple[int, ...], float] = {(): 0.0}
    log_z = [0.0]  # log marginal of the observed prefix, log Z_0 = 0
    for t in range(T):
        nxt: dict[tuple[int, ...], float] = {}
        for pfx, lw in prefixes.items():
            key = pfx if order is None else pfx[max(0, len(pfx) - (order - 1)):]
            vec = _prior_vector(prior_cache, prior, vocab_words, key)
            for w, m in word_margs[t].items():
                lp = float(vec[w])
                total = lw + lp + m
                if total == NEG_INF or math.isnan(total):
                    continue
                nxt[pfx + (w,)] = float(
                    np.logaddexp(nxt.get(pfx + (w,), NEG_INF), total)
                )
        if not nxt:
            raise InferenceDegenerateError(t, tokens[t])
        prefixes = nxt
        log_z.append(_logsumexp(np.array(list(prefixes.values()))))

    log_z_final = log_z[-1]
    predictive = [math.exp(log_z[t + 1] - log_z[t]) for t in range(T)]

    # posterior over intended sentences
    sent_post = {
        pfx: math.exp(lw - log_z_final) for pfx, lw in prefixes.items()
    }

    # per-position action posterior via the word marginals
    ap = np.zeros((T, len(ACTIONS)))
    for t in range(T):
        word_post: dict[int, float] = {}
        for pfx, p in sent_post.items():
            word_post[pfx[t]] = word_post.get(pfx[t], 0.0) + p
        for w, pw in word_post.items():
            m = word_margs[t][w]
            for a, le_val in word_pair_le[t][w]:
                ap[t, a] += pw * math.exp(le_val - m)

    ranked = sorted(sent_post.items(), key=lambda kv: (-kv[1], kv[0]))
    if top_n is not None:
        ranked = ranked[:top_n]
    sentences = tuple(
        (" ".join(vocab_words[j] for j in key), mass) for key, mass in ranked
    )
    return PosteriorSummary(
        observed=tuple(tokens),
        surprisal_trace=tuple(-math.log(p) / LOG2 for p in predictive),
        action_posterior=ap,
        sentence_posterior=sentences,
        rejuv_acceptance=tuple(0.0 for _ in range(T)),
        error_probability=tuple(
            float(1.0 - ap[t, int(Action.NORMAL)]) for t in range(T)
        ),
    )


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two probability vectors."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
