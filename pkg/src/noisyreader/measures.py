"""Mouse-trajectory post-processing: fixations, word-level reading measures,
exclusion rules, and condition/region aggregation.

A sample belongs to the word whose box contains it; maximal same-word sample
runs of at least ``min_dwell_ms`` become fixations.  Measures follow the
standard first-pass definitions; a word first entered from the right (after
a later word was fixated) has no first pass and its arrival counts as a
regression in.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import pandas as pd

MEASURE_COLUMNS = (
    "first_fixation_ms", "gaze_ms", "go_past_ms", "right_bounded_ms",
    "total_ms", "reread_ms", "first_pass_fixated", "first_pass_reg_out",
    "reg_in",
)

RESPONSES = ("OK", "Error", "Unsure")


@dataclass(frozen=True)
class Box:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def contains(self, x: float, y: float) -> bool:
        return (self.x_min <= x <= self.x_max) and (self.y_min <= y <= self.y_max)


@dataclass(frozen=True)
class MeasureConfig:
    min_dwell_ms: int = 100


@dataclass(frozen=True)
class TrialLog:
    participant: str
    trial: str
    item: str
    condition: str
    variant: int
    samples: tuple[tuple[int, float, float], ...]   # (t_ms, x, y)
    word_boxes: tuple[Box, ...]
    response: str = "OK"
    is_filler: bool = False

    def __post_init__(self):
        times = [t for t, _, _ in self.samples]
        if any(b >= a for a, b in zip(times[1:], times)):
            raise ValueError("sample timestamps must be strictly increasing")
        boxes = self.word_boxes
        for i, a in enumerate(boxes):
            for b in boxes[i + 1:]:
                # shared edges are fine; interior overlap is not
                if (min(a.x_max, b.x_max) > max(a.x_min, b.x_min)
                        and min(a.y_max, b.y_max) > max(a.y_min, b.y_min)):
                    raise ValueError(f"word boxes overlap: {a} and {b}")


@dataclass(frozen=True)
class FixationEvent:
    """A dwell on one word.  ``source`` is the word of the previous fixation,
    ``None`` for the first, or ``word_count`` when the mouse re-entered the
    text from beyond the end of the sentence."""

    word: int
    onset: int
    offset: int
    source: int | None

    @property
    def duration(self) -> int:
        return self.offset - self.onset


@dataclass(frozen=True)
class WordMeasures:
    first_fixation_ms: int = 0
    gaze_ms: int = 0
    go_past_ms: int = 0
    right_bounded_ms: int = 0
    total_ms: int = 0
    reread_ms: int = 0
    first_pass_fixated: bool = False
    first_pass_reg_out: bool = False
    reg_in: bool = False


def _beyond_end(x: float, y: float, boxes: Sequence[Box]) -> bool:
    """True when the position lies past the last word in reading order."""
    last = boxes[-1]
    if y > last.y_max:
        return True
    return y >= last.y_min and x > last.x_max


def detect_fixations(trial: TrialLog, cfg: MeasureConfig = MeasureConfig()) -> list[FixationEvent]:
    """Collapse the sample stream into word fixations.

    Each sample covers the interval to the next sample (the final sample
    covers one median inter-sample gap).  Consecutive fixations on the same
    word are merged unless an above-threshold excursion beyond the sentence
    end intervened; such an excursion also marks the next fixation's source
    as ``word_count``.
    """
    if not trial.samples:
        return []
    times = [t for t, _, _ in trial.samples]
    gaps = [b - a for a, b in zip(times, times[1:])]
    tail = statistics.median_low(gaps) if gaps else 0

    def word_at(x: float, y: float) -> int | None:
        for w, box in enumerate(trial.word_boxes):
            if box.contains(x, y):
                return w
        return None

    # label each sample: word index, "beyond", or None (other off-text)
    labels: list[int | str | None] = []
    coverage: list[int] = []
    for i, (t, x, y) in enumerate(trial.samples):
        w = word_at(x, y)
        if w is None and _beyond_end(x, y, trial.word_boxes):
            labels.append("beyond")
        else:
            labels.append(w)
        coverage.append(gaps[i] if i < len(gaps) else tail)

    # maximal same-label runs
    runs: list[tuple[int | str | None, int, int]] = []  # (label, onset, dur)
    i = 0
    while i < len(labels):
        j = i
        dur = 0
        while j < len(labels) and labels[j] == labels[i]:
            dur += coverage[j]
            j += 1
        runs.append((labels[i], times[i], dur))
        i = j

    word_count = len(trial.word_boxes)
    fixations: list[FixationEvent] = []
    pending_beyond = False
    for label, onset, dur in runs:
        if dur < cfg.min_dwell_ms:
            continue
        if label == "beyond":
            pending_beyond = True
            continue
        if label is None:
            continue
        w = int(label)
        if fixations and fixations[-1].word == w and not pending_beyond:
            prev = fixations[-1]
            fixations[-1] = replace(prev, offset=onset + dur)
            continue
        source: int | None
        if pending_beyond:
            source = word_count
        elif fixations:
            source = fixations[-1].word
        else:
            source = None
        fixations.append(FixationEvent(w, onset, onset + dur, source))
        pending_beyond = False
    return fixations


def compute_measures(fixations: Sequence[FixationEvent], word_count: int) -> list[WordMeasures]:
    """Word-level reading measures from a fixation sequence."""
    durs = [f.duration for f in fixations]
    out: list[WordMeasures] = []
    for w in range(word_count):
        on_w = [k for k, f in enumerate(fixations) if f.word == w]
        if not on_w:
            out.append(WordMeasures())
            continue
        total = sum(durs[k] for k in on_w)
        first_ix = on_w[0]
        first_pass_ok = all(fixations[k].word <= w for k in range(first_ix))

        # first-pass run: consecutive fixations on w starting at first_ix;
        # a re-entry (source != w, e.g. from beyond the sentence end) ends it
        run_end = first_ix + 1
        while (run_end < len(fixations) and fixations[run_end].word == w
               and fixations[run_end].source == w):
            run_end += 1

        later_right = [k for k, f in enumerate(fixations) if f.word > w]
        first_right = later_right[0] if later_right else len(fixations)
        right_bounded = sum(durs[k] for k in on_w if k < first_right)

        if first_pass_ok:
            first_fix = durs[first_ix]
            gaze = sum(durs[k] for k in range(first_ix, run_end))
            go_past_end = next(
                (k for k in range(first_ix, len(fixations)) if fixations[k].word > w),
                len(fixations),
            )
            go_past = sum(durs[k] for k in range(first_ix, go_past_end))
            reg_out = run_end < len(fixations) and fixations[run_end].word < w
            reg_in_ixs = on_w[on_w.index(first_ix) + (run_end - first_ix):]
        else:
            first_fix = gaze = go_past = 0
            reg_out = False
            reg_in_ixs = on_w
        reg_in = any(
            fixations[k].source is not None and fixations[k].source > w
            for k in reg_in_ixs
        )
        out.append(WordMeasures(
            first_fixation_ms=first_fix,
            gaze_ms=gaze,
            go_past_ms=go_past,
            right_bounded_ms=right_bounded,
            total_ms=total,
            reread_ms=total - gaze,
            first_pass_fixated=first_pass_ok,
            first_pass_reg_out=reg_out,
            reg_in=reg_in,
        ))
    return out


# ---------------------------------------------------------------------------
# dataset assembly, exclusions, aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExclusionBasis:
    """Statistics frozen from the first full dataset so that re-applying the
    exclusion rules is an exact no-op (thresholds are never re-estimated
    from already-filtered data)."""

    participant_error_rate: pd.Series        # participant -> filler error rate
    trial_fixated_fraction: pd.Series        # (participant, trial) -> fraction
    gaze_thresholds: pd.Series               # (item, word_index) -> mean + 3 sd


@dataclass
class ReadingDataset:
    words: pd.DataFrame
    trials: pd.DataFrame
    exclusion_basis: ExclusionBasis | None = None


def build_dataset(trials: Sequence[TrialLog],
                  cfg: MeasureConfig = MeasureConfig()) -> ReadingDataset:
    word_rows = []
    trial_rows = []
    for tr in trials:
        fixations = detect_fixations(tr, cfg)
        measures = compute_measures(fixations, len(tr.word_boxes))
        n_fixated = sum(1 for m in measures if m.total_ms > 0)
        trial_rows.append({
            "participant": tr.participant, "trial": tr.trial,
            "item": tr.item, "condition": tr.condition, "variant": tr.variant,
            "is_filler": tr.is_filler, "response": tr.response,
            "n_words": len(tr.word_boxes), "n_fixated": n_fixated,
        })
        for w, m in enumerate(measures):
            row = {
                "participant": tr.participant, "trial": tr.trial,
                "item": tr.item, "condition": tr.condition,
                "variant": tr.variant, "is_filler": tr.is_filler,
                "word_index": w,
            }
            for col in MEASURE_COLUMNS:
                row[col] = getattr(m, col)
            word_rows.append(row)
    return ReadingDataset(
        words=pd.DataFrame(word_rows), trials=pd.DataFrame(trial_rows)
    )


def _compute_basis(ds: ReadingDataset) -> ExclusionBasis:
    trials = ds.trials
    fillers = trials[trials["is_filler"]]
    if len(fillers):
        rate = fillers.groupby("participant")["response"].apply(
            lambda s: float((s == "Error").mean())
        )
    else:
        rate = pd.Series(dtype=float)
    rate = rate.reindex(trials["participant"].unique(), fill_value=0.0)

    frac = pd.Series(
        (trials["n_fixated"] / trials["n_words"]).values,
        index=pd.MultiIndex.from_frame(trials[["participant", "trial"]]),
    )

    fixated = ds.words[ds.words["gaze_ms"] > 0]
    if len(fixated):
        grouped = fixated.groupby(["item", "word_index"])["gaze_ms"]
        thresholds = grouped.mean() + 3.0 * grouped.std(ddof=0)
    else:
        thresholds = pd.Series(dtype=float)
    return ExclusionBasis(rate, frac, thresholds)


def apply_exclusions(ds: ReadingDataset) -> tuple[ReadingDataset, dict]:
    """Apply the three exclusion rules; idempotent because rule statistics are
    frozen into the returned dataset's ``exclusion_basis``."""
    basis = ds.exclusion_basis or _compute_basis(ds)
    words, trials = ds.words, ds.trials

    flagged = set(basis.participant_error_rate[
        basis.participant_error_rate > 0.2].index)
    present = set(trials["participant"]) | set(
        words["participant"]) if len(words) else set(trials["participant"])
    bad_participants = flagged & present

    trial_keys = pd.MultiIndex.from_frame(trials[["participant", "trial"]])
    frac = basis.trial_fixated_fraction.reindex(trial_keys)
    bad_trials = set(trial_keys[(frac < 0.2).fillna(False).values])

    word_keys = pd.MultiIndex.from_frame(words[["item", "word_index"]])
    thr = basis.gaze_thresholds.reindex(word_keys).values
    with np.errstate(invalid="ignore"):
        outlier = words["gaze_ms"].values > np.where(np.isnan(thr), np.inf, thr)

    w_participant_bad = words["participant"].isin(bad_participants).values
    t_participant_bad = trials["participant"].isin(bad_participants).values
    w_trial_bad = np.array([
        (p, t) in bad_trials
        for p, t in zip(words["participant"], words["trial"])
    ])
    t_trial_bad = np.array([
        (p, t) in bad_trials
        for p, t in zip(trials["participant"], trials["trial"])
    ])

    report = {
        "participants_excluded": sorted(bad_participants),
        "n_participants_excluded": len(bad_participants),
        "n_trials_excluded": int(t_trial_bad.sum()),
        "n_word_outliers_excluded": int(outlier.sum()),
        "n_word_rows_before": len(words),
    }
    keep_words = ~(w_participant_bad | w_trial_bad | outlier)
    keep_trials = ~(t_participant_bad | t_trial_bad)
    out = ReadingDataset(
        words=words[keep_words].reset_index(drop=True),
        trials=trials[keep_trials].reset_index(drop=True),
        exclusion_basis=basis,
    )
    report["n_word_rows_after"] = len(out.words)
    return out, report


def aggregate(
    ds: ReadingDataset,
    region_maps: dict[tuple, Sequence[str]],
    measure: str,
    n_boot: int = 2000,
    seed: int = 0,
) -> pd.DataFrame:
    """Per condition x region pooled means with a percentile bootstrap CI
    over participants (B resamples, seeded)."""
    if measure not in MEASURE_COLUMNS:
        raise ValueError(f"unknown measure {measure!r}")
    # joins are by value, not dtype (CSV round-trips turn ids into ints)
    norm_maps = {
        (str(i), str(c), int(v)): rmap
        for (i, c, v), rmap in region_maps.items()
    }
    rows = []
    for _, r in ds.words.iterrows():
        key = (str(r["item"]), str(r["condition"]), int(r["variant"]))
        rmap = norm_maps.get(key)
        if rmap is None or r["word_index"] >= len(rmap):
            continue
        rows.append({
            "participant": r["participant"],
            "condition": str(r["condition"]),
            "region": rmap[int(r["word_index"])],
            "value": float(r[measure]),
        })
    frame = pd.DataFrame(rows)
    # the full design grid, so empty cells still get (n=0, null CI) rows
    design_cells = sorted({
        (cond, region)
        for (_, cond, _), rmap in norm_maps.items()
        for region in rmap
    })
    out_rows = []
    if not len(frame):
        return pd.DataFrame([
            {"condition": c, "region": r, "mean": np.nan,
             "ci_low": np.nan, "ci_high": np.nan, "n": 0}
            for c, r in design_cells
        ])
    participants = sorted(frame["participant"].unique())
    p_ix = {p: i for i, p in enumerate(participants)}
    cells = sorted(
        set(frame.groupby(["condition", "region"]).groups) | set(design_cells)
    )
    c_ix = {c: i for i, c in enumerate(cells)}
    sums = np.zeros((len(participants), len(cells)))
    counts = np.zeros((len(participants), len(cells)))
    for (p, cond, region), grp in frame.groupby(["participant", "condition", "region"]):
        sums[p_ix[p], c_ix[(cond, region)]] = grp["value"].sum()
        counts[p_ix[p], c_ix[(cond, region)]] = len(grp)

    rng = np.random.default_rng(seed)
    P = len(participants)
    boot = np.full((n_boot, len(cells)), np.nan)
    for b in range(n_boot):
        idx = rng.integers(0, P, size=P)
        mult = np.bincount(idx, minlength=P).astype(float)
        s = mult @ sums
        c = mult @ counts
        with np.errstate(invalid="ignore"):
            boot[b] = np.where(c > 0, s / c, np.nan)

    for cell in cells:
        j = c_ix[cell]
        n = int(counts[:, j].sum())
        if n == 0:
            out_rows.append({"condition": cell[0], "region": cell[1],
                             "mean": np.nan, "ci_low": np.nan,
                             "ci_high": np.nan, "n": 0})
            continue
        mean = sums[:, j].sum() / n
        col = boot[:, j]
        col = col[~np.isnan(col)]
        lo, hi = np.percentile(col, [2.5, 97.5])
        out_rows.append({"condition": cell[0], "region": cell[1],
                         "mean": float(mean), "ci_low": float(lo),
                         "ci_high": float(hi), "n": n})
    return pd.DataFrame(out_rows)


def response_summary(ds: ReadingDataset) -> pd.DataFrame:
    """Per-condition response proportions (rows sum to 1 per condition)."""
    rows = []
    for cond, grp in ds.trials.groupby("condition"):
        n = len(grp)
        for resp in RESPONSES:
            rows.append({
                "condition": cond, "response": resp,
                "proportion": float((grp["response"] == resp).sum() / n),
            })
    return pd.DataFrame(rows)
