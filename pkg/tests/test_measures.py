import json

import numpy as np
import pandas as pd
import pytest

from noisyreader.measures import (
    Box,
    FixationEvent,
    MeasureConfig,
    ReadingDataset,
    TrialLog,
    WordMeasures,
    aggregate,
    apply_exclusions,
    build_dataset,
    compute_measures,
    detect_fixations,
    response_summary,
)

from conftest import FIXTURE_DIR

BOXES = (Box(0, 100, 0, 20), Box(110, 210, 0, 20),
         Box(220, 320, 0, 20), Box(330, 430, 0, 20))
BOX_CENTERS = (50, 150, 250, 380)


def trial_from_dwells(dwells, participant="p", trial="t", period=50, **kw):
    """Build a TrialLog from (word_index_or_None_or_'beyond', dwell_ms)."""
    samples = []
    t = 0
    for target, ms in dwells:
        if target == "beyond":
            x = 450.0
        elif target is None:
            x = 105.0  # between word boxes
        else:
            x = float(BOX_CENTERS[target])
        for _ in range(ms // period):
            samples.append((t, x, 10.0))
            t += period
    defaults = dict(item="i", condition="Plausible", variant=1,
                    response="OK", is_filler=False)
    defaults.update(kw)
    return TrialLog(participant=participant, trial=trial,
                    samples=tuple(samples), word_boxes=BOXES, **defaults)


class TestDetectFixations:
    def test_two_dwells(self):
        tr = trial_from_dwells([(0, 300), (1, 400)])
        fx = detect_fixations(tr)
        assert [(f.word, f.duration, f.source) for f in fx] == \
            [(0, 300, None), (1, 400, 0)]

    def test_short_excursion_dropped(self):
        tr = trial_from_dwells([(0, 200), (2, 50), (0, 200)])
        fx = detect_fixations(tr, MeasureConfig(min_dwell_ms=100))
        # the 50 ms excursion yields no fixation and the two dwells merge
        assert len(fx) == 1 and fx[0].word == 0

    def test_offtext_run_between_words(self):
        tr = trial_from_dwells([(0, 200), (None, 150), (1, 200)])
        fx = detect_fixations(tr)
        assert [(f.word, f.source) for f in fx] == [(0, None), (1, 0)]

    def test_beyond_end_breaks_merge_and_sets_source(self):
        tr = trial_from_dwells([(3, 200), ("beyond", 150), (3, 200)])
        fx = detect_fixations(tr)
        assert [(f.word, f.source) for f in fx] == [(3, None), (3, 4)]

    def test_no_samples_in_any_box(self):
        samples = tuple((t, 106.0, 10.0) for t in range(0, 500, 50))
        tr = TrialLog("p", "t", "i", "Plausible", 1, samples, BOXES)
        assert detect_fixations(tr) == []

    def test_timestamps_must_increase(self):
        with pytest.raises(ValueError):
            TrialLog("p", "t", "i", "Plausible", 1,
                     ((0, 1, 1), (0, 2, 2)), BOXES)


class TestComputeMeasures:
    def test_spec_example_sequence(self):
        fx = [FixationEvent(0, 0, 200, None), FixationEvent(1, 200, 500, 0),
              FixationEvent(0, 500, 650, 1), FixationEvent(2, 650, 900, 0)]
        w0, w1, w2 = compute_measures(fx, 3)
        assert (w0.gaze_ms, w0.total_ms, w0.reg_in) == (200, 350, True)
        assert w0.reread_ms == 150
        assert (w1.gaze_ms, w1.first_pass_reg_out, w1.go_past_ms) == (300, True, 450)
        assert w1.right_bounded_ms == 300
        assert (w2.gaze_ms, w2.total_ms) == (250, 250)

    def test_monotone_pass_collapses_measures(self):
        fx = [FixationEvent(w, w * 100, w * 100 + 100, w - 1 if w else None)
              for w in range(4)]
        for w, m in enumerate(compute_measures(fx, 4)):
            assert m.first_fixation_ms == m.gaze_ms == m.go_past_ms \
                == m.right_bounded_ms == m.total_ms == 100
            assert m.reread_ms == 0
            assert m.first_pass_fixated
            assert not m.first_pass_reg_out and not m.reg_in

    def test_unfixated_word_zeroes(self):
        fx = [FixationEvent(0, 0, 100, None), FixationEvent(2, 100, 200, 0)]
        m = compute_measures(fx, 3)[1]
        assert m == WordMeasures()

    def test_skipped_then_visited_counts_reg_in_not_first_pass(self):
        fx = [FixationEvent(0, 0, 100, None), FixationEvent(2, 100, 300, 0),
              FixationEvent(1, 300, 500, 2)]
        m = compute_measures(fx, 3)[1]
        assert not m.first_pass_fixated
        assert m.gaze_ms == 0 and m.first_fixation_ms == 0
        assert m.total_ms == 200 and m.reread_ms == 200
        assert m.reg_in

    def test_first_word_never_regresses_out(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            words = rng.integers(0, 5, size=rng.integers(1, 12))
            t = 0
            fx = []
            for w in words:
                fx.append(FixationEvent(int(w), t, t + 100,
                                        fx[-1].word if fx else None))
                t += 100
            assert not compute_measures(fx, 5)[0].first_pass_reg_out

    def test_ordering_chain_random_trials(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            n_words = int(rng.integers(2, 7))
            fx = []
            t = 0
            for _ in range(int(rng.integers(0, 15))):
                w = int(rng.integers(0, n_words))
                d = int(rng.integers(1, 8)) * 50
                src = fx[-1].word if fx else None
                if fx and fx[-1].word == w:
                    continue
                fx.append(FixationEvent(w, t, t + d, src))
                t += d
            for m in compute_measures(fx, n_words):
                assert 0 <= m.first_fixation_ms <= m.gaze_ms \
                    <= m.right_bounded_ms <= m.go_past_ms
                assert m.gaze_ms <= m.total_ms
                assert m.reread_ms == m.total_ms - m.gaze_ms >= 0

    def test_total_bounded_by_fixation_time(self):
        tr = trial_from_dwells([(0, 300), (None, 200), (1, 300), (2, 150)])
        fx = detect_fixations(tr)
        ms = compute_measures(fx, 4)
        assert sum(m.total_ms for m in ms) <= sum(f.duration for f in fx)


class TestGoldenFixture:
    def test_golden_measures(self):
        samples = pd.read_csv(FIXTURE_DIR / "traj_fixture.csv")
        boxes = pd.read_csv(FIXTURE_DIR / "boxes_fixture.csv")
        expected = pd.read_csv(FIXTURE_DIR / "expected_measures.csv")
        for trial, grp in samples.groupby("trial"):
            bx = boxes[boxes["trial"] == trial].sort_values("word_index")
            tr = TrialLog(
                participant="p1", trial=str(trial), item="i",
                condition="Plausible", variant=1,
                samples=tuple((int(r.timestamp_ms), float(r.x), float(r.y))
                              for r in grp.itertuples()),
                word_boxes=tuple(Box(r.x_min, r.x_max, r.y_min, r.y_max)
                                 for r in bx.itertuples()),
            )
            got = compute_measures(detect_fixations(tr), len(tr.word_boxes))
            exp = expected[expected["trial"] == trial].sort_values("word_index")
            for m, row in zip(got, exp.itertuples()):
                for col in ("first_fixation_ms", "gaze_ms", "go_past_ms",
                            "right_bounded_ms", "total_ms", "reread_ms"):
                    assert getattr(m, col) == getattr(row, col), (trial, row.word_index, col)
                for col in ("first_pass_fixated", "first_pass_reg_out", "reg_in"):
                    assert getattr(m, col) == bool(getattr(row, col)), (trial, row.word_index, col)


def exclusion_fixture():
    """Dataset triggering each exclusion rule on exactly one target."""
    trials = []
    # participant "bad" flags errors on 9 of 36 fillers (25% > 20%)
    for i in range(36):
        resp = "Error" if i < 9 else "OK"
        trials.append(trial_from_dwells(
            [(0, 200), (1, 200), (2, 200), (3, 200)],
            participant="bad", trial=f"f{i}", item=f"fill{i}",
            is_filler=True, response=resp))
    # participant "ok" flags 7 of 36 (19.4% <= 20%)
    for i in range(36):
        resp = "Error" if i < 7 else "OK"
        trials.append(trial_from_dwells(
            [(0, 200), (1, 200), (2, 200), (3, 200)],
            participant="ok", trial=f"f{i}", item=f"fill{i}",
            is_filler=True, response=resp))
    # sparse trial: 1 of 4 words fixated (25%... need < 20%: 0 of 4)
    trials.append(TrialLog(
        participant="ok", trial="sparse", item="item9", condition="Plausible",
        variant=1,
        samples=tuple((t, 106.0, 10.0) for t in range(0, 400, 50)),
        word_boxes=BOXES, response="OK", is_filler=False))
    # gaze outlier: many normal trials plus one extreme gaze on item1 word 0
    for i in range(10):
        trials.append(trial_from_dwells(
            [(0, 200), (1, 200), (2, 200), (3, 200)],
            participant="ok", trial=f"n{i}", item="item1"))
    trials.append(trial_from_dwells(
        [(0, 4000), (1, 200), (2, 200), (3, 200)],
        participant="ok", trial="outlier", item="item1"))
    return build_dataset(trials)


class TestExclusions:
    def test_rules_fire_exactly(self):
        ds = exclusion_fixture()
        out, report = apply_exclusions(ds)
        assert report["participants_excluded"] == ["bad"]
        assert "bad" not in set(out.words["participant"])
        assert "bad" not in set(out.trials["participant"])
        # the sparse trial is gone
        assert "sparse" not in set(out.trials["trial"])
        assert report["n_trials_excluded"] == 1
        # exactly the one outlier word record dropped
        assert report["n_word_outliers_excluded"] == 1
        outlier_rows = out.words[
            (out.words["trial"] == "outlier") & (out.words["word_index"] == 0)
        ]
        assert len(outlier_rows) == 0

    def test_outlier_threshold_matches_independent_stats(self):
        ds = exclusion_fixture()
        _, report = apply_exclusions(ds)
        gazes = [200.0] * 10 + [4000.0]
        mean, sd = np.mean(gazes), np.std(gazes)
        assert 4000 > mean + 3 * sd
        assert all(g <= mean + 3 * sd for g in gazes[:-1])
        assert report["n_word_outliers_excluded"] == 1

    def test_borderline_participant_kept(self):
        ds = exclusion_fixture()
        out, _ = apply_exclusions(ds)
        assert "ok" in set(out.trials["participant"])

    def test_idempotent(self):
        ds = exclusion_fixture()
        once, _ = apply_exclusions(ds)
        twice, report2 = apply_exclusions(once)
        pd.testing.assert_frame_equal(
            once.words.reset_index(drop=True), twice.words.reset_index(drop=True))
        pd.testing.assert_frame_equal(
            once.trials.reset_index(drop=True), twice.trials.reset_index(drop=True))
        assert report2["n_word_outliers_excluded"] == 0
        assert report2["n_trials_excluded"] == 0


def independent_bootstrap(frame, measure, cells, n_boot, seed):
    """Duplicate implementation of the participant bootstrap used as the
    oracle for aggregate()."""
    participants = sorted(frame["participant"].unique())
    P = len(participants)
    sums = np.zeros((P, len(cells)))
    counts = np.zeros((P, len(cells)))
    for (p, cond, region), grp in frame.groupby(
            ["participant", "condition", "region"]):
        i = participants.index(p)
        j = cells.index((cond, region))
        sums[i, j] = grp[measure].sum()
        counts[i, j] = len(grp)
    rng = np.random.default_rng(seed)
    boot = np.full((n_boot, len(cells)), np.nan)
    for b in range(n_boot):
        idx = rng.integers(0, P, size=P)
        mult = np.bincount(idx, minlength=P).astype(float)
        s, c = mult @ sums, mult @ counts
        with np.errstate(invalid="ignore"):
            boot[b] = np.where(c > 0, s / c, np.nan)
    out = {}
    for j, cell in enumerate(cells):
        col = boot[:, j]
        col = col[~np.isnan(col)]
        out[cell] = tuple(np.percentile(col, [2.5, 97.5]))
    return out


def small_words_frame(values_by_participant):
    rows = []
    for p, values in values_by_participant.items():
        for i, v in enumerate(values):
            rows.append({
                "participant": p, "trial": f"{p}-t", "item": "item1",
                "condition": "Plausible", "variant": 1, "is_filler": False,
                "word_index": i, "first_fixation_ms": v, "gaze_ms": v,
                "go_past_ms": v, "right_bounded_ms": v, "total_ms": v,
                "reread_ms": 0, "first_pass_fixated": True,
                "first_pass_reg_out": False, "reg_in": False,
            })
    words = pd.DataFrame(rows)
    trials = words.drop_duplicates(["participant", "trial"])[
        ["participant", "trial", "item", "condition", "variant", "is_filler"]
    ].copy()
    trials["response"] = "OK"
    trials["n_words"] = 4
    trials["n_fixated"] = 4
    return ReadingDataset(words=words, trials=trials)


REGION_MAPS = {("item1", "Plausible", 1): ("Preamble", "CriticalWord",
                                           "Intervening", "Predicate")}


class TestAggregate:
    def test_degenerate_bootstrap(self):
        ds = small_words_frame({"p1": [100, 100, 100, 100],
                                "p2": [100, 100, 100, 100]})
        table = aggregate(ds, REGION_MAPS, "gaze_ms", n_boot=200, seed=0)
        for row in table.itertuples():
            assert row.mean == 100 and row.ci_low == 100 and row.ci_high == 100

    def test_grand_mean_over_participants(self):
        ds = small_words_frame({"p1": [100, 100, 100, 100],
                                "p2": [200, 200, 200, 200]})
        table = aggregate(ds, REGION_MAPS, "gaze_ms", n_boot=100, seed=0)
        assert set(table["mean"]) == {150.0}

    def test_matches_independent_bootstrap(self):
        rng = np.random.default_rng(3)
        ds = small_words_frame({
            f"p{i}": list(rng.integers(50, 500, size=4)) for i in range(6)
        })
        table = aggregate(ds, REGION_MAPS, "gaze_ms", n_boot=500, seed=11)
        frame = ds.words.copy()
        frame["region"] = frame["word_index"].map(
            dict(enumerate(REGION_MAPS[("item1", "Plausible", 1)])))
        cells = sorted(
            frame.groupby(["condition", "region"]).groups)
        oracle = independent_bootstrap(frame, "gaze_ms", cells, 500, 11)
        for row in table.itertuples():
            lo, hi = oracle[(row.condition, row.region)]
            assert row.ci_low == pytest.approx(lo, abs=1e-9)
            assert row.ci_high == pytest.approx(hi, abs=1e-9)

    def test_unknown_measure_rejected(self):
        ds = small_words_frame({"p1": [1, 2, 3, 4]})
        with pytest.raises(ValueError):
            aggregate(ds, REGION_MAPS, "nonsense")


class TestResponseSummary:
    def test_all_ok(self):
        ds = small_words_frame({"p1": [1, 2, 3, 4]})
        table = response_summary(ds)
        props = dict(zip(table["response"], table["proportion"]))
        assert props == {"OK": 1.0, "Error": 0.0, "Unsure": 0.0}

    def test_constructed_counts(self):
        trials = pd.DataFrame([
            {"participant": f"p{i}", "trial": f"t{i}", "item": "x",
             "condition": "Typo", "variant": 1, "is_filler": False,
             "response": r, "n_words": 1, "n_fixated": 1}
            for i, r in enumerate(["OK"] * 10 + ["Error"] * 5 + ["Unsure"] * 5)
        ])
        ds = ReadingDataset(words=pd.DataFrame(), trials=trials)
        table = response_summary(ds)
        props = dict(zip(table["response"], table["proportion"]))
        assert props == {"OK": 0.5, "Error": 0.25, "Unsure": 0.25}
        assert table.groupby("condition")["proportion"].sum().eq(1.0).all()


class TestAggregateEmptyCells:
    def test_design_cell_without_data_gets_null_row(self):
        ds = small_words_frame({"p1": [100, 100, 100, 100]})
        maps = dict(REGION_MAPS)
        maps[("item2", "NeighborGP", 1)] = ("Preamble", "CriticalWord",
                                            "Intervening", "Predicate")
        table = aggregate(ds, maps, "gaze_ms", n_boot=50, seed=0)
        empty = table[(table["condition"] == "NeighborGP")
                      & (table["region"] == "Predicate")]
        assert len(empty) == 1
        row = empty.iloc[0]
        assert row["n"] == 0
        assert np.isnan(row["mean"]) and np.isnan(row["ci_low"])


class TestBoxValidation:
    def test_overlapping_boxes_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            TrialLog("p", "t", "i", "Plausible", 1, ((0, 1.0, 1.0),),
                     (Box(0, 100, 0, 20), Box(50, 150, 0, 20)))

    def test_shared_edge_allowed(self):
        TrialLog("p", "t", "i", "Plausible", 1, ((0, 1.0, 1.0),),
                 (Box(0, 100, 0, 20), Box(100, 200, 0, 20)))

    def test_multi_line_boxes_allowed(self):
        TrialLog("p", "t", "i", "Plausible", 1, ((0, 1.0, 1.0),),
                 (Box(0, 100, 0, 20), Box(0, 100, 30, 50)))
