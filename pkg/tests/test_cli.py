import json
from pathlib import Path

import pandas as pd
import pytest

from noisyreader.cli import main
from noisyreader.pmi import LookupOracle, item_queries
from noisyreader.stimuli import load_items

from conftest import DATA_DIR, FIXTURE_DIR


@pytest.fixture(scope="module")
def small_items(tmp_path_factory):
    """Three packaged items, enough for fast end-to-end runs."""
    items = json.loads((DATA_DIR / "items.json").read_text())[:3]
    path = tmp_path_factory.mktemp("items") / "items3.json"
    path.write_text(json.dumps(items))
    return path


@pytest.fixture(scope="module")
def toy_freq(tmp_path_factory):
    path = tmp_path_factory.mktemp("freq") / "freq.tsv"
    path.write_text((DATA_DIR / "wordfreq_demo.tsv").read_text())
    return path


@pytest.fixture(scope="module")
def trained_model(tmp_path_factory, small_items, toy_freq):
    """Model trained on the in-vocabulary variants of the three items."""
    from noisyreader import stimuli

    items = load_items(small_items)
    corpus_path = tmp_path_factory.mktemp("corpus") / "corpus.txt"
    lines = sorted({
        " ".join(v.model_tokens())
        for v in stimuli.expand_items(items) if v.condition != "Typo"
    })
    corpus_path.write_text("\n".join(lines) + "\n")
    model_path = tmp_path_factory.mktemp("model") / "model.json"
    rc = main([
        "train", "--items", str(small_items), "--freq", str(toy_freq),
        "--corpus", str(corpus_path), "--order", "3", "--delta", "0.1",
        "--out", str(model_path),
    ])
    assert rc == 0
    return model_path


class TestLists:
    def test_lists_cover_all_variants(self, tmp_path, small_items):
        out = tmp_path / "lists"
        rc = main(["lists", "--items", str(DATA_DIR / "items.json"),
                   "--seed", "3", "--out", str(out)])
        assert rc == 0
        lists = pd.read_csv(out / "lists.csv")
        assert len(lists) == 360
        assert lists.groupby("list").size().eq(36).all()
        combos = lists.groupby(["item", "condition", "variant"]).size()
        assert len(combos) == 360 and combos.eq(1).all()
        variants = pd.read_csv(out / "variants.csv")
        assert len(variants) == 360
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["seed"] == 3 and meta["schema_version"] == 1


class TestInfer:
    def test_runs_and_is_deterministic(self, tmp_path, small_items, toy_freq,
                                        trained_model):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "engine": {"num_particles": 16, "proposal_top_m": 5,
                       "second_pass_rejuv_iters": 1},
        }))
        args = [
            "infer", "--items", str(small_items), "--freq", str(toy_freq),
            "--prior", f"ngram:{trained_model}", "--config", str(config),
            "--seed", "11",
        ]
        out1, out2 = tmp_path / "run1", tmp_path / "run2"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2), "--jobs", "2"]) == 0
        csv1 = (out1 / "summary.csv").read_bytes()
        csv2 = (out2 / "summary.csv").read_bytes()
        assert csv1 == csv2
        frame = pd.read_csv(out1 / "summary.csv")
        assert frame["sentence_id"].nunique() == 30
        sdocs = sorted((out1 / "summaries").glob("*.json"))
        assert len(sdocs) == 30
        doc = json.loads(sdocs[0].read_text())
        assert doc["schema_version"] == 1
        assert len(doc["action_posterior"][0]) == 4

    def test_empty_items_error_exit(self, tmp_path, toy_freq):
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        rc = main(["infer", "--items", str(empty), "--freq", str(toy_freq),
                   "--prior", "ngram:/nonexistent", "--seed", "1",
                   "--out", str(tmp_path / "o")])
        assert rc != 0


class TestOracleAndCompare:
    def test_oracle_outputs_and_tv_report(self, tmp_path, toy_freq):
        # single tiny item so exact enumeration stays under budget
        item = {
            "id": 1, "preamble": "the boy",
            "critical_pair": ["kicked", "licked"],
            "typo_pair": ["kjcked", "ljcked"], "unrelated_word": "read",
            "intervening": "the", "predicate_pair": ["ball.", "lolly."],
            "late_predicate": "book.",
        }
        items_path = tmp_path / "toy_items.json"
        items_path.write_text(json.dumps([item]))
        freq_path = tmp_path / "toy_freq.tsv"
        freq_path.write_text(
            "the\t100\nboy\t50\nkicked\t30\nlicked\t30\nread\t30\n"
            "ball\t20\nlolly\t20\nbook\t20\n")
        corpus_path = tmp_path / "corpus.txt"
        corpus_path.write_text("\n".join(
            ["the boy kicked the ball"] * 20 + ["the boy licked the lolly"] * 20
            + ["the boy read the book"] * 20) + "\n")
        model_path = tmp_path / "model.json"
        assert main(["train", "--items", str(items_path), "--freq",
                     str(freq_path), "--corpus", str(corpus_path),
                     "--order", "2", "--out", str(model_path)]) == 0
        config = tmp_path / "config.json"
        config.write_text(json.dumps(
            {"engine": {"num_particles": 2048, "proposal_top_m": 8}}))
        infer_out = tmp_path / "infer"
        oracle_out = tmp_path / "oracle"
        base = ["--items", str(items_path), "--freq", str(freq_path),
                "--prior", f"ngram:{model_path}", "--config", str(config)]
        assert main(["infer", *base, "--seed", "0", "--out", str(infer_out)]) == 0
        assert main(["oracle", *base, "--out", str(oracle_out)]) == 0
        for doc in (oracle_out / "summaries").glob("*.json"):
            payload = json.loads(doc.read_text())
            total = sum(e["prob"] for e in payload["sentence_posterior"])
            assert total == pytest.approx(1.0, abs=1e-9)
        cmp_out = tmp_path / "cmp"
        assert main(["compare", "--a", str(infer_out), "--b", str(oracle_out),
                     "--out", str(cmp_out)]) == 0
        tv = pd.read_csv(cmp_out / "tv_report.csv")
        assert (tv["tv_distance"] <= 1.0).all()
        assert tv["tv_distance"].max() < 0.2

    def test_budget_exceeded_names_instance(self, tmp_path, small_items,
                                            toy_freq, trained_model, capsys):
        rc = main(["oracle", "--items", str(small_items), "--freq",
                   str(toy_freq), "--prior", f"ngram:{trained_model}",
                   "--budget", "10", "--out", str(tmp_path / "o")])
        assert rc != 0
        err = capsys.readouterr().err
        assert "budget" in err


class TestMeasuresCommands:
    def test_measures_golden(self, tmp_path):
        out = tmp_path / "measures"
        rc = main([
            "measures",
            "--trajectories", str(FIXTURE_DIR / "traj_fixture.csv"),
            "--boxes", str(FIXTURE_DIR / "boxes_fixture.csv"),
            "--responses", str(FIXTURE_DIR / "responses_fixture.csv"),
            "--out", str(out),
        ])
        assert rc == 0
        got = pd.read_csv(out / "word_measures.csv")
        expected = pd.read_csv(FIXTURE_DIR / "expected_measures.csv")
        merged = got.merge(expected, on=["trial", "word_index"],
                           suffixes=("", "_exp"))
        assert len(merged) == len(expected)
        for col in ("first_fixation_ms", "gaze_ms", "go_past_ms",
                    "right_bounded_ms", "total_ms", "reread_ms"):
            assert (merged[col] == merged[f"{col}_exp"]).all(), col
        report = json.loads((out / "exclusion_report.json").read_text())
        assert report["n_participants_excluded"] == 0

    def test_aggregate_roundtrip(self, tmp_path):
        words = pd.DataFrame([
            {"participant": p, "trial": f"{p}-1", "item": "1",
             "condition": "Plausible", "variant": 1, "is_filler": False,
             "word_index": w, "first_fixation_ms": 100, "gaze_ms": 100,
             "go_past_ms": 100, "right_bounded_ms": 100, "total_ms": 100,
             "reread_ms": 0, "first_pass_fixated": True,
             "first_pass_reg_out": False, "reg_in": False}
            for p in ("p1", "p2") for w in range(10)
        ])
        words_path = tmp_path / "word_measures.csv"
        words.to_csv(words_path, index=False)
        out = tmp_path / "agg"
        rc = main(["aggregate", "--measures", str(words_path),
                   "--items", str(DATA_DIR / "items.json"),
                   "--measure", "gaze_ms", "--seed", "1",
                   "--out", str(out)])
        assert rc == 0
        table = pd.read_csv(out / "aggregate_gaze_ms.csv")
        filled = table[table["n"] > 0]
        assert len(filled) > 0, "region-map join produced no data cells"
        assert set(filled["condition"]) == {"Plausible"}
        assert (filled["mean"] == 100).all()
        assert (filled["ci_low"] == 100).all()
        # design cells without data are present with n=0 and null CIs
        empty = table[table["n"] == 0]
        assert len(empty) > 0
        assert empty["mean"].isna().all()


class TestPmiCommand:
    def test_lookup_fixture_run(self, tmp_path, small_items):
        items = load_items(small_items)
        probe = LookupOracle(default_prob=0.5)
        probs = []
        for item in items:
            for q in item_queries(item, probe):
                plausible = q.j == q.k
                probs.append({
                    "tokens": list(q.numerator),
                    "target_index": q.target_index,
                    "candidate": q.candidate,
                    "prob": 0.4 if plausible else 0.1,
                })
                probs.append({
                    "tokens": list(q.denominator),
                    "target_index": q.target_index,
                    "candidate": q.candidate,
                    "prob": 0.2,
                })
        fixture = tmp_path / "oracle.json"
        fixture.write_text(json.dumps({"probs": probs}))
        out = tmp_path / "pmi"
        rc = main(["pmi", "--items", str(small_items),
                   "--oracle", f"lookup:{fixture}", "--out", str(out)])
        assert rc == 0
        items_csv = pd.read_csv(out / "pmi_items.csv")
        assert len(items_csv) == 3
        assert (items_csv["delta"] == 2.0).all()
        summary = json.loads((out / "pmi_summary.json").read_text())
        assert summary["n_items"] == 3
        scores = pd.read_csv(out / "pmi_scores.csv")
        assert len(scores) == 12


class TestOutputSchema:
    def test_flat_csv_columns_pinned(self, tmp_path, small_items, toy_freq,
                                     trained_model):
        out = tmp_path / "schema"
        rc = main([
            "infer", "--items", str(small_items), "--freq", str(toy_freq),
            "--prior", f"ngram:{trained_model}", "--seed", "5",
            "--particles", "8", "--out", str(out),
        ])
        assert rc == 0
        header = (out / "summary.csv").read_text().splitlines()[0]
        assert header == ("sentence_id,word_index,word,surprisal_bits,"
                          "p_normal,p_form,p_morph,p_sem,rejuv_acceptance")
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["seed"] == 5
        assert meta["schema_version"] == 1
        assert meta["config"]["engine"]["num_particles"] == 8

    def test_unknown_engine_key_fails_loudly(self, tmp_path, small_items,
                                             toy_freq, trained_model, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"engine": {"particles": 4}}))
        rc = main([
            "infer", "--items", str(small_items), "--freq", str(toy_freq),
            "--prior", f"ngram:{trained_model}", "--config", str(config),
            "--seed", "1", "--out", str(tmp_path / "o"),
        ])
        assert rc == 2
        assert "unknown engine config" in capsys.readouterr().err


class TestDegenerateDiagnostics:
    def test_noise_off_typo_names_sentence_and_position(
            self, tmp_path, small_items, toy_freq, trained_model, capsys):
        config = tmp_path / "noise_off.json"
        config.write_text(json.dumps({
            "engine": {"num_particles": 4, "proposal_top_m": 4},
            "noise": {"errors_enabled": False},
        }))
        rc = main([
            "infer", "--items", str(small_items), "--freq", str(toy_freq),
            "--prior", f"ngram:{trained_model}", "--config", str(config),
            "--seed", "1", "--out", str(tmp_path / "o"),
        ])
        assert rc == 2
        err = capsys.readouterr().err
        assert "Typo" in err and "word" in err
