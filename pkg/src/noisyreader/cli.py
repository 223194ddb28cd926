"""Command-line entry point: batch inference, the exact oracle, stimulus
lists, reading measures, aggregation, and PMI scoring.

Every command writes outputs atomically (temp file + rename), stamps a
schema_version, and logs the seed and configuration into metadata.json in
the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import measures as measures_mod
from . import pmi as pmi_mod
from . import smc, stimuli
from .lexicon import build_vocabulary
from .noise import ActionPrior, NoiseConfig, NoiseModel
from .prior import NGramModel, RemotePrior, SmoothingConfig, train_ngram
from .smc import InferenceConfig

SCHEMA_VERSION = 1
SERVICE_URL_ENV = "NOISYREADER_SERVICE_URL"

INFER_CSV_COLUMNS = (
    "sentence_id", "word_index", "word", "surprisal_bits",
    "p_normal", "p_form", "p_morph", "p_sem", "rejuv_acceptance",
)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _noise_from_config(vocab, doc: dict) -> NoiseModel:
    noise_doc = dict(doc.get("noise", {}))
    action = ActionPrior(
        normal_alpha=float(noise_doc.pop("normal_alpha", 3.0)),
        error_alpha=float(noise_doc.pop("error_alpha", 1.0)),
    )
    errors_enabled = bool(noise_doc.pop("errors_enabled", True))
    cfg = NoiseConfig(**noise_doc)
    return NoiseModel(vocab, action, cfg, errors_enabled=errors_enabled)


def _engine_config(doc: dict, args) -> InferenceConfig:
    engine_doc = dict(doc.get("engine", {}))
    if getattr(args, "particles", None):
        engine_doc["num_particles"] = args.particles
    return InferenceConfig.from_dict(engine_doc)


def _resolve_prior(args, doc: dict, vocab):
    spec = getattr(args, "prior", None) or doc.get("prior") \
        or (f"service:{os.environ[SERVICE_URL_ENV]}"
            if os.environ.get(SERVICE_URL_ENV) else None)
    if not spec:
        raise SystemExit("no prior configured: pass --prior ngram:PATH or service:URL")
    kind, _, arg = spec.partition(":")
    if kind == "ngram":
        with open(arg, encoding="utf-8") as fh:
            model = NGramModel.from_json(fh.read())
        if vocab is not None and model.vocab.words != vocab.words:
            raise SystemExit(
                "n-gram model vocabulary does not match the stimulus vocabulary"
            )
        return model
    if kind == "service":
        return RemotePrior(vocab=vocab, url=arg)
    raise SystemExit(f"unknown prior spec {spec!r}")


def _load_materials(args):
    items = stimuli.load_items(args.items)
    extras = [w for item in items for w in item.model_words()]
    vocab = build_vocabulary(args.freq, extras)
    return items, vocab


def _write_metadata(out: Path, command: str, seed: int | None, extra: dict) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        **extra,
    }
    atomic_write(out / "metadata.json", json.dumps(doc, indent=2) + "\n")


def _summary_rows(sentence_id: str, summary: smc.PosteriorSummary):
    rows = []
    for t, word in enumerate(summary.observed):
        ap = summary.action_posterior[t]
        rows.append({
            "sentence_id": sentence_id,
            "word_index": t,
            "word": word,
            "surprisal_bits": repr(summary.surprisal_trace[t]),
            "p_normal": repr(float(ap[0])),
            "p_form": repr(float(ap[1])),
            "p_morph": repr(float(ap[2])),
            "p_sem": repr(float(ap[3])),
            "rejuv_acceptance": repr(summary.rejuv_acceptance[t]),
        })
    return rows


def _write_summaries(out: Path, results, command: str, seed, config_echo) -> None:
    sdir = out / "summaries"
    rows = []
    for sentence_id, summary in results:
        doc = {"schema_version": SCHEMA_VERSION, "sentence_id": sentence_id}
        doc.update(summary.to_dict())
        atomic_write(sdir / f"{sentence_id}.json", json.dumps(doc) + "\n")
        rows.extend(_summary_rows(sentence_id, summary))
    buf = []
    buf.append(",".join(INFER_CSV_COLUMNS))
    for r in rows:
        buf.append(",".join(str(r[c]) for c in INFER_CSV_COLUMNS))
    atomic_write(out / "summary.csv", "\n".join(buf) + "\n")
    _write_metadata(out, command, seed, {"config": config_echo,
                                         "n_sentences": len(results)})


def _variant_seed(base_seed: int, variant: stimuli.ConditionVariant) -> list[int]:
    cond_ix = stimuli.CONDITIONS.index(variant.condition)
    return [base_seed, variant.item_id, cond_ix, variant.variant]


def cmd_infer(args) -> int:
    doc = load_config(args.config)
    items, vocab = _load_materials(args)
    variants = stimuli.expand_items(items)
    if not variants:
        print("error: no variants to process", file=sys.stderr)
        return 2
    noise = _noise_from_config(vocab, doc)
    config = _engine_config(doc, args)
    prior = _resolve_prior(args, doc, vocab)

    def one(variant):
        seed_key = _variant_seed(args.seed, variant)
        derived = int(np.random.SeedSequence(seed_key).generate_state(1)[0])
        try:
            summary = smc.run_inference(
                variant.model_tokens(), prior, noise, config, seed=derived
            )
        except smc.InferenceDegenerateError as exc:
            raise SystemExit(
                f"inference degenerate in {variant.sentence_id!r} "
                f"at word {exc.position} ({exc.token!r})"
            )
        return variant.sentence_id, summary

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(one, variants))
    else:
        results = [one(v) for v in variants]
    results.sort(key=lambda r: r[0])
    _write_summaries(Path(args.out), results, "infer", args.seed,
                     {"engine": config.to_dict(), "prior": str(args.prior)})
    return 0


def cmd_oracle(args) -> int:
    doc = load_config(args.config)
    items, vocab = _load_materials(args)
    variants = stimuli.expand_items(items)
    noise = _noise_from_config(vocab, doc)
    config = _engine_config(doc, args)
    prior = _resolve_prior(args, doc, vocab)
    results = []
    for variant in variants:
        try:
            summary = smc.enumerate_exact(
                variant.model_tokens(), prior, noise,
                top_m=config.proposal_top_m, budget=args.budget,
            )
        except smc.OracleInfeasibleError as exc:
            print(f"error: {variant.sentence_id}: {exc}", file=sys.stderr)
            return 2
        results.append((variant.sentence_id, summary))
    _write_summaries(Path(args.out), results, "oracle", None,
                     {"engine": config.to_dict(), "budget": args.budget})
    return 0


def cmd_compare(args) -> int:
    """Per-position total-variation distance between two summary runs."""
    a = pd.read_csv(Path(args.a) / "summary.csv")
    b = pd.read_csv(Path(args.b) / "summary.csv")
    key = ["sentence_id", "word_index"]
    cols = ["p_normal", "p_form", "p_morph", "p_sem"]
    merged = a.merge(b, on=key, suffixes=("_a", "_b"))
    if len(merged) != len(a) or len(merged) != len(b):
        print("error: runs cover different sentences", file=sys.stderr)
        return 2
    tv = 0.5 * sum(
        (merged[f"{c}_a"] - merged[f"{c}_b"]).abs() for c in cols
    )
    out = merged[key].copy()
    out["tv_distance"] = tv
    buf = out.to_csv(index=False)
    atomic_write(Path(args.out) / "tv_report.csv", buf)
    print(f"max TV {tv.max():.6f}, mean TV {tv.mean():.6f}")
    return 0


def cmd_lists(args) -> int:
    items = stimuli.load_items(args.items)
    lists = stimuli.generate_lists(items, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stimuli.write_lists_csv(lists, out / "lists.csv")
    variants = stimuli.expand_items(items)
    stimuli.write_variants_csv(variants, out / "variants.csv")
    _write_metadata(out, "lists", args.seed, {"n_items": len(items),
                                              "n_variants": len(variants)})
    return 0


def _read_trial_logs(args) -> list[measures_mod.TrialLog]:
    samples = pd.read_csv(args.trajectories)
    boxes = pd.read_csv(args.boxes)
    responses = pd.read_csv(args.responses)
    box_map: dict[str, list[measures_mod.Box]] = {}
    for trial, grp in boxes.groupby("trial"):
        grp = grp.sort_values("word_index")
        box_map[str(trial)] = [
            measures_mod.Box(r.x_min, r.x_max, r.y_min, r.y_max)
            for r in grp.itertuples()
        ]
    meta = {}
    for r in responses.itertuples():
        meta[(str(r.participant), str(r.trial))] = r
    logs = []
    for (participant, trial), grp in samples.groupby(["participant", "trial"]):
        participant, trial = str(participant), str(trial)
        grp = grp.sort_values("timestamp_ms")
        m = meta.get((participant, trial))
        if m is None:
            raise SystemExit(f"no response row for {participant}/{trial}")
        logs.append(measures_mod.TrialLog(
            participant=participant,
            trial=trial,
            item=str(getattr(m, "item", trial)),
            condition=str(getattr(m, "condition", "NA")),
            variant=int(getattr(m, "variant", 1)),
            samples=tuple(
                (int(r.timestamp_ms), float(r.x), float(r.y))
                for r in grp.itertuples()
            ),
            word_boxes=tuple(box_map[trial]),
            response=str(m.response),
            is_filler=bool(getattr(m, "is_filler", False)),
        ))
    logs.sort(key=lambda t: (t.participant, t.trial))
    return logs


def cmd_measures(args) -> int:
    cfg = measures_mod.MeasureConfig(min_dwell_ms=args.min_dwell)
    logs = _read_trial_logs(args)
    ds = measures_mod.build_dataset(logs, cfg)
    filtered, report = measures_mod.apply_exclusions(ds)
    out = Path(args.out)
    atomic_write(out / "word_measures.csv", filtered.words.to_csv(index=False))
    atomic_write(out / "exclusion_report.json", json.dumps(report, indent=2) + "\n")
    _write_metadata(out, "measures", None, {"min_dwell_ms": args.min_dwell,
                                            "n_trials": len(logs)})
    return 0


def cmd_aggregate(args) -> int:
    words = pd.read_csv(args.measures)
    trials = words.drop_duplicates(["participant", "trial"])[
        ["participant", "trial", "item", "condition", "variant", "is_filler"]
    ].copy()
    trials["response"] = "OK"
    trials["n_words"] = 0
    trials["n_fixated"] = 0
    ds = measures_mod.ReadingDataset(words=words, trials=trials)
    items = stimuli.load_items(args.items)
    region_maps = {}
    for v in stimuli.expand_items(items):
        region_maps[(str(v.item_id), v.condition, v.variant)] = v.region_map
    table = measures_mod.aggregate(
        ds, region_maps, args.measure, n_boot=args.bootstrap, seed=args.seed
    )
    out = Path(args.out)
    atomic_write(out / f"aggregate_{args.measure}.csv", table.to_csv(index=False))
    _write_metadata(out, "aggregate", args.seed,
                    {"measure": args.measure, "bootstrap": args.bootstrap})
    return 0


def _resolve_oracle(args):
    spec = args.oracle or (f"service:{os.environ[SERVICE_URL_ENV]}"
                           if os.environ.get(SERVICE_URL_ENV) else None)
    if not spec:
        raise SystemExit("no oracle configured: pass --oracle lookup:PATH or service:URL")
    kind, _, arg = spec.partition(":")
    if kind == "lookup":
        with open(arg, encoding="utf-8") as fh:
            doc = json.load(fh)
        oracle = pmi_mod.LookupOracle(
            span_tokens=doc.get("span_tokens", {}),
            multi_token_words=set(doc.get("multi_token_words", ())),
            default_prob=doc.get("default_prob"),
        )
        for e in doc.get("probs", []):
            oracle.register(e["tokens"], e["target_index"], e["candidate"], e["prob"])
        return oracle
    if kind == "service":
        return pmi_mod.RemoteMaskedOracle(arg)
    raise SystemExit(f"unknown oracle spec {spec!r}")


def cmd_pmi(args) -> int:
    items = stimuli.load_items(args.items)
    oracle = _resolve_oracle(args)
    scores, aggregates, excluded, summary = pmi_mod.run_pmi_analysis(items, oracle)
    out = Path(args.out)
    score_rows = ["item,j,k,pmi_bits"]
    for s in scores:
        score_rows.append(f"{s.item_id},{s.j},{s.k},{s.bits!r}")
    atomic_write(out / "pmi_scores.csv", "\n".join(score_rows) + "\n")
    item_rows = ["item,pmi_plausible,pmi_gp,delta"]
    for a in aggregates:
        item_rows.append(
            f"{a.item_id},{a.pmi_plausible!r},{a.pmi_gp!r},{a.delta!r}"
        )
    atomic_write(out / "pmi_items.csv", "\n".join(item_rows) + "\n")
    atomic_write(out / "pmi_summary.json",
                 json.dumps({"schema_version": SCHEMA_VERSION, **summary},
                            indent=2) + "\n")
    return 0


def cmd_train(args) -> int:
    items = stimuli.load_items(args.items)
    extras = [w for item in items for w in item.model_words()]
    vocab = build_vocabulary(args.freq, extras)
    with open(args.corpus, encoding="utf-8") as fh:
        corpus = [line.strip() for line in fh if line.strip()]
    model = train_ngram(
        corpus, order=args.order,
        smoothing=SmoothingConfig(delta=args.delta), vocab=vocab,
    )
    atomic_write(Path(args.out), model.to_json() + "\n")
    print(f"trained order-{args.order} model over {len(vocab)} words")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="noisyreader",
        description="Noisy-channel sentence processing toolkit",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, required=True)

    sp = sub.add_parser("infer", help="run SMC inference over all variants")
    common(sp)
    sp.add_argument("--items", required=True)
    sp.add_argument("--freq", required=True)
    sp.add_argument("--prior", default=None,
                    help="ngram:MODEL.json or service:URL")
    sp.add_argument("--particles", type=int, default=None)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("oracle", help="exact enumeration summaries")
    common(sp, seed=False)
    sp.add_argument("--items", required=True)
    sp.add_argument("--freq", required=True)
    sp.add_argument("--prior", default=None)
    sp.add_argument("--particles", type=int, default=None)
    sp.add_argument("--budget", type=int, default=10 ** 6)
    sp.set_defaults(func=cmd_oracle, seed=None)

    sp = sub.add_parser("compare", help="TV distance between two runs")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("lists", help="write rotation lists and variants")
    common(sp)
    sp.add_argument("--items", required=True)
    sp.set_defaults(func=cmd_lists)

    sp = sub.add_parser("measures", help="trajectories -> word measures")
    common(sp, seed=False)
    sp.add_argument("--trajectories", required=True)
    sp.add_argument("--boxes", required=True)
    sp.add_argument("--responses", required=True)
    sp.add_argument("--min-dwell", type=int, default=100)
    sp.set_defaults(func=cmd_measures)

    sp = sub.add_parser("aggregate", help="condition x region aggregation")
    common(sp)
    sp.add_argument("--measures", required=True, help="word measures CSV")
    sp.add_argument("--items", required=True)
    sp.add_argument("--measure", required=True)
    sp.add_argument("--bootstrap", type=int, default=2000)
    sp.set_defaults(func=cmd_aggregate)

    sp = sub.add_parser("pmi", help="masked-prediction PMI analysis")
    common(sp, seed=False)
    sp.add_argument("--items", required=True)
    sp.add_argument("--oracle", default=None,
                    help="lookup:FIXTURE.json or service:URL")
    sp.set_defaults(func=cmd_pmi)

    sp = sub.add_parser("train", help="train the built-in n-gram prior")
    sp.add_argument("--items", required=True)
    sp.add_argument("--freq", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--order", type=int, default=3)
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, int):
            raise
        print(f"error: {exc.code}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
