"""Particle-count convergence sweep on the 8-word toy world: median total
variation between the sampled action posterior and exact enumeration, per K.

Usage: python scripts/run_toy_convergence.py [--seeds 20] [--out sweep.csv]
"""

import argparse
import csv
import sys
import time

import numpy as np

from noisyreader.lexicon import Vocabulary
from noisyreader.noise import NoiseModel
from noisyreader.prior import SmoothingConfig, train_ngram
from noisyreader.smc import (
    InferenceConfig,
    enumerate_exact,
    run_inference,
    tv_distance,
)

CORPUS = (
    ["the boy kick ball"] * 30 + ["the boy lick net"] * 30
    + ["the boy kicks ball"] * 10 + ["the boy licks net"] * 10
    + ["the boy kick net"] * 2 + ["the boy lick ball"] * 2
)
SUITE = [["the", "boy", "lick", "ball"], ["the", "boy", "licks", "ball"]]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    counts = {}
    for s in CORPUS:
        for w in s.split():
            counts[w] = counts.get(w, 0) + 1
    vocab = Vocabulary.from_counts(counts)
    model = train_ngram(CORPUS, order=2,
                        smoothing=SmoothingConfig(delta=0.1, weights=(0.9, 0.1)),
                        vocab=vocab)
    noise = NoiseModel(vocab)
    oracles = [enumerate_exact(t, model, noise, top_m=8) for t in SUITE]

    rows = []
    for K in (16, 64, 256, 1024, 4096):
        cfg = InferenceConfig(num_particles=K, proposal_top_m=8)
        tvs = []
        t0 = time.time()
        for tokens, oracle in zip(SUITE, oracles):
            for seed in range(args.seeds):
                s = run_inference(tokens, model, noise, cfg, seed=seed)
                tvs.append(float(np.mean([
                    tv_distance(s.action_posterior[t], oracle.action_posterior[t])
                    for t in range(len(tokens))
                ])))
        rows.append({
            "K": K,
            "median_tv": float(np.median(tvs)),
            "mean_tv": float(np.mean(tvs)),
            "max_tv": float(np.max(tvs)),
            "runs": len(tvs),
            "seconds": round(time.time() - t0, 2),
        })
        print(rows[-1])

    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
