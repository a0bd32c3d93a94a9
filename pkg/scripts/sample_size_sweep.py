#!/usr/bin/env python3
"""Accuracy of the separated-scale learner as the sample budget grows.

Runs seeded trials at each sample count, prints a summary table, and emits
a plot-ready CSV (one row per trial).  Worker counts never change the
numbers, only the wall time.
"""

import argparse
import csv
import sys
import time

from mallows_lab.learn_separated import SeparationParams, learn_mixture_separated
from mallows_lab.model import MallowsMixture, MallowsModel, sample_mixture
from mallows_lab.records import run_trials

TRUTH = MallowsMixture(
    components=(
        MallowsModel(0.2, (1, 2, 3, 4, 5, 6)),
        MallowsModel(0.6, (6, 5, 4, 3, 2, 1)),
    ),
    weights=(0.5, 0.5),
)
PARAMS = SeparationParams(gamma=0.3, alpha=0.4, prefix_len=3)


def one_trial(count):
    def trial(index, rng):
        t0 = time.monotonic()
        samples = sample_mixture(TRUTH, rng, count)
        row = {"samples": count, "trial": index, "recovered": 0,
               "phi_err": float("nan"), "weight_err": float("nan")}
        try:
            got = learn_mixture_separated(samples, 2, PARAMS)
        except Exception:
            row["seconds"] = round(time.monotonic() - t0, 2)
            return row
        est = sorted(zip(got.components, got.weights), key=lambda t: t[0].phi)
        true = sorted(zip(TRUTH.components, TRUTH.weights), key=lambda t: t[0].phi)
        if all(tm.center == em.center for (tm, _), (em, _) in zip(true, est)):
            row["recovered"] = 1
            row["phi_err"] = max(
                abs(tm.phi - em.phi) for (tm, _), (em, _) in zip(true, est)
            )
            row["weight_err"] = max(
                abs(tw - ew) for (_, tw), (_, ew) in zip(true, est)
            )
        row["seconds"] = round(time.monotonic() - t0, 2)
        return row

    return trial


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--counts", type=int, nargs="+",
                    default=[30_000, 100_000, 300_000])
    ap.add_argument("--trials", type=int, default=3, help="seeds per count")
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--csv", default="sample_size_sweep.csv")
    args = ap.parse_args(argv)

    rows = []
    for count in args.counts:
        rows += run_trials(one_trial(count), args.trials, args.seed,
                           ("sweep", count), workers=args.workers)

    fields = ["samples", "trial", "recovered", "phi_err", "weight_err", "seconds"]
    with open(args.csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)

    print(f"{'samples':>9} {'recovered':>9} {'max phi err':>12} {'max w err':>10}")
    for count in args.counts:
        batch = [r for r in rows if r["samples"] == count]
        hits = [r for r in batch if r["recovered"]]
        phi = max((r["phi_err"] for r in hits), default=float("nan"))
        wts = max((r["weight_err"] for r in hits), default=float("nan"))
        score = f"{len(hits)}/{len(batch)}"
        print(f"{count:>9} {score:>9} {phi:>12.4f} {wts:>10.4f}")
    print(f"per-trial rows written to {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
