#!/usr/bin/env python3
"""Ablation sweep: run every inference/anchoring variant over several seeds.

Variants:
    full        transport routing + expert mixture (the default pipeline)
    cosine      max-cosine routing instead of transport costs
    sim_only    uniform expert weights (routing disabled)
    single_task hard assignment to the cheapest task
    pca         PCA anchors in place of geodesic anchors

Prints a per-seed table and the median final/average accuracy per
variant; optionally appends rows to a results log.

Usage:
    python3 scripts/ablation_sweep.py [--seeds N] [--base-seed S] [--results PATH]
"""

import argparse

import numpy as np

from spherecil import dataio, pipeline, synthetic
from spherecil.config import VARIANTS, Config

OVERLAP = dict(
    d_in=8, d=8, K=2, B=4, classes_per_task=4, samples_per_class=25,
    epochs=10, spread_sigma=0.25, min_class_angle=0.2,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--base-seed", type=int, default=1993)
    ap.add_argument("--results", default=None, help="results log to append to")
    ap.add_argument("--run-id", default="ablation_sweep")
    args = ap.parse_args()

    last: dict[str, list[float]] = {v: [] for v in VARIANTS}
    avg: dict[str, list[float]] = {v: [] for v in VARIANTS}
    print(f"{'seed':>6} {'variant':>12} {'last_acc':>9} {'avg_acc':>9}")
    for i in range(args.seeds):
        seed = args.base_seed + i
        for variant in VARIANTS:
            cfg = Config(**OVERLAP, seed=seed, variant=variant)
            train, test = synthetic.gen_synthetic(cfg)
            state = pipeline.run_training(train, test, cfg)
            rep = pipeline.evaluate_metrics(state)
            last[variant].append(rep.last_accuracy)
            avg[variant].append(rep.avg_accuracy)
            print(f"{seed:>6} {variant:>12} {rep.last_accuracy:>9.4f} {rep.avg_accuracy:>9.4f}")

    print(f"\n{'variant':>12} {'median_last':>12} {'median_avg':>11}")
    rows = []
    for variant in VARIANTS:
        ml, ma = float(np.median(last[variant])), float(np.median(avg[variant]))
        print(f"{variant:>12} {ml:>12.4f} {ma:>11.4f}")
        rows.append((args.seeds, f"{variant}_median_last", ml))
        rows.append((args.seeds, f"{variant}_median_avg", ma))
    if args.results:
        cfg = Config(**OVERLAP, seed=args.base_seed)
        dataio.append_results(args.results, args.run_id, cfg.digest(), rows)
        print(f"\nappended {len(rows)} rows to {args.results}")

    med = {v: float(np.median(last[v])) for v in VARIANTS}
    ok = (
        med["full"] >= med["single_task"] >= med["sim_only"]
        and med["full"] >= med["pca"]
    )
    print(f"ordering full >= single_task >= sim_only and full >= pca: "
          f"{'yes' if ok else 'NO'}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
