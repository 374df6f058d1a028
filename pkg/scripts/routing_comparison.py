#!/usr/bin/env python3
"""Compare transport-based routing against cosine routing over a seed sweep.

Runs the overlapping synthetic fixture (heavy class spread, small
minimum separation) under both routing rules for several seeds and
prints per-seed final accuracies plus medians.

Usage:
    python3 scripts/routing_comparison.py [--seeds N] [--base-seed S]
"""

import argparse

import numpy as np

from spherecil import pipeline, synthetic
from spherecil.config import Config

OVERLAP = dict(
    d_in=8, d=8, K=2, B=4, classes_per_task=4, samples_per_class=25,
    epochs=10, spread_sigma=0.25, min_class_angle=0.2,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--base-seed", type=int, default=1993)
    args = ap.parse_args()

    results: dict[str, list[float]] = {"full": [], "cosine": []}
    routing_acc: dict[str, list[float]] = {"full": [], "cosine": []}
    print(f"{'seed':>6} {'variant':>8} {'last_acc':>9} {'route_acc':>9}")
    for i in range(args.seeds):
        seed = args.base_seed + i
        for variant in ("full", "cosine"):
            cfg = Config(**OVERLAP, seed=seed, variant=variant)
            train, test = synthetic.gen_synthetic(cfg)
            state = pipeline.run_training(train, test, cfg)
            rep = pipeline.evaluate_metrics(state)
            results[variant].append(rep.last_accuracy)
            routing_acc[variant].append(rep.routing_accuracies[-1])
            print(f"{seed:>6} {variant:>8} {rep.last_accuracy:>9.4f} "
                  f"{rep.routing_accuracies[-1]:>9.4f}")

    med_full = float(np.median(results["full"]))
    med_cos = float(np.median(results["cosine"]))
    print(f"\nmedian final accuracy: transport={med_full:.4f} cosine={med_cos:.4f}")
    print(f"median routing accuracy: transport={np.median(routing_acc['full']):.4f} "
          f"cosine={np.median(routing_acc['cosine']):.4f}")
    ok = med_full >= med_cos
    print(f"transport >= cosine: {'yes' if ok else 'NO'}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
