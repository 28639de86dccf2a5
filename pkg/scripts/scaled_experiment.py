#!/usr/bin/env python3
"""Train anet-mini and vnet-mini members per seed, compare against raw-pixel
baselines and an untrained-network control, and report the fused ensemble.

    python3 scripts/scaled_experiment.py --seeds 0 1 2 3 4 --out results.csv
"""
import argparse
import csv
import logging

from deepkmeans.ensemble import ScoreSet, fuse_scores, top1_accuracy
from deepkmeans.experiments import (make_split, member_config, raw_kmeans_baseline, raw_pixel_svm, train_member,
                                    untrained_network_svm)
from deepkmeans.svm import predict_from_scores


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--presets", nargs="+", default=["anet-mini", "vnet-mini"])
    ap.add_argument("--out", help="optional CSV of per-seed results")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    rows = []
    for seed in args.seeds:
        train, test = make_split(seed)
        row = {"seed": seed, "raw_kmeans": raw_kmeans_baseline(train, test, args.k, seed),
               "raw_pixels": raw_pixel_svm(train, test)}
        members = []
        for preset in args.presets:
            cfg = member_config(preset, args.k, seed, epochs=args.epochs)
            row[f"{preset}_untrained"] = untrained_network_svm(train, test, cfg)
            m = train_member(train, test, cfg)
            row[preset] = m.top1
            row[f"{preset}_epochs"] = len(m.history)
            members.append(ScoreSet(preset, m.test_scores))
        if len(members) > 1:
            row["fused"] = top1_accuracy(predict_from_scores(fuse_scores(members)), test.labels)
        rows.append(row)
        print("  ".join(f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()),
              flush=True)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
