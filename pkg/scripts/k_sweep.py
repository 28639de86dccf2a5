#!/usr/bin/env python3
"""Top-1 of an SVM on learned features as a function of the cluster count k.

    python3 scripts/k_sweep.py --ks 2 4 8 16 --seeds 0 1 2
"""
import argparse

import numpy as np

from deepkmeans.experiments import make_split, member_config, train_member


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ks", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--preset", default="anet-mini")
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()

    print("k,mean_top1,std_top1,per_seed")
    for k in args.ks:
        accs = []
        for seed in args.seeds:
            train, test = make_split(seed)
            accs.append(train_member(train, test, member_config(args.preset, k, seed, epochs=args.epochs)).top1)
        print(f"{k},{np.mean(accs):.2f},{np.std(accs):.2f},{' '.join(f'{a:.2f}' for a in accs)}", flush=True)


if __name__ == "__main__":
    main()
