#!/usr/bin/env python3
"""Train accuracy of the matrix operator across blend coefficients.

    python scripts/alpha_sweep.py --alphas 0,0.1,0.3,0.5,0.7,1 --seeds 3 --out results/alpha.csv

Prints the per-alpha median over seeds after writing the raw CSV.
"""
import argparse
import csv
import statistics
from pathlib import Path

from cdgc.cli import main as cdgc


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alphas", default="0,0.1,0.3,0.5,0.7,1")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--variant", default="cdgc_matrix")
    ap.add_argument("--out", default="results/alpha_sweep.csv")
    args = ap.parse_args(argv)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)

    code = cdgc(["alpha-sweep", "--alphas", args.alphas, "--seeds", str(args.seeds),
                 "--epochs", str(args.epochs), "--variant", args.variant, "--out", args.out])
    if code:
        raise SystemExit(code)
    acc = {}
    with open(args.out, newline="") as fh:
        for r in csv.DictReader(fh):
            acc.setdefault(float(r["alpha"]), []).append(float(r["train_accuracy"]))
    for a in sorted(acc):
        print(f"alpha={a:<4g} median={statistics.median(acc[a]):.3f}  runs={acc[a]}")


if __name__ == "__main__":
    main()
