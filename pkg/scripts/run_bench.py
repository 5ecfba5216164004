#!/usr/bin/env python3
"""Matrix vs accelerated operator: epoch time and convergence.

Runs two `cdgc bench` passes and writes their CSVs plus a short summary:

  timing       desk backbone, 600 clips, 4 epochs (median of epochs 2-4)
  convergence  toy backbone, until 90% train accuracy (max 30 epochs), 3 seeds

    python scripts/run_bench.py --out results/
"""
import argparse
import csv
import statistics
from pathlib import Path

from cdgc.cli import main as cdgc


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-convergence", action="store_true")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    timing = out / "bench_timing.csv"
    if cdgc(["bench", "--seed", str(args.seed), "--out", str(timing)]) != 0:
        raise SystemExit("timing run failed")
    spe = {r["variant"]: float(r["seconds_per_epoch"]) for r in read(timing)}
    print(f"seconds/epoch: matrix {spe['cdgc_matrix']:.2f}, accelerated {spe['accelerated_cdgc']:.2f}, "
          f"speedup {spe['cdgc_matrix'] / spe['accelerated_cdgc']:.2f}x")

    if args.skip_convergence:
        return
    cfg = out / "convergence.cfg"
    cfg.write_text("backbone=toy\nuntil_target=true\nepochs=30\nseeds=3\n")
    conv = out / "bench_convergence.csv"
    if cdgc(["bench", "--config", str(cfg), "--seed", str(args.seed), "--out", str(conv)]) != 0:
        raise SystemExit("convergence run failed")
    ett = {}
    for r in read(conv):
        ett.setdefault(r["variant"], []).append(int(r["epochs_to_target"]) if r["epochs_to_target"] else None)
    for v, runs in ett.items():
        reached = [e for e in runs if e is not None]
        med = statistics.median(reached) if len(reached) == len(runs) else "n/a"
        print(f"epochs to 90%: {v} {runs} (median {med})")


if __name__ == "__main__":
    main()
