#!/usr/bin/env python3
"""Parameter counts of every backbone size and spatial operator, as CSV.

    python scripts/param_table.py [--classes 60] [--out params.csv]
"""
import argparse
import csv
import sys

from cdgc.graph import ntu_graph
from cdgc.network.config import SPATIAL_OPS, BackboneConfig
from cdgc.network.model import count_parameters

REFERENCE = {("full", "cdgc_matrix"): 3.47e6, ("full", "accelerated_cdgc"): 0.69e6}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=60)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    graph = ntu_graph()
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["backbone", "variant", "params", "reference", "relative_diff"])
    for size in ("full", "desk", "toy"):
        for op in SPATIAL_OPS:
            n = count_parameters(getattr(BackboneConfig, size)(op, num_classes=args.classes), graph)
            ref = REFERENCE.get((size, op)) if args.classes == 60 else None
            w.writerow([size, op, n, "" if ref is None else int(ref), "" if ref is None else f"{(n - ref) / ref:+.4f}"])
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
