"""Crooked pipe outer/inner iteration tables.

Runs one (p, refinement) block per CLI call so partial tables are kept if the
sweep is interrupted. The full 3 x 3 x 4 table takes roughly a quarter of an
hour on one core.

    python3 scripts/run_pipe_table.py [--orders 1 2 3] [--refines 0 1 2] [--out results/pipe]
"""
import argparse
import sys

from vefsolve.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--orders", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--refines", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="results/pipe")
    args, rest = ap.parse_known_args()
    for p in args.orders:
        for r in args.refines:
            out = f"{args.out}/p{p}_r{r}"
            rc = main(["pipe", "--p", str(p), "--refine", str(r), "--out", out, *rest])
            if rc:
                sys.exit(rc)
