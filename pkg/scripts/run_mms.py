"""Order-of-accuracy tables for p = 1, 2, 3 on the distorted mesh sequence.

    python3 scripts/run_mms.py [--out results/mms] [extra CLI flags]
"""
import argparse
import sys

from vefsolve.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/mms")
    args, rest = ap.parse_known_args()
    for p in (1, 2, 3):
        print(f"== p = {p}", flush=True)
        rc = main(["mms", "--p", str(p), "--out", args.out, *rest])
        if rc:
            sys.exit(rc)
