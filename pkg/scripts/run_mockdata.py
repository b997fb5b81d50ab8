"""Preconditioner study with prescribed forward-peaked VEF data, and the first-outer gap.

    python3 scripts/run_mockdata.py [--out results/mockdata] [extra CLI flags]
"""
import argparse
import sys

from vefsolve.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/mockdata")
    args, rest = ap.parse_known_args()
    sys.exit(main(["mockdata", "--out", args.out, *rest]))
