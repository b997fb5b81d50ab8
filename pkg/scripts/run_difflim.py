"""Outer counts in the thick diffusion limit for every kind, plus lineouts at y = 0.5.

    python3 scripts/run_difflim.py [--out results/difflim] [extra CLI flags]
"""
import argparse
import sys

from vefsolve.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/difflim")
    args, rest = ap.parse_known_args()
    sys.exit(main(["difflim", "--out", args.out, *rest]))
