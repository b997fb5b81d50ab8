"""Command line entry point: ``python3 -m vefsolve <experiment> [options]``."""
import argparse
import os
import sys

from . import __version__
from .config import ConfigError, ProblemConfig, load_config
from .experiments import (crooked_pipe_run, diffusion_limit_run, first_outer_gap, lineout,
                          mms_run, mock_data_run, single_run, write_lineout,
                          write_table)
from .fem import GridFunction, write_gridfunction
from .vef import KINDS

PRECOND_FLAGS = ("usc", "usc-sym", "substitute", "exact")


def build_parser():
    ap = argparse.ArgumentParser(prog="vefsolve", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="experiment", required=True)
    helps = {
        "mms": "order-of-accuracy study on curved meshes",
        "difflim": "outer iteration counts in the thick diffusion limit",
        "pipe": "crooked pipe outer and inner iteration tables",
        "mockdata": "preconditioner study with prescribed VEF data",
        "solve": "one coupled solve of the configured problem",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="sectioned key = value file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--kind", choices=[k for k in KINDS if k != "cg-sym"])
        sp.add_argument("--p", type=int)
        sp.add_argument("--refine", type=int)
        sp.add_argument("--quadrature", choices=["s4", "s12"])
        sp.add_argument("--anderson", type=int)
        sp.add_argument("--augmented", action="store_true", default=None)
        sp.add_argument("--sweeps", type=int)
        sp.add_argument("--precond", choices=PRECOND_FLAGS)
    return ap


def config_from_args(args):
    cfg = load_config(args.config, args.experiment) if args.config else \
        ProblemConfig.defaults(args.experiment)
    if args.out:
        cfg.run.out = args.out
    if args.kind:
        cfg.discretization.kind = args.kind
        cfg.discretization.kinds = (args.kind,)
    if args.p is not None:
        cfg.discretization.p = args.p
        cfg.discretization.orders = (args.p,)
    if args.refine is not None:
        cfg.mesh.refine = args.refine
        cfg.mesh.refines = (args.refine,)
    if args.quadrature:
        cfg.angular.quadrature = args.quadrature
    if args.anderson is not None:
        cfg.outer.anderson = args.anderson
    if args.augmented:
        cfg.outer.augmented = True
    if args.sweeps is not None:
        cfg.outer.sweeps = args.sweeps
    if args.precond:
        cfg.inner.precond = args.precond
        if args.experiment == "mockdata":
            cfg.inner.modes = (args.precond,)
    return cfg.validate()


def _say(msg):
    print(msg, flush=True)


def run_mms(cfg, out, meta):
    res = mms_run(cfg)
    path = os.path.join(out, f"mms_p{res.p}.csv")
    res.write(path, meta)
    for k in res.kinds:
        order, const = res.fit(k)
        _say(f"{k:6s} order {order:.3f}  constant {const:.3e}")
    return [path]


def run_difflim(cfg, out, meta):
    res = diffusion_limit_run(cfg)
    paths = [os.path.join(out, "difflim_outer.csv")]
    write_table(paths[0], ["eps"] + list(res.kinds), res.table(), meta)
    y = cfg.problem.lineout_y
    for (eps, kind), gf in res.solutions.items():
        path = os.path.join(out, f"difflim_lineout_{kind}_eps{eps:g}.csv")
        write_lineout(path, lineout(gf, (0.0, y), (1.0, y), cfg.problem.lineout_points),
                      dict(meta, eps=eps, kind=kind))
        paths.append(path)
    for row in res.table():
        _say("eps %-8g " % row[0] + " ".join(f"{c:4d}" for c in row[1:]))
    for kind, gap in res.forced_diffusion_gap.items():
        _say(f"{kind:6s} forced-diffusion relative L2 gap at eps={min(res.eps):g}: {gap:.3e}")
    return paths


def run_pipe(cfg, out, meta):
    kinds = list(cfg.discretization.kinds)
    res = crooked_pipe_run(cfg, progress=lambda c: _say(
        f"p={c.p} Ne={c.ne} {c.kind:6s} outers {c.outers:3d}{'' if c.converged else ' (not converged)'}"
        f"  inner max/min/avg {c.inner_max}/{c.inner_min}/{c.inner_avg:.2f}  {c.seconds:.1f}s"))
    paths = [os.path.join(out, "pipe_outer.csv"), os.path.join(out, "pipe_inner.csv")]
    write_table(paths[0], ["p", "ne"] + kinds, res.outer_rows(kinds), meta)
    write_table(paths[1], ["p", "ne", "kind", "max", "min", "avg"], res.inner_rows(), meta)
    for (p, ne, kind), log in res.logs.items():
        path = os.path.join(out, f"pipe_log_{kind}_p{p}_ne{ne}.csv")
        log.write_csv(path, dict(meta, p=p, ne=ne, kind=kind))
        paths.append(path)
    if cfg.problem.dump:
        for (p, ne, kind), gf in res.fields.items():
            path = os.path.join(out, f"pipe_varphi_{kind}_p{p}_ne{ne}.gf")
            write_gridfunction(gf, path, dict(meta, p=p, ne=ne, kind=kind))
            paths.append(path)
    return paths


def run_mockdata(cfg, out, meta):
    res = mock_data_run(cfg)
    paths = [os.path.join(out, "mock_precond.csv"), os.path.join(out, "mock_first_outer.csv")]
    write_table(paths[0], ["ne", "ndofs"] + list(res.modes) + ["diffusion"], res.rows, meta)
    gap = first_outer_gap(cfg)
    write_table(paths[1], ["ne", "vef", "diffusion", "gap"], gap, meta)
    for row in res.rows:
        _say(" ".join(str(v) for v in row))
    for row in gap:
        _say(f"first outer Ne={row[0]}: VEF {row[1]}  diffusion {row[2]}  gap {row[3]}")
    return paths


def run_solve(cfg, out, meta):
    state, varphi, log = single_run(cfg)
    paths = [os.path.join(out, "solve_outer.csv")]
    log.write_csv(paths[0], meta)
    if varphi is None:
        _say(f"no convergence in {log.outers} outer iterations")
        return paths
    gf = GridFunction(state.disc.Y, varphi)
    paths.append(os.path.join(out, "solve_varphi.gf"))
    write_gridfunction(gf, paths[-1], meta)
    lo, hi = state.mesh.points.min(axis=0), state.mesh.points.max(axis=0)
    y = min(max(cfg.problem.lineout_y, lo[1]), hi[1])
    paths.append(os.path.join(out, "solve_lineout.csv"))
    write_lineout(paths[-1], lineout(gf, (lo[0], y), (hi[0], y), cfg.problem.lineout_points), meta)
    _say(f"converged in {log.outers} outer iterations; inner max/min/avg {log.inner_summary()}")
    return paths


RUNNERS = {"mms": run_mms, "difflim": run_difflim, "pipe": run_pipe,
           "mockdata": run_mockdata, "solve": run_solve}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    meta = dict(cfg.metadata(), version=__version__)
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(cfg.to_ini())
    paths = RUNNERS[cfg.run.experiment](cfg, out, meta)
    for p in paths[:6]:
        _say(f"wrote {p}")
    if len(paths) > 6:
        _say(f"... and {len(paths) - 6} more files in {out}")
    return 0
