"""Experiment harnesses: MMS convergence, thick diffusion limit, crooked pipe, mock-data study."""
import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .driver import OuterNotConverged, VefTransportState, fixed_point_solve
from .fem import FeSpace, GridFunction, interpolate, l2_error
from .linalg import bicgstab
from .mesh import build_cartesian_mesh
from .problems import (CrookedPipeProblem, DiffusionLimitProblem, MmsDefinition,
                       crooked_pipe_mesh, mms_mesh, mock_vef_data)
from .transport import fold_polar, level_symmetric
from .vef import (FluxVefData, SolverConfig, VefDiscretization, build_preconditioner,
                  isotropic_data, moment_sources, solve_vef)

DIRECT = SolverConfig(method="direct")


def angular_quadrature(N):
    """Level-symmetric S_N folded onto the upper hemisphere."""
    return fold_polar(level_symmetric(N))


# -- output helpers ------------------------------------------------------------------------

def write_table(path, header, rows, meta=None):
    """CSV with ``# key=value`` metadata lines ahead of the column header."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.6e}"
    return v


def lineout(gf, start, end, npts=101):
    """Sample a scalar GridFunction on a segment; rows of (s, x, y, value)."""
    start, end = np.asarray(start, float), np.asarray(end, float)
    mesh = gf.space.mesh
    length = float(np.linalg.norm(end - start))
    rows = []
    for t in np.linspace(0.0, 1.0, npts):
        x = start + t * (end - start)
        e, xi = mesh.locate_point(x)
        val, _ = gf.space.eval_basis(xi[None])
        rows.append((t * length, x[0], x[1], float(val[0] @ gf.coefs[gf.space.dofs[e]])))
    return np.array(rows)


def write_lineout(path, rows, meta=None):
    write_table(path, ["s", "x", "y", "value"], rows, meta)


# -- regression ---------------------------------------------------------------------------

def log_regression(h, err):
    """Fit err = C h^order by least squares in log space; returns (order, C)."""
    h, err = np.asarray(h, float), np.asarray(err, float)
    if h.size < 2:
        raise ValueError("regression needs at least two points")
    if np.any(h <= 0) or np.any(err <= 0):
        raise ValueError("regression needs positive sizes and errors")
    order, logc = np.polyfit(np.log(h), np.log(err), 1)
    return float(order), float(np.exp(logc))


# -- MMS ----------------------------------------------------------------------------------

@dataclass
class MmsResult:
    p: int
    kinds: tuple
    h: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)  # kind -> list over meshes

    def fit(self, kind):
        return log_regression(self.h, self.errors[kind])

    def deviation(self):
        """Cross-kind standard deviation per mesh."""
        e = np.array([self.errors[k] for k in self.kinds])
        return e.std(axis=0)

    def rows(self):
        dev = self.deviation()
        for i, h in enumerate(self.h):
            yield [h] + [self.errors[k][i] for k in self.kinds] + [dev[i]]

    def write(self, path, meta=None):
        rows = list(self.rows())
        fits = [self.fit(k) for k in self.kinds]
        rows.append(["order"] + [f[0] for f in fits] + [""])
        rows.append(["constant"] + [f[1] for f in fits] + [""])
        write_table(path, ["h"] + list(self.kinds) + ["deviation"], rows, meta)


def mms_errors(mesh, p, kinds, quad, mms=None):
    """VEF-only solve with data from the interpolated manufactured flux; L2 errors per kind."""
    mms = mms or MmsDefinition()
    disc = VefDiscretization(mesh, p, mms.sigma_t, mms.sigma_t - mms.sigma_s)
    T = FeSpace(mesh, p, "dg", "open")
    psi = np.stack([interpolate(lambda x, o=o: mms.psi(x, o), T).coefs for o in quad.omega])
    data = FluxVefData(T, quad, psi)
    sources = mms.moment_sources(quad)
    out = {}
    for kind in kinds:
        system = disc.assemble(kind, data, sources)
        x, _ = solve_vef(system, DIRECT)
        out[kind] = l2_error(GridFunction(disc.Y, system.to_dg(x)), mms.phi)
    return out


def mms_run(cfg, p=None):
    """Convergence table for one polynomial order on the distorted mesh sequence."""
    p = p or cfg.discretization.p
    mms = MmsDefinition(sigma_t=cfg.problem.sigma_t, sigma_s=cfg.problem.sigma_s)
    quad = angular_quadrature(cfg.sn_order)
    kinds = tuple(cfg.discretization.kinds)
    res = MmsResult(p, kinds, errors={k: [] for k in kinds})
    for n in cfg.mesh.sizes:
        mesh = mms_mesh(n, cfg.mesh.order)
        errs = mms_errors(mesh, p, kinds, quad, mms)
        res.h.append(mesh.h)
        for k in kinds:
            res.errors[k].append(errs[k])
    return res


# -- thick diffusion limit ----------------------------------------------------------------

@dataclass
class DiffusionLimitResult:
    eps: tuple
    kinds: tuple
    counts: dict = field(default_factory=dict)  # (eps, kind) -> outers
    solutions: dict = field(default_factory=dict)  # (eps, kind) -> GridFunction
    forced_diffusion_gap: dict = field(default_factory=dict)  # kind -> relative L2 difference

    def table(self):
        return [[e] + [self.counts[(e, k)] for k in self.kinds] for e in self.eps]


def diffusion_limit_run(cfg):
    p = cfg.discretization.p
    quad = angular_quadrature(cfg.sn_order)
    mesh = build_cartesian_mesh(cfg.mesh.n, cfg.mesh.n, ((0.0, 1.0), (0.0, 1.0)), 1)
    kinds = tuple(cfg.discretization.kinds)
    eps_list = tuple(cfg.problem.eps)
    res = DiffusionLimitResult(eps_list, kinds)
    for eps in eps_list:
        prob = DiffusionLimitProblem(eps)
        for kind in kinds:
            state = VefTransportState(mesh, p, prob.transport(), prob.sigma_a, quad,
                                      cfg.outer_config(kind), penalty_scale=cfg.discretization.penalty_scale)
            varphi, _, log = fixed_point_solve(state, raise_on_failure=False)
            res.counts[(eps, kind)] = log.outers if log.converged else -log.outers
            res.solutions[(eps, kind)] = GridFunction(state.disc.Y, varphi)
            if eps == min(eps_list):
                res.forced_diffusion_gap[kind] = forced_diffusion_gap(state, varphi)
    return res


def forced_diffusion_gap(state, varphi):
    """Relative L2 distance between a VEF solution and the E = I/3 solve of the same kind."""
    disc = state.disc
    system = disc.assemble(state.config.kind, isotropic_data(), state.sources)
    x, _ = solve_vef(system, DIRECT)
    diff = GridFunction(disc.Y, system.to_dg(x) - varphi)
    ref = GridFunction(disc.Y, varphi)
    return l2_error(diff, None, disc.vol) / l2_error(ref, None, disc.vol)


# -- crooked pipe -------------------------------------------------------------------------

@dataclass
class PipeCell:
    p: int
    ne: int
    kind: str
    outers: int
    converged: bool
    inner_max: int
    inner_min: int
    inner_avg: float
    seconds: float


@dataclass
class PipeResult:
    cells: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)  # (p, ne, kind) -> GridFunction
    logs: dict = field(default_factory=dict)

    def outer_rows(self, kinds):
        keys = sorted({(c.p, c.ne) for c in self.cells})
        look = {(c.p, c.ne, c.kind): c for c in self.cells}
        return [[p, ne] + [look[(p, ne, k)].outers if (p, ne, k) in look else "" for k in kinds]
                for p, ne in keys]

    def inner_rows(self):
        return [[c.p, c.ne, c.kind, c.inner_max, c.inner_min, c.inner_avg] for c in self.cells]


def pipe_state(p, refine, kind, cfg, problem=None, quad=None):
    problem = problem or CrookedPipeProblem(q=cfg.problem.q)
    quad = quad or angular_quadrature(cfg.sn_order)
    mesh = crooked_pipe_mesh(refine)
    return VefTransportState(mesh, p, problem.transport(), problem.sigma_a, quad,
                             cfg.outer_config(kind), penalty_scale=cfg.discretization.penalty_scale)


def crooked_pipe_run(cfg, orders=None, refines=None, kinds=None, progress=None):
    orders = orders or tuple(cfg.discretization.orders)
    refines = refines if refines is not None else tuple(cfg.mesh.refines)
    kinds = kinds or tuple(cfg.discretization.kinds)
    quad = angular_quadrature(cfg.sn_order)
    problem = CrookedPipeProblem(q=cfg.problem.q)
    res = PipeResult()
    for p in orders:
        for r in refines:
            for kind in kinds:
                t0 = time.perf_counter()
                state = pipe_state(p, r, kind, cfg, problem, quad)
                varphi, _, log = fixed_point_solve(state, raise_on_failure=False)
                mx, mn, avg = log.inner_summary()
                cell = PipeCell(p, state.mesh.ne, kind, log.outers, log.converged, mx, mn, avg,
                                time.perf_counter() - t0)
                res.cells.append(cell)
                res.fields[(p, state.mesh.ne, kind)] = GridFunction(state.disc.Y, varphi)
                res.logs[(p, state.mesh.ne, kind)] = log
                if progress:
                    progress(cell)
    return res


INLET_POINT = (0.25, 0.0)
SHADOW_POINT = (4.5, -1.5)


def shadow_ratio(cfg, p=1, refine=1, kind="ip", point=SHADOW_POINT):
    """Inflow-driven flux at a shielded wall point relative to the pipe inlet.

    The fixed-source contribution is removed by subtracting the solve with
    zero inflow, which is exact for the linear converged problem.
    """
    vals = []
    for inflow in (1.0 / (2.0 * np.pi), 0.0):
        state = pipe_state(p, refine, kind, cfg, CrookedPipeProblem(q=cfg.problem.q, inflow_value=inflow))
        varphi, _, _ = fixed_point_solve(state)
        vals.append(GridFunction(state.disc.Y, varphi))
    diff = GridFunction(vals[0].space, vals[0].coefs - vals[1].coefs)
    at = [lineout(diff, x, x, 1)[0, 3] for x in (INLET_POINT, point)]
    return at[1] / at[0], diff


# -- mock-data preconditioner study -------------------------------------------------------

@dataclass
class MockResult:
    modes: tuple
    rows: list = field(default_factory=list)  # [ne, ndofs, counts per mode..., diffusion]
    physical: list = field(default_factory=list)  # [ne, vef, diffusion, gap]


def _count(system, mode, cfg):
    inner = cfg.solver_config()
    try:
        M = build_preconditioner(system, mode, inner.inner_k, inner.amg)
    except Exception:  # noqa: BLE001  (a preconditioner that cannot be built counts as a failure)
        return "--"
    res = bicgstab(system.A, system.b, M=M, rel_tol=inner.rel_tol, max_iter=inner.max_iter)
    return res.iterations if res.converged else "--"


def mock_data_run(cfg, refines=None):
    """BiCGStab counts for prescribed VEF data under each continuous-solver mode."""
    refines = refines if refines is not None else tuple(cfg.mesh.refines)
    p = cfg.discretization.p
    kind = cfg.discretization.kind
    problem = CrookedPipeProblem(q=cfg.problem.q)
    quad = angular_quadrature(cfg.sn_order)
    modes = tuple(cfg.inner.modes)
    res = MockResult(modes)
    for r in refines:
        mesh = crooked_pipe_mesh(r)
        disc = VefDiscretization(mesh, p, problem.sigma_t, problem.sigma_a,
                                 penalty_scale=cfg.discretization.penalty_scale)
        sources = moment_sources(problem.q, problem.inflow, quad)
        system = disc.assemble(kind, mock_vef_data(), sources)
        diffusion = disc.assemble(kind, isotropic_data(), sources)
        counts = [_count(system, m, cfg) for m in modes]
        res.rows.append([mesh.ne, disc.Y.ndofs] + counts + [_count(diffusion, "usc", cfg)])
    return res


def first_outer_gap(cfg, refines=None):
    """Preconditioned iterations of the first physical VEF solve against diffusion."""
    refines = refines if refines is not None else tuple(cfg.mesh.refines)
    out = []
    for r in refines:
        state = pipe_state(cfg.discretization.p, r, cfg.discretization.kind, cfg)
        psi = state.sweeper.sweep(state.S @ np.zeros(state.disc.Y.ndofs), None)
        data = FluxVefData(state.T, state.quad, psi, isotropic_fallback=state.config.fixup)
        vef = state.disc.assemble(state.config.kind, data, state.sources)
        diff = state.disc.assemble(state.config.kind, isotropic_data(), state.sources)
        a, b = _count(vef, "usc", cfg), _count(diff, "usc", cfg)
        gap = a - b if isinstance(a, int) and isinstance(b, int) else "--"
        out.append([state.mesh.ne, a, b, gap])
    return out


# -- generic single run -------------------------------------------------------------------

def single_run(cfg):
    """One coupled solve of the configured problem; returns (state, varphi, log)."""
    name = cfg.run.problem
    p, kind = cfg.discretization.p, cfg.discretization.kind
    quad = angular_quadrature(cfg.sn_order)
    ocfg = cfg.outer_config(kind)
    override = None
    if name == "mms":
        mms = MmsDefinition(sigma_t=cfg.problem.sigma_t, sigma_s=cfg.problem.sigma_s)
        mesh = mms_mesh(cfg.mesh.n, cfg.mesh.order)
        transport, sigma_a = mms.transport(), mms.sigma_t - mms.sigma_s
    elif name == "difflim":
        prob = DiffusionLimitProblem(min(cfg.problem.eps))
        mesh = build_cartesian_mesh(cfg.mesh.n, cfg.mesh.n, ((0.0, 1.0), (0.0, 1.0)), 1)
        transport, sigma_a = prob.transport(), prob.sigma_a
    else:
        prob = CrookedPipeProblem(q=cfg.problem.q)
        mesh = crooked_pipe_mesh(cfg.mesh.refine)
        transport, sigma_a = prob.transport(), prob.sigma_a
        if name == "mock":
            override = mock_vef_data()
    state = VefTransportState(mesh, p, transport, sigma_a, quad, ocfg, vef_data_override=override,
                              penalty_scale=cfg.discretization.penalty_scale)
    try:
        varphi, _, log = fixed_point_solve(state)
    except OuterNotConverged as exc:
        return state, None, exc.log
    return state, varphi, log
