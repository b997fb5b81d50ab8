"""Outer iteration coupling transport sweeps to a VEF solve."""
import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .fem import FeSpace, assemble_mass
from .transport import Sweeper, moments
from .vef import (FluxVefData, SolverConfig, VefDiscretization, VefSolveError, isotropic_data,
                  moment_sources, solve_vef)


NORMS = ("max-abs", "max-rel", "l2-rel")


class OuterNotConverged(RuntimeError):
    def __init__(self, msg, log):
        super().__init__(msg)
        self.log = log


@dataclass
class OuterConfig:
    tol: float = 1e-6
    max_outer: int = 200
    anderson: int = 0
    augmented: bool = False
    sweeps: int = 1
    kind: str = "ip"
    fixup: bool = False
    norm: str = "l2-rel"  # or "max-abs", "max-rel"
    inner: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"unknown convergence norm {self.norm!r}")
        if self.anderson < 0:
            raise ValueError("Anderson window must be >= 0")
        if self.sweeps not in (1, 2, 3):
            raise ValueError("sweeps per outer must be 1, 2 or 3")


@dataclass
class OuterRecord:
    outer: int
    residual: float
    inner_iterations: int
    sweeps: int
    wall_time: float
    flux_gap: float


@dataclass
class IterationLog:
    records: list = field(default_factory=list)
    converged: bool = False

    @property
    def outers(self):
        return len(self.records)

    def inner_counts(self):
        return [r.inner_iterations for r in self.records]

    def inner_summary(self):
        c = np.array(self.inner_counts(), dtype=float)
        if c.size == 0:
            return 0, 0, 0.0
        return int(c.max()), int(c.min()), float(c.mean())

    def write_csv(self, dest, meta=None):
        fh = open(dest, "w", newline="") if isinstance(dest, str) else dest
        try:
            for k, v in (meta or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["outer", "residual", "inner_iterations", "sweeps", "wall_time", "flux_gap"])
            for r in self.records:
                w.writerow([r.outer, f"{r.residual:.6e}", r.inner_iterations, r.sweeps,
                            f"{r.wall_time:.4f}", f"{r.flux_gap:.6e}"])
        finally:
            if isinstance(dest, str):
                fh.close()


class VefTransportState:
    """Everything needed to evaluate the fixed-point map for one problem."""

    def __init__(self, mesh, p, transport, sigma_a, quad, config, vef_data_override=None,
                 penalty_scale=1.0):
        self.mesh = mesh
        self.p = p
        self.config = config
        self.quad = quad
        self.transport = transport
        self.T = FeSpace(mesh, p, "dg", "open")
        self.sweeper = Sweeper(self.T, quad, transport, fixup=config.fixup)
        self.disc = VefDiscretization(mesh, p, transport.sigma_t, sigma_a, penalty_scale=penalty_scale)
        self.sources = moment_sources(transport.q, transport.inflow, quad)
        self.S = self.sweeper.scattering_matrix(self.disc.Y)
        self.M = assemble_mass(self.disc.Y, 1.0, self.disc.vol)
        self.override = vef_data_override
        self._BT, _ = self.T.eval_basis(self.disc.vol.ref)

    def norm(self, v):
        return float(np.sqrt(max(v @ (self.M @ v), 0.0)))

    def change(self, new, old):
        """Convergence measure of one outer step."""
        if self.config.norm == "max-abs":
            return float(np.max(np.abs(new - old))) if new.size else 0.0
        if self.config.norm == "max-rel":
            top = float(np.max(np.abs(new))) if new.size else 0.0
            diff = float(np.max(np.abs(new - old))) if new.size else 0.0
            return 0.0 if diff == 0.0 else diff / top if top > 0 else np.inf
        diff, size = self.norm(new - old), self.norm(new)
        return 0.0 if diff == 0.0 else diff / size if size > 0 else np.inf

    def flux_gap(self, phi_t, varphi):
        """L2 distance between the transport moment and the VEF scalar flux."""
        vol = self.disc.vol
        a = np.einsum("qi,ni->nq", self._BT, phi_t[self.T.dofs])
        b = np.einsum("qi,ni->nq", self.disc.B, varphi[self.disc.Y.dofs])
        return float(np.sqrt(np.sum(vol.wJ * (a - b) ** 2)))

    def apply_G(self, varphi, psi_prev=None, x0=None):
        """Sweep(s) with scattering from varphi, then the VEF solve.

        Returns (varphi_next, psi, raw solution for warm starts, stats, phi_t).
        """
        rhs = self.S @ varphi
        psi = psi_prev
        for _ in range(self.config.sweeps):
            psi = self.sweeper.sweep(rhs, psi)
        if self.override is not None:
            data = self.override
        elif not np.any(psi):
            # no particles anywhere: the closure is undefined but the VEF solution is zero anyway
            data = isotropic_data()
        else:
            data = FluxVefData(self.T, self.quad, psi, isotropic_fallback=self.config.fixup)
        system = self.disc.assemble(self.config.kind, data, self.sources)
        try:
            x, stats = solve_vef(system, self.config.inner, x0)
        except Exception as exc:
            raise VefSolveError(f"{self.config.kind} solve failed on {self.mesh.ne} elements, "
                                f"p={self.p}: {exc}") from exc
        phi_t = moments(psi, self.quad).phi
        return system.to_dg(x), psi, x, stats, phi_t


def apply_G(varphi, state, psi_prev=None, x0=None):
    return state.apply_G(varphi, psi_prev, x0)


class Anderson:
    """Type-II Anderson mixing on a window of residual differences."""

    def __init__(self, window):
        self.window = window
        self.dF, self.dG = [], []
        self.f_prev = self.g_prev = None

    def update(self, x, gx):
        f = gx - x
        if self.window == 0:
            return gx
        if self.f_prev is not None:
            self.dF.append(f - self.f_prev)
            self.dG.append(gx - self.g_prev)
            if len(self.dF) > self.window:
                self.dF.pop(0)
                self.dG.pop(0)
        self.f_prev, self.g_prev = f, gx
        return anderson_update(self.dF, self.dG, f, gx)


def anderson_update(dF, dG, f, gx, rcond=1e-12):
    """x_next = G(x) - dG gamma with gamma minimizing ||f - dF gamma||.

    Columns are dropped oldest-first while the least-squares system is
    rank deficient.
    """
    dF, dG = list(dF), list(dG)
    while dF:
        A = np.stack(dF, axis=1)
        Q, R = np.linalg.qr(A)
        d = np.abs(np.diag(R))
        if d.min() > rcond * max(d.max(), np.finfo(float).tiny) and d.max() > 0:
            gamma = np.linalg.solve(R, Q.T @ f)
            return gx - np.stack(dG, axis=1) @ gamma
        dF.pop(0)
        dG.pop(0)
    return gx


def fixed_point_solve(state, varphi0=None, raise_on_failure=True):
    """Iterate the fixed-point map until successive iterates agree to the tolerance.

    Returns (varphi, psi, log).
    """
    cfg = state.config
    ny = state.disc.Y.ndofs
    varphi = np.zeros(ny) if varphi0 is None else np.asarray(varphi0, dtype=float).copy()
    psi = None
    x0 = None
    acc = Anderson(cfg.anderson)
    log = IterationLog()
    for k in range(cfg.max_outer):
        t0 = time.perf_counter()
        gphi, psi_new, x0, stats, phi_t = state.apply_G(varphi, psi, x0)
        if cfg.augmented:
            z = np.concatenate([varphi, np.zeros(psi_new.size) if psi is None else psi.ravel()])
            gz = np.concatenate([gphi, psi_new.ravel()])
            znew = acc.update(z, gz)
            new, psi = znew[:ny], znew[ny:].reshape(psi_new.shape)
        else:
            new = acc.update(varphi, gphi)
            psi = psi_new
        res = state.change(new, varphi)
        varphi = new
        log.records.append(OuterRecord(k + 1, res, stats.iterations, cfg.sweeps,
                                       time.perf_counter() - t0, state.flux_gap(phi_t, gphi)))
        if res <= cfg.tol:
            log.converged = True
            break
    if not log.converged and raise_on_failure:
        raise OuterNotConverged(f"no convergence in {cfg.max_outer} outer iterations", log)
    return varphi, psi, log
