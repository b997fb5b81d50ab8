"""VEF closures and the IP / BR2 / MDLDG / CG drift-diffusion discretizations."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import gauss_lobatto, tensor_points
from .fem import (FaceRule, FeSpace, VolumeRule, as_coefficient, boundary_dof_selector,
                  conforming_prolongation, default_quadrature_points, phys_grad, scatter)
from .linalg import (AMG_METHODS, ExactSolver, RichardsonSolver, SubspaceCorrection, bicgstab,
                     substitute, transpose, triple_product)
from .transport import FOUR_PI, moments

KINDS = ("ip", "br2", "mdldg", "cg", "cg-sym")


class NonPositiveFluxError(ValueError):
    """Scalar flux denominator is not positive where VEF data are needed."""


# -- VEF data ------------------------------------------------------------------------------

class VefData:
    """Interface: Eddington tensor, its divergence and the boundary factor at points."""

    def volume(self, elems, ref, Finv, x, attr):
        """E (n, q, 2, 2) and div E (n, q, 2)."""
        raise NotImplementedError

    def boundary(self, elems, ref, normal, x, attr):
        """E_b (nb, q)."""
        raise NotImplementedError


class PrescribedVefData(VefData):
    """Data given as point functions; divergence defaults to zero (piecewise constant E)."""

    def __init__(self, E, Eb, divE=None):
        self.E, self.Eb, self.divE = E, Eb, divE

    def volume(self, elems, ref, Finv, x, attr):
        E = np.broadcast_to(np.asarray(self.E(x, attr), dtype=float), x.shape[:-1] + (2, 2))
        if self.divE is None:
            dE = np.zeros(x.shape)
        else:
            dE = np.broadcast_to(np.asarray(self.divE(x, attr), dtype=float), x.shape)
        return E, dE

    def boundary(self, elems, ref, normal, x, attr):
        return np.broadcast_to(np.asarray(self.Eb(x, attr, normal), dtype=float), x.shape[:-1])


def isotropic_data():
    """E = I/3, E_b = 1/2: the diffusion closure."""
    return PrescribedVefData(lambda x, attr: np.eye(2) / 3.0, lambda x, attr, n: 0.5)


def _clip_closure(R):
    """Project interpolated nodal ratios (xx, xy, yy, zz) onto PSD, unit-trace tensors.

    Lagrange weights of degree > 1 are not convex, so interpolated ratios can
    leave the admissible set slightly; eigenvalues are clipped at zero and the
    trace restored.
    """
    xx, xy, yy, zz = R
    mid, rad = 0.5 * (xx + yy), np.sqrt(0.25 * (xx - yy) ** 2 + xy ** 2)
    lo, hi = np.maximum(mid - rad, 0.0), np.maximum(mid + rad, 0.0)
    # eigenvector of the larger eigenvalue
    ang = 0.5 * np.arctan2(2 * xy, xx - yy)
    c, s = np.cos(ang), np.sin(ang)
    zz = np.maximum(zz, 0.0)
    tr = lo + hi + zz
    lo, hi, zz = lo / tr, hi / tr, zz / tr
    E = np.stack([np.stack([hi * c * c + lo * s * s, (hi - lo) * c * s], -1),
                  np.stack([(hi - lo) * c * s, hi * s * s + lo * c * c], -1)], -2)
    return E, zz


def _rows(ref, k):
    """Per-element reference points are subset along with the elements."""
    return ref[k] if np.ndim(ref) == 3 else ref


class FluxVefData(VefData):
    """Data from directional fluxes; numerators and denominator interpolated independently.

    In elements where the interpolated scalar flux dips well below its
    smallest nodal value (steep gradients under an open basis), the nodal
    ratios are interpolated instead, which keeps E positive semidefinite.
    ``ratio="nodal"`` forces this everywhere. Non-positive nodal flux is an error
    unless ``isotropic_fallback`` is set, in which case such nodes take the
    isotropic closure (E = I/3, E_b = 1/2).
    """

    def __init__(self, space, quad, psi, isotropic_fallback=False, ratio="auto", floor=1e-8,
                 dip=0.5):
        self.space = space
        self.isotropic_fallback = isotropic_fallback
        self.ratio = ratio
        self.quad = quad
        self.psi = np.asarray(psi)
        mo = moments(self.psi, quad)
        self.phi = mo.phi
        # xx, xy, yy, zz numerators
        self.P = np.stack([mo.P[0, 0], mo.P[0, 1], mo.P[1, 1], mo.P[2, 2]])
        bad = ~(self.phi > 0)
        self.n_fallback = int(bad.sum())
        if isotropic_fallback:
            # blend toward the isotropic closure where phi is tiny; continuous in psi
            d = floor * max(float(np.max(self.phi, initial=0.0)), np.finfo(float).tiny)
            den = np.maximum(self.phi, 0.0) + d
            iso = np.array([1 / 3, 0.0, 1 / 3, 1 / 3])[:, None]
            self.E_nodal = (np.where(bad, 0.0, self.P) + d * iso) / den
            self.psi_nodal = (np.where(bad, 0.0, self.psi) + d / FOUR_PI) / den
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                safe = np.where(bad, np.nan, self.phi)
                self.E_nodal = self.P / safe
                self.psi_nodal = self.psi / safe
        # flag elements whose pointwise quotient misbehaves on a closed check lattice
        check = tensor_points(gauss_lobatto(3 * space.p + 4)[0])
        val, _ = space.eval_basis(check)
        nod = self.phi[space.dofs]
        self.dip = dip
        self.steep = np.any(~self._admissible(nod @ val.T, self.P[:, space.dofs] @ val.T,
                                              dip * nod.min(axis=1, keepdims=True)), axis=1)

    @staticmethod
    def _admissible(phi, P, phi_min=0.0, tol=1e-10):
        """Points where P/phi is a valid closure: phi above phi_min, 0 <= E <= I."""
        with np.errstate(divide="ignore", invalid="ignore"):
            xx, xy, yy, zz = (P[i] / phi for i in range(4))
            mid, rad = 0.5 * (xx + yy), np.sqrt(0.25 * (xx - yy) ** 2 + xy ** 2)
            ok = (phi > phi_min) & (mid - rad >= -tol) & (mid + rad <= 1 + tol)
            ok &= (zz >= -tol) & (zz <= 1 + tol)
        return ok

    def _eval(self, coefs, elems, ref, Finv=None):
        val, gref = self.space.eval_basis(ref)
        c = coefs[..., self.space.dofs[elems]]  # (..., n, nd)
        if val.ndim == 2:
            u = np.einsum("qi,...ni->...nq", val, c)
        else:
            u = np.einsum("nqi,...ni->...nq", val, c)
        if Finv is None:
            return u
        G = phys_grad(gref, Finv)
        return u, np.einsum("nqia,...ni->...nqa", G, c)

    def _nodal_switch(self, phi, elems, P=None):
        """Mask of elements that need nodal ratios; raises on non-positive nodal flux."""
        elems = np.atleast_1d(elems)
        floor = self.dip * self.phi[self.space.dofs[elems]].min(axis=1)[:, None]
        ok = phi > floor if P is None else self._admissible(phi, P, floor)
        nodal_bad = np.any(~(self.phi[self.space.dofs[elems]] > 0), axis=1)
        if np.any(nodal_bad) and not self.isotropic_fallback:
            e = int(elems[np.nonzero(nodal_bad)[0][0]])
            raise NonPositiveFluxError(f"non-positive scalar flux in element {e}")
        sw = np.any(~ok, axis=-1) | nodal_bad | self.steep[elems]
        return np.ones_like(sw) if self.ratio == "nodal" else sw

    def volume(self, elems, ref, Finv, x, attr):
        phi, gphi = self._eval(self.phi, elems, ref, Finv)
        P, gP = self._eval(self.P, elems, ref, Finv)
        sw = self._nodal_switch(phi, elems, P)
        Pm = np.stack([np.stack([P[0], P[1]], -1), np.stack([P[1], P[2]], -1)], -2)
        # div P: column divergences (P symmetric)
        divP = np.stack([gP[0, ..., 0] + gP[1, ..., 1], gP[1, ..., 0] + gP[2, ..., 1]], -1)
        with np.errstate(divide="ignore", invalid="ignore"):
            E = Pm / phi[..., None, None]
            Pg = np.einsum("...ab,...b->...a", Pm, gphi)
            divE = (divP * phi[..., None] - Pg) / phi[..., None] ** 2
        if np.any(sw):
            k = np.nonzero(sw)[0]
            sub = np.atleast_1d(elems)[k]
            R, gR = self._eval(self.E_nodal, sub, _rows(ref, k), Finv[k])
            E[k] = _clip_closure(R)[0]
            divE[k] = np.stack([gR[0, ..., 0] + gR[1, ..., 1], gR[1, ..., 0] + gR[2, ..., 1]], -1)
        return E, divE

    def eddington_zz(self, elems, ref):
        phi = self._eval(self.phi, elems, ref)
        sw = self._nodal_switch(phi, elems)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self._eval(self.P[3], elems, ref) / phi
        if np.any(sw):
            R = self._eval(self.E_nodal, np.atleast_1d(elems)[sw], _rows(ref, sw))
            out[sw] = _clip_closure(R)[1]
        return out

    def boundary(self, elems, ref, normal, x, attr):
        phi = self._eval(self.phi, elems, ref)
        sw = self._nodal_switch(phi, elems)
        on = np.abs(np.einsum("da,bqa->dbq", self.quad.omega[:, :2], normal))
        psi = self._eval(self.psi, elems, ref)  # (ndir, nb, q)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.einsum("d,dbq->bq", self.quad.weights, on * psi) / phi
        if np.any(sw):
            r = self._eval(self.psi_nodal, np.atleast_1d(elems)[sw], _rows(ref, sw))
            out[sw] = np.clip(np.einsum("d,dbq->bq", self.quad.weights, on[:, sw] * r), 0.0, 1.0)
        return out


def compute_vef_data(space, quad, psi, isotropic_fallback=False):
    return FluxVefData(space, quad, psi, isotropic_fallback)


# -- sources ----------------------------------------------------------------------------------

@dataclass
class MomentSources:
    """Q0(x, attr), Q1(x, attr) -> (..., 2) and g(x, normal) on the boundary."""

    Q0: object
    Q1: object
    g: object


def zero_sources():
    return MomentSources(lambda x, a: np.zeros(x.shape[:-1]), lambda x, a: np.zeros(x.shape),
                         lambda x, n: np.zeros(x.shape[:-1]))


def moment_sources(q, f, quad):
    """Angular moments of a fixed source and the incoming partial current of an inflow."""
    w, om = quad.weights, quad.omega

    def ev(fn, x, o):
        if callable(fn):
            return np.broadcast_to(np.asarray(fn(x, o), dtype=float), x.shape[:-1])
        return np.full(x.shape[:-1], float(fn))

    if not callable(q):
        Q0 = lambda x, a: np.full(x.shape[:-1], float(q) * w.sum())
        Q1 = lambda x, a: np.broadcast_to(float(q) * (w @ om[:, :2]), x.shape).copy()
    else:
        def Q0(x, a):
            return sum(w[d] * ev(q, x, om[d]) for d in range(w.size))

        def Q1(x, a):
            return sum(w[d] * ev(q, x, om[d])[..., None] * om[d, :2] for d in range(w.size))

    def g(x, n):
        out = np.zeros(x.shape[:-1])
        for d in range(w.size):
            on = n @ om[d, :2]
            inc = on < 0
            if np.any(inc):
                out += np.where(inc, w[d] * on * ev(f, x, om[d]), 0.0)
        return out

    return MomentSources(Q0, Q1, g)


# -- discretization context -------------------------------------------------------------------

@dataclass
class VefSystem:
    A: sp.csr_matrix
    b: np.ndarray
    kind: str
    space: FeSpace
    disc: object = None
    data: object = None
    Z: object = None  # maps the solution space into the closed DG space

    def to_dg(self, x):
        return x if self.Z is None else self.Z @ x


class VefDiscretization:
    """Spaces, quadrature and geometry needed to assemble any VEF variant."""

    def __init__(self, mesh, p, sigma_t, sigma_a, penalty_scale=1.0, eta=4.0,
                 upwind=(np.cos(np.pi / 4), np.sin(np.pi / 4)), qpts=None):
        self.mesh = mesh
        self.p = p
        self.sigma_t = as_coefficient(sigma_t)
        self.sigma_a = as_coefficient(sigma_a)
        self.penalty_scale = penalty_scale
        self.eta = eta
        self.upwind = np.asarray(upwind, dtype=float)
        self.Y = FeSpace(mesh, p, "dg", "closed")
        self.V = FeSpace(mesh, p, "h1", "closed")
        self.W = FeSpace(mesh, p, "dg", "closed", vdim=2)
        self.Z = conforming_prolongation(self.V, self.Y)
        self.bdofs = boundary_dof_selector(self.Y)
        n = qpts or default_quadrature_points(p, mesh.degree)
        self.vol = VolumeRule(mesh, n)
        self.faces = FaceRule(mesh, n)
        self._geometry()

    # precomputed basis data ----------------------------------------------------------
    def _geometry(self):
        Y, vol, fr = self.Y, self.vol, self.faces
        self.B, gref = Y.eval_basis(vol.ref)
        self.G = phys_grad(gref, vol.Finv)
        self.st = self.sigma_t(vol.x, vol.attr)
        self.sa = self.sigma_a(vol.x, vol.attr)
        if np.any(self.st <= 0):
            raise ValueError("total cross section must be positive")
        self.sides = []
        for side in (fr.side1, fr.side2):
            b, g = Y.eval_basis(side.ref)
            G = phys_grad(g, side.Finv)
            st = self.sigma_t(side.x, side.attr)
            self.sides.append((side, b, G, st))
        self.bb, _ = Y.eval_basis(fr.bside.ref)
        # element-average total cross section for the penalty
        self.st_elem = np.sum(self.st * vol.wJ, axis=1) / np.sum(vol.wJ, axis=1)
        self.h_elem = self.mesh.characteristic_lengths()
        mid = fr.normal[:, fr.normal.shape[1] // 2] if fr.nf else np.zeros((0, 2))
        if fr.nf and fr.normal.shape[1] % 2 == 0:
            k = fr.normal.shape[1] // 2
            mid = 0.5 * (fr.normal[:, k - 1] + fr.normal[:, k])
        self.beta_upwind = np.where(mid @ self.upwind >= 0, 0.5, -0.5)
        self._mass_inv = None
        self._mass_t_inv = None

    def penalty(self, kappa_scale=None):
        """Per interior face (p+1)^2 / (sigma_t h_e) averaged over the two sides."""
        c = self.penalty_scale if kappa_scale is None else kappa_scale
        k = (self.p + 1) ** 2 / (self.st_elem * self.h_elem)
        inter = self.mesh.interior_faces
        return c * 0.5 * (k[inter[:, 0]] + k[inter[:, 2]])

    def boundary_penalty(self):
        k = (self.p + 1) ** 2 / (self.st_elem * self.h_elem)
        return self.penalty_scale * k[self.mesh.boundary_faces[:, 0]]

    def w_mass_inverse(self, weighted=False):
        """Block inverse of the (optionally sigma_t weighted) W_p mass."""
        attr = "_mass_t_inv" if weighted else "_mass_inv"
        if getattr(self, attr) is None:
            c = self.vol.wJ * (self.st if weighted else 1.0)
            blocks = np.einsum("nq,qi,qj->nij", c, self.B, self.B)
            inv = np.linalg.inv(blocks)
            W = self.W
            rows, cols, vals = [], [], []
            for c in range(2):
                d = c * W.nscalar + W.dofs
                rows.append(np.broadcast_to(d[:, :, None], inv.shape).ravel())
                cols.append(np.broadcast_to(d[:, None, :], inv.shape).ravel())
                vals.append(inv.ravel())
            M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(W.ndofs, W.ndofs))
            M.sort_indices()
            setattr(self, attr, (M, inv))
        return getattr(self, attr)

    # data at points ----------------------------------------------------------------------
    def _volume_data(self, data):
        vol = self.vol
        return data.volume(vol.elems, vol.ref, vol.Finv, vol.x, vol.attr)

    def _side_data(self, data, k):
        side = self.sides[k][0]
        return data.volume(side.elems, side.ref, side.Finv, side.x, side.attr)

    def _boundary_data(self, data):
        fr = self.faces
        return data.boundary(fr.bside.elems, fr.bside.ref, fr.bnormal, fr.bx, fr.bside.attr)

    # assembly ------------------------------------------------------------------------------
    def _shape(self):
        return (self.Y.ndofs, self.Y.ndofs)

    def volume_matrix(self, data, advective=True):
        E, dE = self._volume_data(data)
        w = self.vol.wJ / self.st
        EG = np.einsum("nqab,nqjb->nqja", E, self.G)
        if advective:
            EG = EG + dE[:, :, None, :] * self.B[None, :, :, None]
        K = np.einsum("nq,nqia,nqja->nij", w, self.G, EG)
        K += np.einsum("nq,qi,qj->nij", self.sa * self.vol.wJ, self.B, self.B)
        d = self.Y.dofs
        return scatter(K, d, d, self._shape())

    def boundary_matrix(self, data):
        Eb = self._boundary_data(data)
        fr = self.faces
        blocks = np.einsum("fq,fqi,fqj->fij", fr.bwds * Eb, self.bb, self.bb)
        d = self.Y.dofs[fr.bside.elems]
        return scatter(blocks, d, d, self._shape())

    def face_matrix(self, data, kappa=None, beta=None):
        """Interior-face consistency terms plus optional penalty and LDG upwinding."""
        fr = self.faces
        nf = fr.nf
        if nf == 0:
            return sp.csr_matrix(self._shape())
        beta = np.zeros(nf) if beta is None else np.broadcast_to(beta, (nf,))
        n = fr.normal
        sign = (1.0, -1.0)
        per = []
        for k in range(2):
            side, b, G, st = self.sides[k]
            E, dE = self._side_data(data, k)
            En = np.einsum("fqab,fqb->fqa", E, n)
            flux = (np.einsum("fqjb,fqb->fqj", G, En) + (dE * n).sum(-1)[..., None] * b) / st[..., None]
            per.append((side, b, G, st, En, flux))
        A = None
        for s in range(2):
            side_s, b_s, G_s, st_s, _, _ = per[s]
            om_s = 0.5 + beta * sign[s]
            for t in range(2):
                side_t, b_t, _, _, En_t, flux_t = per[t]
                om_t = 0.5 + beta * sign[t]
                blk = -sign[s] * om_t[:, None, None] * np.einsum("fq,fqi,fqj->fij", fr.wds, b_s, flux_t)
                gEn = np.einsum("fqia,fqa->fqi", G_s, En_t) / st_s[..., None]
                blk -= sign[t] * om_s[:, None, None] * np.einsum("fq,fqi,fqj->fij", fr.wds, gEn, b_t)
                if kappa is not None:
                    kap = np.broadcast_to(kappa, (nf,))
                    blk += sign[s] * sign[t] * np.einsum("f,fq,fqi,fqj->fij", kap, fr.wds, b_s, b_t)
                M = scatter(blk, self.Y.dofs[side_s.elems], self.Y.dofs[side_t.elems], self._shape())
                A = M if A is None else A + M
        return A.tocsr()

    def rhs(self, sources, beta=None):
        vol, fr = self.vol, self.faces
        Q0 = np.broadcast_to(sources.Q0(vol.x, vol.attr), vol.x.shape[:-1])
        Q1 = np.broadcast_to(sources.Q1(vol.x, vol.attr), vol.x.shape)
        bl = np.einsum("nq,qi->ni", vol.wJ * Q0, self.B)
        bl += np.einsum("nq,nqia,nqa->ni", vol.wJ / self.st, self.G, Q1)
        b = np.zeros(self.Y.ndofs)
        np.add.at(b, self.Y.dofs, bl)
        nf = fr.nf
        if nf:
            beta = np.zeros(nf) if beta is None else np.broadcast_to(beta, (nf,))
            sign = (1.0, -1.0)
            q1n = []
            for k in range(2):
                side, _, _, st = self.sides[k]
                q = np.broadcast_to(sources.Q1(side.x, side.attr), side.x.shape)
                q1n.append((q * fr.normal).sum(-1) / st)
            for s in range(2):
                side, bs, _, _ = self.sides[s]
                avg = sum((0.5 + beta * sign[t])[:, None] * q1n[t] for t in range(2))
                contrib = -sign[s] * np.einsum("fq,fqi->fi", fr.wds * avg, bs)
                np.add.at(b, self.Y.dofs[side.elems], contrib)
        g = np.broadcast_to(sources.g(fr.bx, fr.bnormal), fr.bx.shape[:-1])
        np.add.at(b, self.Y.dofs[fr.bside.elems], -2.0 * np.einsum("fq,fqi->fi", fr.bwds * g, self.bb))
        return b

    # lifting operators ----------------------------------------------------------------------
    def _face_jump_lift(self, beta=None, data=None):
        """Sparse W x Y matrices of the lifted jumps.

        Without ``data``: v^T A u = -int ({v.n} + beta [v.n]) [u]-type operator;
        with ``data``: the same pairing against [E phi n].
        """
        fr = self.faces
        nf = fr.nf
        beta = np.zeros(nf) if beta is None else np.broadcast_to(beta, (nf,))
        sign = (1.0, -1.0)
        W, Y = self.W, self.Y
        shape = (W.ndofs, Y.ndofs)
        out = None
        vecs = []
        for t in range(2):
            if data is None:
                vecs.append(np.broadcast_to(fr.normal, fr.normal.shape))
            else:
                E, _ = self._side_data(data, t)
                vecs.append(np.einsum("fqab,fqb->fqa", E, fr.normal))
        for s in range(2):
            side_s, b_s, _, _ = self.sides[s]
            om_s = 0.5 + beta * sign[s]
            for t in range(2):
                side_t, b_t, _, _ = self.sides[t]
                for c in range(2):
                    blk = -sign[t] * om_s[:, None, None] * np.einsum(
                        "fq,fqi,fqj->fij", fr.wds * vecs[t][..., c], b_s, b_t)
                    rows = c * W.nscalar + W.dofs[side_s.elems]
                    M = scatter(blk, rows, Y.dofs[side_t.elems], shape)
                    out = M if out is None else out + M
        return out.tocsr()

    def lift_matrix(self):
        """A with v^T A u = -sum_f int_f {v.n}[u] over interior faces."""
        return self._face_jump_lift()

    def br2_face_blocks(self):
        """Per-face eta A_f^T M^{-1} A_f blocks over the dofs of the two adjacent elements."""
        fr = self.faces
        _, inv = self.w_mass_inverse(weighted=False)
        sign = (1.0, -1.0)
        nd = self.Y.nd
        # Af[f, s, c, i, t, j]
        Af = np.zeros((fr.nf, 2, 2, nd, 2, nd))
        for s in range(2):
            _, b_s, _, _ = self.sides[s]
            for t in range(2):
                _, b_t, _, _ = self.sides[t]
                Af[:, s, :, :, t, :] = -0.5 * sign[t] * np.einsum(
                    "fq,fqc,fqi,fqj->fcij", fr.wds, fr.normal, b_s, b_t)
        elems = (fr.side1.elems, fr.side2.elems)
        blocks = np.zeros((fr.nf, 2, nd, 2, nd))
        for s in range(2):
            Minv = inv[elems[s]]  # (nf, nd, nd)
            blocks += np.einsum("fcitj,fik,fckul->ftjul", Af[:, s], Minv, Af[:, s])
        dofs = np.concatenate([self.Y.dofs[elems[0]], self.Y.dofs[elems[1]]], axis=1)
        return dofs, self.eta * blocks.reshape(fr.nf, 2 * nd, 2 * nd)

    def br2_stabilization(self):
        dofs, blocks = self.br2_face_blocks()
        return scatter(blocks, dofs, dofs, self._shape())

    def mdldg_stabilization(self, data, beta=None):
        beta = self.beta_upwind if beta is None else beta
        AL = self._face_jump_lift(beta)
        BL = self._face_jump_lift(beta, data)
        Mt_inv, _ = self.w_mass_inverse(weighted=True)
        return triple_product(transpose(AL), Mt_inv, BL)

    # public assembly ------------------------------------------------------------------------
    def assemble_family(self, data, sources, kappa=None, beta=None, stabilization=None):
        """Generic member of the DG family: penalty kappa, LDG upwinding beta, extra stabilization."""
        A = self.volume_matrix(data) + self.boundary_matrix(data) + self.face_matrix(data, kappa, beta)
        if stabilization is not None:
            A = A + stabilization
        A = A.tocsr()
        A.sort_indices()
        return A, self.rhs(sources, beta)

    def symmetrized_cg(self, data):
        A = self.volume_matrix(data, advective=False) + self.boundary_matrix(data)
        return triple_product(transpose(self.Z), A, self.Z)

    def assemble(self, kind, data, sources, kappa_scale=None):
        kind = kind.lower()
        if kind == "ip":
            A, b = self.assemble_family(data, sources, kappa=self.penalty(kappa_scale))
            return VefSystem(A, b, kind, self.Y, self, data)
        if kind == "br2":
            A, b = self.assemble_family(data, sources, stabilization=self.br2_stabilization())
            return VefSystem(A, b, kind, self.Y, self, data)
        if kind == "mdldg":
            beta = self.beta_upwind
            A, b = self.assemble_family(data, sources, beta=beta,
                                        stabilization=self.mdldg_stabilization(data, beta))
            return VefSystem(A, b, kind, self.Y, self, data)
        if kind == "ldg":
            beta = self.beta_upwind
            A, b = self.assemble_family(data, sources, kappa=self.penalty(kappa_scale), beta=beta,
                                        stabilization=self.mdldg_stabilization(data, beta))
            return VefSystem(A, b, kind, self.Y, self, data)
        if kind in ("cg", "cg-sym"):
            if kind == "cg":
                A, b = self.assemble_family(data, sources)
                Zt = transpose(self.Z)
                Acg = triple_product(Zt, A, self.Z)
                return VefSystem(Acg, Zt @ b, kind, self.V, self, data, self.Z)
            b = transpose(self.Z) @ self.rhs(sources)
            return VefSystem(self.symmetrized_cg(data), b, kind, self.V, self, data, self.Z)
        raise ValueError(f"unknown VEF discretization {kind!r}")


def assemble(kind, data, sigma_t, sigma_a, sources, mesh, p, **kw):
    """One-shot assembly; builds a fresh discretization context."""
    return VefDiscretization(mesh, p, sigma_t, sigma_a, **kw).assemble(kind, data, sources)


def penalty(disc, kappa_scale=None):
    return disc.penalty(kappa_scale)


# -- solution --------------------------------------------------------------------------------

PRECONDITIONERS = ("usc", "usc-sym", "usc-sym3", "exact", "substitute", "none")


@dataclass
class SolverConfig:
    method: str = "bicgstab"  # or "direct"
    precond: str = "auto"
    rel_tol: float = 1e-8
    max_iter: int = 2000
    inner_k: int = 3
    amg: str = "air"  # "sa" or "two-level"

    def __post_init__(self):
        if self.method not in ("bicgstab", "direct"):
            raise ValueError(f"unknown inner method {self.method!r}")
        if self.amg not in AMG_METHODS:
            raise ValueError(f"unknown AMG method {self.amg!r}")
        if self.precond != "auto" and self.precond not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.precond!r}")

    def resolve_precond(self, kind):
        if self.precond != "auto":
            return self.precond
        return "usc" if kind in ("ip", "br2", "ldg") else "substitute"


@dataclass
class SolveStats:
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0
    precond: str = ""


class VefSolveError(RuntimeError):
    pass


def build_preconditioner(system, mode, k=3, amg="air"):
    A = system.A
    disc = system.disc
    if mode == "none":
        return None
    if mode == "substitute":
        bs = disc.Y.nd if system.kind in ("ip", "br2", "mdldg", "ldg") else 1
        return substitute(A, amg, bs)
    if system.kind in ("cg", "cg-sym"):
        if mode == "exact":
            return ExactSolver(A)
        if mode in ("usc", "usc-sym"):
            return substitute(A if mode == "usc" else disc.symmetrized_cg(system.data), amg)
        if mode == "usc-sym3":
            return RichardsonSolver(A, substitute(disc.symmetrized_cg(system.data), amg), k)
        raise ValueError(f"preconditioner {mode!r} not available for continuous systems")
    Av = SubspaceCorrection.coarse_operator(A, disc.Z)
    if mode == "exact":
        solver = ExactSolver(Av)
    elif mode == "usc":
        solver = substitute(Av, amg)
    elif mode == "usc-sym":
        solver = substitute(disc.symmetrized_cg(system.data), amg)
    elif mode == "usc-sym3":
        solver = RichardsonSolver(Av, substitute(disc.symmetrized_cg(system.data), amg), k)
    else:
        raise ValueError(f"unknown preconditioner {mode!r}")
    return SubspaceCorrection(A, disc.Z, disc.bdofs, solver)


def solve_vef(system, config=None, x0=None):
    """Solve an assembled system; returns (solution in the system space, stats)."""
    config = config or SolverConfig()
    if not np.all(np.isfinite(system.b)):
        raise VefSolveError(f"{system.kind}: non-finite right-hand side")
    if config.method == "direct":
        x = ExactSolver(system.A)(system.b)
        return x, SolveStats(0, True, float(np.linalg.norm(system.b - system.A @ x)), "direct")
    mode = config.resolve_precond(system.kind)
    M = build_preconditioner(system, mode, config.inner_k, config.amg)
    res = bicgstab(system.A, system.b, M=M, x0=x0, rel_tol=config.rel_tol, max_iter=config.max_iter)
    return res.x, SolveStats(res.iterations, res.converged, res.residual, mode)
