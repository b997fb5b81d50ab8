"""Discrete ordinates: angular quadrature, upwind DG sweeps, fixup and angular moments."""
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .fem import (FaceRule, FeSpace, VolumeRule, assemble_mixed_mass, as_coefficient,
                  default_quadrature_points, element_integral_weights, phys_grad)

FOUR_PI = 4.0 * np.pi

# first direction cosine and per-class point weights (octant weights sum to one),
# classes listed by descending sorted level index triple
_LS_TABLES = {
    4: (0.3500212, {(2, 1, 1): 1.0 / 3.0}),
    12: (0.1672126, {(6, 1, 1): 0.0707626, (5, 2, 1): 0.0558811, (4, 3, 1): 0.0373377,
                     (4, 2, 2): 0.0502819, (3, 3, 2): 0.0258513}),
}


@dataclass
class AngularQuadrature:
    omega: np.ndarray  # (nd, 3)
    weights: np.ndarray  # (nd,)
    order: int = 0
    folded: bool = False

    @property
    def size(self):
        return self.weights.size


def level_symmetric(N):
    """Level-symmetric S_N set on the full sphere, weights summing to 4 pi."""
    if N not in _LS_TABLES:
        raise ValueError(f"unsupported level-symmetric order {N}")
    mu1, table = _LS_TABLES[N]
    n = N // 2
    delta = 2.0 * (1.0 - 3.0 * mu1 ** 2) / (N - 2)
    mu = np.sqrt(mu1 ** 2 + np.arange(n) * delta)
    trip = [(i, j, k) for i in range(1, n + 1) for j in range(1, n + 1) for k in range(1, n + 1)
            if i + j + k == n + 2]
    classes = list(table)
    cls_of = [classes.index(tuple(sorted(t, reverse=True))) for t in trip]
    # enforce the even moment conditions exactly with a minimum-norm correction
    A = np.array([[sum(mu[t[0] - 1] ** (2 * k) for t, c in zip(trip, cls_of) if c == ci)
                   for ci in range(len(classes))] for k in range(n)])
    rhs = 1.0 / (2.0 * np.arange(n) + 1.0)
    w0 = np.array([table[c] for c in classes])
    w = w0 + np.linalg.lstsq(A, rhs - A @ w0, rcond=None)[0]
    oct_dirs = np.array([[mu[i - 1], mu[j - 1], mu[k - 1]] for i, j, k in trip])
    oct_w = w[cls_of]
    dirs, weights = [], []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                dirs.append(oct_dirs * [sx, sy, sz])
                weights.append(oct_w)
    weights = np.concatenate(weights)
    weights *= FOUR_PI / weights.sum()
    return AngularQuadrature(np.concatenate(dirs), weights, N)


def fold_polar(quad):
    """Keep the upper hemisphere with doubled weights (exact for z-symmetric problems)."""
    keep = quad.omega[:, 2] > 0
    return AngularQuadrature(quad.omega[keep].copy(), 2.0 * quad.weights[keep], quad.order, True)


# -- problem data -------------------------------------------------------------------

@dataclass
class TransportProblem:
    """Material data and sources.

    ``q`` and ``inflow`` are floats (isotropic constants) or callables
    ``f(x, omega)`` with ``x`` of shape (..., 2) and ``omega`` a 3-vector.
    """

    sigma_t: object
    sigma_s: object
    q: object = 0.0
    inflow: object = 0.0

    def sigma_a(self):
        st, ss = as_coefficient(self.sigma_t), as_coefficient(self.sigma_s)
        return lambda x, attr: st(x, attr) - ss(x, attr)


def _eval_dir(fn, x, omega):
    if callable(fn):
        return np.broadcast_to(np.asarray(fn(x, omega), dtype=float), x.shape[:-1])
    return np.full(x.shape[:-1], float(fn))


# -- ordering -------------------------------------------------------------------------

@dataclass
class SweepOrder:
    levels: list
    lagged: set = field(default_factory=set)

    @property
    def order(self):
        return np.concatenate(self.levels) if self.levels else np.zeros(0, int)


def order_graph(n, edges):
    """Topological levels of a directed graph with greedy cycle breaking.

    ``edges`` holds (upwind, downwind, tag) triples.  When no node is free,
    the remaining node with fewest unresolved in-edges has those edges marked
    lagged (their tags are returned) and is released.
    """
    indeg = np.zeros(n, int)
    out = defaultdict(list)
    incoming = defaultdict(list)
    for u, v, tag in edges:
        indeg[v] += 1
        out[u].append((v, tag))
        incoming[v].append((u, tag))
    done = np.zeros(n, bool)
    level = np.zeros(n, int)
    lagged = set()
    resolved = set()
    frontier = [i for i in range(n) if indeg[i] == 0]
    remaining = n
    levels_of = []
    while remaining:
        if not frontier:
            cand = [i for i in range(n) if not done[i]]
            pick = min(cand, key=lambda i: (indeg[i], i))
            for u, tag in incoming[pick]:
                if not done[u] and (u, pick, tag) not in resolved:
                    lagged.add(tag)
                    resolved.add((u, pick, tag))
            indeg[pick] = 0
            frontier = [pick]
        nxt = []
        for i in frontier:
            done[i] = True
            remaining -= 1
            levels_of.append(i)
            for v, tag in out[i]:
                if done[v] or (i, v, tag) in resolved:
                    continue
                resolved.add((i, v, tag))
                level[v] = max(level[v], level[i] + 1)
                indeg[v] -= 1
                if indeg[v] == 0:
                    nxt.append(v)
        frontier = nxt
    nlev = level.max() + 1 if n else 0
    levels = [np.array(sorted(np.flatnonzero(level == k))) for k in range(nlev)]
    return SweepOrder([lv for lv in levels if lv.size], lagged)


_TOL = 1e-12


def classify_faces(face_rule, omega):
    """Per interior face: +1 flow 1->2, -1 flow 2->1, 0 tangential; plus mixed-sign flags."""
    on = face_rule.normal @ omega[:2]  # (nf, q)
    pos = np.all(on > _TOL, axis=1)
    neg = np.all(on < -_TOL, axis=1)
    tang = np.all(np.abs(on) <= _TOL, axis=1)
    mixed = ~(pos | neg | tang)
    state = np.where(pos, 1, np.where(neg, -1, 0))
    if np.any(mixed):
        nq = on.shape[1]
        mid = on[:, nq // 2] if nq % 2 else on[:, nq // 2 - 1:nq // 2 + 1].mean(axis=1)
        mid = np.where(np.abs(mid) > _TOL, mid, on.mean(axis=1))
        state = np.where(mixed, np.where(mid >= 0, 1, -1), state)
    bon = face_rule.bnormal @ omega[:2]
    bstate = np.where(np.all(bon < -_TOL, axis=1), -1,
                      np.where(np.all(bon > _TOL, axis=1), 1, 0))
    bmixed = ~(np.all(bon < -_TOL, axis=1) | np.all(bon > _TOL, axis=1) | np.all(np.abs(bon) <= _TOL, axis=1))
    if np.any(bmixed):
        nq = bon.shape[1]
        bstate = np.where(bmixed, np.where(bon.mean(axis=1) >= 0, 1, -1), bstate)
    return state, mixed, bstate


def sweep_ordering(mesh, omega, face_rule=None):
    """Element levels and lagged interior faces for one direction."""
    if face_rule is None:
        face_rule = FaceRule(mesh, 2 * mesh.degree + 2)
    state, mixed, _ = classify_faces(face_rule, np.asarray(omega, dtype=float))
    inter = mesh.interior_faces
    edges = []
    for f in range(inter.shape[0]):
        if mixed[f] or state[f] == 0:
            continue
        a, b = inter[f, 0], inter[f, 2]
        edges.append((a, b, f) if state[f] > 0 else (b, a, f))
    order = order_graph(mesh.ne, edges)
    order.lagged |= set(np.flatnonzero(mixed).tolist())
    return order


# -- fixup ------------------------------------------------------------------------------

def zero_and_scale(coefs, weights):
    """Clip negative nodal values and rescale to keep each element integral.

    ``coefs`` and ``weights`` have shape (..., nd); weights are the element
    integrals of the basis functions.
    """
    c = np.asarray(coefs, dtype=float)
    w = np.broadcast_to(weights, c.shape)
    if not np.any(c < 0):
        return c.copy()
    before = np.sum(w * c, axis=-1, keepdims=True)
    clipped = np.maximum(c, 0.0)
    after = np.sum(w * clipped, axis=-1, keepdims=True)
    scale = np.where(after > 0, before / np.where(after > 0, after, 1.0), 0.0)
    out = np.where(before > 0, clipped * scale, 0.0)
    neg_any = np.any(c < 0, axis=-1, keepdims=True)
    return np.where(neg_any, out, c)


# -- sweeps ---------------------------------------------------------------------------------

class _DirectionClass:
    def __init__(self, dirs, order):
        self.dirs = np.asarray(dirs)
        self.order = order


class Sweeper:
    """Batched upwind DG sweeps for every ordinate of a quadrature set."""

    def __init__(self, space, quad, problem, fixup=False, qpts=None):
        if space.family != "dg" or space.vdim != 1:
            raise ValueError("transport needs a scalar DG space")
        self.space = space
        self.mesh = mesh = space.mesh
        self.quad = quad
        self.problem = problem
        self.fixup = fixup
        nq = qpts or default_quadrature_points(space.p, mesh.degree)
        self.vol = vol = VolumeRule(mesh, nq)
        self.faces = fr = FaceRule(mesh, nq)
        nd = space.nd
        B, Gref = space.eval_basis(vol.ref)
        G = phys_grad(Gref, vol.Finv)
        st = vol.eval_coefficient(problem.sigma_t)
        self.Mt = np.einsum("nq,qi,qj->nij", st * vol.wJ, B, B)
        # C[e, a, i, j] = int d_a v_i psi_j
        self.C = np.einsum("nq,nqia,qj->naij", vol.wJ, G, B)
        self.weights_int = element_integral_weights(space, vol)
        # interior face matrices, n points from side 1 to side 2
        s1, s2 = fr.side1, fr.side2
        b1, _ = space.eval_basis(s1.ref)
        b2, _ = space.eval_basis(s2.ref)
        wn = fr.wds[..., None] * fr.normal  # (nf, q, 2)
        self.N1 = np.einsum("fqa,fqi,fqj->faij", wn, b1, b1)
        self.N2 = np.einsum("fqa,fqi,fqj->faij", wn, b2, b2)
        self.X12 = np.einsum("fqa,fqi,fqj->faij", wn, b1, b2)  # test side 1, trial side 2
        self.X21 = np.einsum("fqa,fqi,fqj->faij", wn, b2, b1)
        bb, _ = space.eval_basis(fr.bside.ref)
        self.bbasis = bb
        self.Nb = np.einsum("fqa,fqi,fqj->faij", fr.bwds[..., None] * fr.bnormal, bb, bb)
        self.nd = nd
        self.ndir = quad.size
        self._build_classes()
        self._scatter = assemble_mixed_mass  # kept for subclasses
        self._fixed_rhs = None

    # classification -------------------------------------------------------------
    def _build_classes(self):
        groups = {}
        self.dir_state = []
        for d in range(self.ndir):
            state, mixed, bstate = classify_faces(self.faces, self.quad.omega[d])
            key = (state.tobytes(), mixed.tobytes(), bstate.tobytes())
            groups.setdefault(key, []).append(d)
            self.dir_state.append((state, mixed, bstate))
        inter = self.mesh.interior_faces
        self.classes = []
        for key, dirs in groups.items():
            state, mixed, bstate = self.dir_state[dirs[0]]
            edges = [((inter[f, 0], inter[f, 2], f) if state[f] > 0 else (inter[f, 2], inter[f, 0], f))
                     for f in range(inter.shape[0]) if state[f] != 0 and not mixed[f]]
            order = order_graph(self.mesh.ne, edges)
            order.lagged |= set(np.flatnonzero(mixed).tolist())
            cls = _DirectionClass(dirs, order)
            self._prepare_class(cls, state, bstate)
            self.classes.append(cls)

    def _prepare_class(self, cls, state, bstate):
        ne, nd = self.mesh.ne, self.nd
        inter = self.mesh.interior_faces
        bdr = self.mesh.boundary_faces
        # K[e, a] = C[e, a] - outflow face matrices (outward normal sign included)
        K = self.C.copy()
        out1 = state > 0
        out2 = state < 0
        np.add.at(K, inter[out1, 0], -self.N1[out1])
        np.add.at(K, inter[out2, 2], self.N2[out2])
        bout = bstate > 0
        np.add.at(K, bdr[bout, 0], -self.Nb[bout])
        cls.K = K
        # incoming couplings: (elem, upwind elem, face, matrix (2, nd, nd), outward sign)
        lag = cls.order.lagged
        inc_e, inc_u, inc_X, inc_lag = [], [], [], []
        for f in np.flatnonzero(state != 0):
            if state[f] > 0:  # side 2 receives from side 1, outward normal of side 2 is -n
                inc_e.append(inter[f, 2]); inc_u.append(inter[f, 0]); inc_X.append(-self.X21[f])
            else:
                inc_e.append(inter[f, 0]); inc_u.append(inter[f, 2]); inc_X.append(self.X12[f])
            inc_lag.append(f in lag)
        inc_e = np.array(inc_e, int)
        inc_u = np.array(inc_u, int)
        inc_X = np.array(inc_X).reshape(-1, 2, nd, nd)
        inc_lag = np.array(inc_lag, bool)
        cls.lag_e, cls.lag_u, cls.lag_X = inc_e[inc_lag], inc_u[inc_lag], inc_X[inc_lag]
        live = ~inc_lag
        e_live, u_live, X_live = inc_e[live], inc_u[live], inc_X[live]
        level_of = np.empty(ne, int)
        for k, lv in enumerate(cls.order.levels):
            level_of[lv] = k
        cls.level_of = level_of
        cls.inc = []
        for k, lv in enumerate(cls.order.levels):
            sel = np.flatnonzero(level_of[e_live] == k)
            pos = np.searchsorted(lv, e_live[sel])
            cls.inc.append((pos, u_live[sel], X_live[sel]))
        cls.binflow = np.flatnonzero(bstate < 0)

    # sources ---------------------------------------------------------------------------
    def fixed_source(self):
        """(ndir, ne, nd) fixed source plus boundary inflow terms, cached."""
        if self._fixed_rhs is not None:
            return self._fixed_rhs
        ne, nd = self.mesh.ne, self.nd
        vol, fr = self.vol, self.faces
        B, _ = self.space.eval_basis(vol.ref)
        out = np.zeros((self.ndir, ne, nd))
        q = self.problem.q
        if not callable(q):
            out += float(q) * (vol.wJ @ B)[None]
        bdr = self.mesh.boundary_faces
        for d in range(self.ndir):
            om = self.quad.omega[d]
            if callable(q):
                out[d] += np.einsum("nq,qi->ni", vol.wJ * _eval_dir(q, vol.x, om), B)
            inflow = self.dir_state[d][2] < 0
            if np.any(inflow) and (callable(self.problem.inflow) or self.problem.inflow != 0.0):
                bf = np.flatnonzero(inflow)
                fval = _eval_dir(self.problem.inflow, fr.bx[bf], om)
                on = fr.bnormal[bf] @ om[:2]
                contrib = -np.einsum("fq,fqi->fi", fr.bwds[bf] * on * fval, self.bbasis[bf])
                np.add.at(out[d], bdr[bf, 0], contrib)
        self._fixed_rhs = out
        return out

    def scattering_matrix(self, vef_space):
        """Mixed mass with coefficient sigma_s / 4 pi, test in the transport space."""
        ss = as_coefficient(self.problem.sigma_s)
        return assemble_mixed_mass(self.space, vef_space,
                                   lambda x, attr: ss(x, attr) / FOUR_PI, rule=self.vol)

    # sweep ---------------------------------------------------------------------------------
    def sweep(self, scatter_rhs=None, psi_prev=None):
        """One transport inversion for every ordinate.

        ``scatter_rhs`` is the (ndofs,) isotropic source vector in the transport
        space; ``psi_prev`` (ndir, ndofs) supplies lagged inflow.  Returns
        (ndir, ndofs) angular flux coefficients.
        """
        ne, nd = self.mesh.ne, self.nd
        rhs = self.fixed_source().copy()
        if scatter_rhs is not None:
            rhs += np.asarray(scatter_rhs).reshape(ne, nd)[None]
        psi = np.zeros((self.ndir, ne, nd))
        prev = None if psi_prev is None else np.asarray(psi_prev).reshape(self.ndir, ne, nd)
        omega = self.quad.omega
        for cls in self.classes:
            D = cls.dirs
            Om = omega[D, :2]
            b = rhs[D]
            if cls.lag_e.size and prev is not None:
                c = np.einsum("da,kaij,dkj->dki", Om, cls.lag_X, prev[D][:, cls.lag_u])
                np.add.at(b, (slice(None), cls.lag_e), -c)
            out = psi[D]
            for k, lv in enumerate(cls.order.levels):
                bl = b[:, lv]
                pos, ups, X = cls.inc[k]
                if pos.size:
                    c = np.einsum("da,kaij,dkj->dki", Om, X, out[:, ups])
                    np.add.at(bl, (slice(None), pos), -c)
                A = self.Mt[lv][None] - np.einsum("da,naij->dnij", Om, cls.K[lv])
                sol = np.linalg.solve(A, bl[..., None])[..., 0]
                if self.fixup:
                    sol = zero_and_scale(sol, self.weights_int[lv][None])
                out[:, lv] = sol
            psi[D] = out
        return psi.reshape(self.ndir, ne * nd)


def transport_sweep(sweeper, scatter_rhs=None, psi_prev=None):
    return sweeper.sweep(scatter_rhs, psi_prev)


# -- moments -------------------------------------------------------------------------------

@dataclass
class Moments:
    phi: np.ndarray
    J: np.ndarray  # (2, n)
    P: np.ndarray  # (3, 3, n)


def moments(psi, quad):
    """Zeroth, first and second angular moments as coefficient combinations."""
    psi = np.asarray(psi)
    w = quad.weights
    phi = w @ psi
    J = np.einsum("d,da,dn->an", w, quad.omega[:, :2], psi)
    P = np.einsum("d,da,db,dn->abn", w, quad.omega, quad.omega, psi)
    return Moments(phi, J, P)


def scattering_source(mixed_mass, varphi):
    """Isotropic scattering right-hand side in the transport space."""
    return mixed_mass @ np.asarray(varphi)
