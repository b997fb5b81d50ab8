"""Finite element spaces, quadrature-driven integration and assembly helpers.

Three families are used on the same mesh:

* DG scalar space (``family="dg"``), element-private dofs, open or closed basis;
* DG vector space (``family="dg", vdim=2``), stored component-major;
* continuous space (``family="h1"``), closed basis, shared lattice dofs merged.
"""
import inspect
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import Basis1D, gauss_legendre, tensor_eval, tensor_points, tensor_rule
from .mesh import _normals, face_ref_points, merge_coincident


def default_quadrature_points(p, m):
    """Points per direction for degree-p fields on degree-m geometry."""
    return max(2 * p + 2 * m, 2)


# -- coefficients -------------------------------------------------------------

class PiecewiseConstant:
    """Coefficient constant on each element attribute."""

    def __init__(self, values):
        self.values = dict(values)

    def __call__(self, x, attr):
        attr = np.broadcast_to(attr, np.shape(x)[:-1])
        out = np.zeros(attr.shape)
        for a, v in self.values.items():
            out[attr == a] = v
        return out


def as_coefficient(c):
    """Normalize a float, {attribute: value} dict, f(x) or f(x, attr) into f(x, attr)."""
    if isinstance(c, PiecewiseConstant):
        return c
    if isinstance(c, dict):
        return PiecewiseConstant(c)
    if callable(c):
        try:
            two = len(inspect.signature(c).parameters) >= 2
        except (TypeError, ValueError):
            two = False

        def f(x, attr, _c=c):
            v = _c(x, attr) if two else _c(x)
            return np.broadcast_to(np.asarray(v, dtype=float), np.shape(x)[:-1])
        return f
    val = float(c)
    return lambda x, attr: np.full(np.shape(x)[:-1], val)


# -- spaces -------------------------------------------------------------------

class FeSpace:
    """Degree-p mapped tensor-product space on a mesh."""

    def __init__(self, mesh, p, family="dg", kind="closed", vdim=1):
        if family not in ("dg", "h1"):
            raise ValueError(f"unknown family {family!r}")
        if family == "h1" and kind != "closed":
            raise ValueError("continuous spaces require a closed basis")
        if family == "h1" and vdim != 1:
            raise ValueError("vector continuous spaces are not supported")
        self.mesh = mesh
        self.p = p
        self.family = family
        self.kind = kind
        self.vdim = vdim
        self.basis = Basis1D(p, kind)
        self.nd = (p + 1) ** 2
        self.nodes_ref = tensor_points(self.basis.nodes)
        ne = mesh.ne
        if family == "dg":
            self.dofs = np.arange(ne * self.nd).reshape(ne, self.nd)
            self.nscalar = ne * self.nd
        else:
            x, _, _ = mesh.geometry(self.nodes_ref)
            flat = x.reshape(-1, 2)
            uniq, inv = merge_coincident(flat, 1e-10 * mesh.h)
            self.dofs = inv.reshape(ne, self.nd)
            self.nscalar = uniq.size
        self.ndofs = self.vdim * self.nscalar

    @property
    def is_dg(self):
        return self.family == "dg"

    def eval_basis(self, ref):
        return tensor_eval(self.basis, ref)

    def node_points(self):
        x, _, _ = self.mesh.geometry(self.nodes_ref)
        return x

    def __repr__(self):
        fam = {("dg", 1): "Y", ("dg", 2): "W", ("h1", 1): "V"}[(self.family, self.vdim)]
        return f"FeSpace({fam}_{self.p}, {self.kind}, ndofs={self.ndofs})"


@dataclass
class GridFunction:
    space: FeSpace
    coefs: np.ndarray

    def __post_init__(self):
        self.coefs = np.asarray(self.coefs, dtype=float)
        if self.coefs.shape != (self.space.ndofs,):
            raise ValueError("coefficient length does not match space dimension")

    def element_coefs(self):
        """(ne, nd) for scalar spaces, (ne, vdim, nd) for vector spaces."""
        s = self.space
        if s.vdim == 1:
            return self.coefs[s.dofs]
        return np.stack([self.coefs[c * s.nscalar + s.dofs] for c in range(s.vdim)], axis=1)


def phys_grad(gref, Finv):
    """Physical basis gradients F^{-T} grad_xi.

    gref is (q, nd, 2) or (n, q, nd, 2); Finv is (n, q, 2, 2).
    """
    if gref.ndim == 3:
        return np.einsum("nqba,qib->nqia", Finv, gref)
    return np.einsum("nqba,nqib->nqia", Finv, gref)


# -- quadrature sets ------------------------------------------------------------

class VolumeRule:
    """Tensor Gauss-Legendre quadrature mapped onto every element."""

    def __init__(self, mesh, n):
        self.mesh = mesh
        self.n = n
        self.ref, self.w = tensor_rule(n)
        self.x, self.F, self.J = mesh.geometry(self.ref)
        self.Finv = np.linalg.inv(self.F)
        self.wJ = self.w[None, :] * self.J
        self.attr = mesh.attributes[:, None]
        self.elems = np.arange(mesh.ne)

    def eval_coefficient(self, c):
        return as_coefficient(c)(self.x, self.attr)


class FaceSide:
    """Geometry of one side of a set of faces at face quadrature points."""

    def __init__(self, mesh, elems, local_faces, t):
        self.elems = np.asarray(elems, dtype=np.int64)
        self.local_faces = np.asarray(local_faces)
        t = np.asarray(t, dtype=float)
        if len(self.elems):
            self.ref = np.stack([face_ref_points(f, tt) for f, tt in zip(self.local_faces, t)])
        else:
            self.ref = np.zeros((0, t.shape[-1], 2))
        self.x, self.F, self.J = mesh.geometry(self.ref, self.elems)
        self.Finv = np.linalg.inv(self.F) if len(self.elems) else self.F.copy()
        self.attr = mesh.attributes[self.elems][:, None]


class FaceRule:
    """Gauss-Legendre quadrature on every interior and boundary face.

    Normals on interior faces point from side 1 (lower element id) to side 2;
    on boundary faces they point out of the domain.
    """

    def __init__(self, mesh, n):
        self.mesh = mesh
        self.n = n
        t, w = gauss_legendre(n)
        self.tw = w
        inter = mesh.interior_faces
        nf = inter.shape[0]
        t1 = np.tile(t, (nf, 1))
        t2 = np.where(inter[:, 4:5] == 1, 1.0 - t1, t1)
        self.side1 = FaceSide(mesh, inter[:, 0], inter[:, 1], t1)
        self.side2 = FaceSide(mesh, inter[:, 2], inter[:, 3], t2)
        self.normal, ds = self._normals(self.side1)
        self.wds = w[None, :] * ds
        self.x = self.side1.x
        bdr = mesh.boundary_faces
        self.bside = FaceSide(mesh, bdr[:, 0], bdr[:, 1], np.tile(t, (bdr.shape[0], 1)))
        self.bnormal, bds = self._normals(self.bside)
        self.bwds = w[None, :] * bds
        self.bx = self.bside.x

    @staticmethod
    def _normals(side):
        n = np.zeros(side.x.shape)
        ds = np.zeros(side.x.shape[:-1])
        for f in range(4):
            sel = side.local_faces == f
            if np.any(sel):
                n[sel], ds[sel] = _normals(side.F[sel], f)
        return n, ds

    @property
    def nf(self):
        return self.side1.elems.size

    @property
    def nb(self):
        return self.bside.elems.size


# -- assembly helpers -------------------------------------------------------------

def scatter(blocks, row_dofs, col_dofs, shape):
    """Sum dense element blocks (n, r, c) into a CSR matrix."""
    rows = np.broadcast_to(row_dofs[:, :, None], blocks.shape)
    cols = np.broadcast_to(col_dofs[:, None, :], blocks.shape)
    A = sp.coo_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    A = A.tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def element_mass_blocks(space, rule, coef=1.0, trial_space=None):
    """(ne, nd_test, nd_trial) scalar mass blocks integrated with ``rule``."""
    trial_space = space if trial_space is None else trial_space
    bt, _ = space.eval_basis(rule.ref)
    bu, _ = trial_space.eval_basis(rule.ref)
    c = rule.eval_coefficient(coef) * rule.wJ
    return np.einsum("nq,qi,qj->nij", c, bt, bu)


def assemble_mass(space, coefficient=1.0, rule=None):
    """Weighted mass matrix; block diagonal by element for DG families."""
    if rule is None:
        rule = VolumeRule(space.mesh, default_quadrature_points(space.p, space.mesh.degree))
    blocks = element_mass_blocks(space, rule, coefficient)
    if space.vdim == 1:
        return scatter(blocks, space.dofs, space.dofs, (space.ndofs, space.ndofs))
    parts = []
    for c in range(space.vdim):
        d = c * space.nscalar + space.dofs
        parts.append(scatter(blocks, d, d, (space.ndofs, space.ndofs)))
    return sum(parts[1:], parts[0]).tocsr()


def assemble_mixed_mass(test_space, trial_space, coefficient=1.0, rule=None):
    """Rectangular mass matrix with test functions from ``test_space``."""
    if test_space.mesh is not trial_space.mesh:
        raise ValueError("spaces must share a mesh")
    if rule is None:
        p = max(test_space.p, trial_space.p)
        rule = VolumeRule(test_space.mesh, default_quadrature_points(p, test_space.mesh.degree))
    blocks = element_mass_blocks(test_space, rule, coefficient, trial_space)
    return scatter(blocks, test_space.dofs, trial_space.dofs, (test_space.ndofs, trial_space.ndofs))


def interpolate(f, space):
    """Nodal interpolation of a point function f(x) (vector valued for vdim 2)."""
    x = space.node_points()
    vals = np.asarray(f(x), dtype=float)
    coefs = np.zeros(space.ndofs)
    if space.vdim == 1:
        coefs[space.dofs] = np.broadcast_to(vals, x.shape[:-1])
    else:
        for c in range(space.vdim):
            coefs[c * space.nscalar + space.dofs] = vals[..., c]
    return GridFunction(space, coefs)


def project(f, space, rule=None):
    """Elementwise L2 projection of a scalar point function onto a DG space."""
    if not space.is_dg or space.vdim != 1:
        raise ValueError("projection is implemented for scalar DG spaces")
    if rule is None:
        rule = VolumeRule(space.mesh, default_quadrature_points(space.p, space.mesh.degree) + 1)
    b, _ = space.eval_basis(rule.ref)
    vals = np.broadcast_to(np.asarray(f(rule.x), dtype=float), rule.x.shape[:-1])
    rhs = np.einsum("nq,qi->ni", vals * rule.wJ, b)
    M = element_mass_blocks(space, rule)
    coefs = np.zeros(space.ndofs)
    coefs[space.dofs] = np.linalg.solve(M, rhs[..., None])[..., 0]
    return GridFunction(space, coefs)


def eval_gf(gf, elems, ref, Finv=None):
    """Values (and physical gradients when ``Finv`` given) of a scalar GridFunction."""
    val, gref = gf.space.eval_basis(ref)
    c = gf.coefs[gf.space.dofs[elems]]
    if val.ndim == 2:
        u = c @ val.T
    else:
        u = np.einsum("nqi,ni->nq", val, c)
    if Finv is None:
        return u
    G = phys_grad(gref, Finv)
    return u, np.einsum("nqia,ni->nqa", G, c)


def l2_error(gf, exact, rule=None):
    """L2 norm of gf - exact, exact a point function (or None for ||gf||)."""
    mesh = gf.space.mesh
    if rule is None:
        rule = VolumeRule(mesh, default_quadrature_points(gf.space.p, mesh.degree) + 1)
    u = eval_gf(gf, rule.elems, rule.ref)
    if exact is not None:
        u = u - np.asarray(exact(rule.x), dtype=float)
    return float(np.sqrt(np.sum(rule.wJ * u * u)))


def face_jump_avg(gf, face_rule, face):
    """Jump and average of a scalar GridFunction at the quadrature points of one face.

    Negative ``face`` values address boundary faces as ``-(index + 1)``, where
    jump = average = trace.
    """
    space = gf.space
    if face < 0:
        b = -face - 1
        side = face_rule.bside
        u = eval_gf(gf, side.elems[b:b + 1], side.ref[b:b + 1])[0]
        return u, u
    s1, s2 = face_rule.side1, face_rule.side2
    u1 = eval_gf(gf, s1.elems[face:face + 1], s1.ref[face:face + 1])[0]
    u2 = eval_gf(gf, s2.elems[face:face + 1], s2.ref[face:face + 1])[0]
    return u1 - u2, 0.5 * (u1 + u2)


def conforming_prolongation(vspace, yspace):
    """Injection of continuous coefficients into the matching DG space."""
    if vspace.family != "h1" or yspace.family != "dg":
        raise ValueError("expected a continuous and a DG space")
    if yspace.kind != "closed" or vspace.p != yspace.p or vspace.mesh is not yspace.mesh:
        raise ValueError("prolongation needs a closed DG space of the same degree and mesh")
    rows = yspace.dofs.ravel()
    cols = vspace.dofs.ravel()
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(yspace.ndofs, vspace.ndofs))


def boundary_dof_selector(yspace):
    """Indices of DG dofs whose lattice node lies on the element boundary."""
    if yspace.kind != "closed":
        raise ValueError("boundary dofs are defined for closed bases only")
    p = yspace.p
    i, j = np.meshgrid(np.arange(p + 1), np.arange(p + 1), indexing="xy")
    on = ((i == 0) | (i == p) | (j == 0) | (j == p)).ravel()
    return np.sort(yspace.dofs[:, on].ravel())


def element_integral_weights(space, rule):
    """(ne, nd) integrals of each basis function over its element."""
    val, _ = space.eval_basis(rule.ref)
    return rule.wJ @ val


def write_gridfunction(gf, dest, meta=None):
    """Plain-text dump: metadata header then ``index value`` lines."""
    s = gf.space
    lines = [f"# space family={s.family} p={s.p} kind={s.kind} vdim={s.vdim} ndofs={s.ndofs}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v}")
    lines += [f"{i} {v:.17g}" for i, v in enumerate(gf.coefs)]
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w") as fh:
            fh.write(text)


def read_gridfunction_values(src):
    """Read a dump back as (header dict, coefficient array)."""
    text = src.read() if hasattr(src, "read") else open(src).read()
    header, vals = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    header[k] = v
        elif line.strip():
            i, v = line.split()
            vals.append(float(v))
    return header, np.array(vals)
