"""High-order curved quadrilateral meshes.

Every element is the image of the unit square under a tensor-product
polynomial map of degree ``m`` whose control points sit on the closed
Gauss-Lobatto lattice.  Control points are stored once globally, so a face
shared by two elements is described by literally the same points from both
sides.
"""
from dataclasses import dataclass
import io

import numpy as np

from .basis import Basis1D, gauss_legendre, tensor_eval, tensor_points, tensor_rule


class InvalidMeshError(ValueError):
    pass


class PointNotFoundError(LookupError):
    pass


# local faces: bottom, right, top, left.  The face parameter t runs along +xi1
# (bottom/top) or +xi2 (right/left).
_FACE_FIXED = ((1, 0.0), (0, 1.0), (1, 1.0), (0, 0.0))
_FACE_TANGENT = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
_FACE_SIGN = np.array([1.0, 1.0, -1.0, -1.0])


def face_ref_points(local_face, t):
    """Reference coordinates of face parameter ``t`` on a local face."""
    t = np.asarray(t, dtype=float)
    axis, value = _FACE_FIXED[local_face]
    out = np.empty(t.shape + (2,))
    out[..., axis] = value
    out[..., 1 - axis] = t
    return out


def face_lattice(m, local_face):
    """Lattice indices of the m+1 control points on a local face, in t order."""
    n = m + 1
    r = np.arange(n)
    if local_face == 0:
        return r
    if local_face == 1:
        return r * n + m
    if local_face == 2:
        return m * n + r
    return r * n


def _normals(F, local_face):
    """Outward unit normals and surface Jacobians from Jacobians on a face."""
    tau = F @ _FACE_TANGENT[local_face]
    ds = np.linalg.norm(tau, axis=-1)
    n = _FACE_SIGN[local_face] * np.stack([tau[..., 1], -tau[..., 0]], axis=-1)
    return n / ds[..., None], ds


@dataclass(frozen=True)
class ElementTransform:
    """Polynomial map from the unit square onto one element."""

    control_points: np.ndarray  # ((m+1)^2, 2), first lattice index fastest
    geometric_degree: int

    def eval(self, xi):
        basis = Basis1D(self.geometric_degree, "closed")
        val, grad = tensor_eval(basis, xi)
        x = val @ self.control_points
        F = np.einsum("...kb,ka->...ab", grad, self.control_points)
        return x, F, np.linalg.det(F)


def transform_eval(elem, xi):
    """Physical point, Jacobian matrix and determinant at reference point ``xi``."""
    return elem.eval(np.asarray(xi, dtype=float))


class Mesh:
    """Conforming mesh of curved quadrilaterals.

    Parameters
    ----------
    points : (npts, 2) unique control points
    elements : (ne, (m+1)**2) indices into ``points``
    degree : geometric degree m
    attributes : per-element material ids (default all 1)
    """

    def __init__(self, points, elements, degree, attributes=None):
        self.points = np.ascontiguousarray(points, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.degree = int(degree)
        if self.degree < 1:
            raise InvalidMeshError("geometric degree must be >= 1")
        if self.elements.shape[1] != (self.degree + 1) ** 2:
            raise InvalidMeshError("element connectivity does not match geometric degree")
        ne = self.elements.shape[0]
        if attributes is None:
            attributes = np.ones(ne, dtype=np.int64)
        self.attributes = np.asarray(attributes, dtype=np.int64)
        self.gbasis = Basis1D(self.degree, "closed")
        self._build_faces()
        self._check_valid()
        self._bbox = None

    @property
    def ne(self):
        return self.elements.shape[0]

    def element(self, e):
        return ElementTransform(self.points[self.elements[e]], self.degree)

    def control_points(self, elems=None):
        idx = self.elements if elems is None else self.elements[elems]
        return self.points[idx]

    def _build_faces(self):
        m = self.degree
        seen = {}
        interior, boundary = [], []
        for e, conn in enumerate(self.elements):
            for f in range(4):
                ids = conn[face_lattice(m, f)]
                key = (min(ids[0], ids[-1]), max(ids[0], ids[-1]))
                if key in seen:
                    e1, f1, first = seen.pop(key)
                    interior.append((e1, f1, e, f, int(first != ids[0])))
                else:
                    seen[key] = (e, f, ids[0])
        for e, f, _ in seen.values():
            boundary.append((e, f, 1))
        interior.sort()
        boundary.sort()
        self.interior_faces = np.array(interior, dtype=np.int64).reshape(-1, 5)
        self.boundary_faces = np.array(boundary, dtype=np.int64).reshape(-1, 3)
        # element -> (face kind, index) for each local face; kind 0 interior, 1 boundary
        self.face_of = -np.ones((self.ne, 4, 2), dtype=np.int64)
        for i, (e1, f1, e2, f2, _) in enumerate(self.interior_faces):
            self.face_of[e1, f1] = (0, i)
            self.face_of[e2, f2] = (0, i)
        for i, (e, f, _) in enumerate(self.boundary_faces):
            self.face_of[e, f] = (1, i)

    def _check_valid(self):
        n = 2 * self.degree + 2
        ref = np.concatenate([tensor_rule(n)[0], tensor_points(self.gbasis.nodes)])
        _, _, J = self.geometry(ref)
        bad = np.nonzero(np.min(J, axis=1) <= 0.0)[0]
        if bad.size:
            raise InvalidMeshError(f"non-positive Jacobian in element(s) {bad[:10].tolist()}")

    def geometry(self, ref, elems=None):
        """Physical points, Jacobians and determinants.

        ``ref`` is (q, 2) shared by all elements or (n, q, 2) per element.
        Returns x (n, q, 2), F (n, q, 2, 2), J (n, q).
        """
        ctrl = self.control_points(elems)
        val, grad = tensor_eval(self.gbasis, ref)
        if val.ndim == 2:
            x = np.einsum("qk,nka->nqa", val, ctrl)
            F = np.einsum("qkb,nka->nqab", grad, ctrl)
        else:
            x = np.einsum("nqk,nka->nqa", val, ctrl)
            F = np.einsum("nqkb,nka->nqab", grad, ctrl)
        J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        return x, F, J

    def face_geometry(self, e, local_face, t):
        """Points, unit outward normals and surface Jacobians on a local face."""
        ref = face_ref_points(local_face, t)
        x, F, _ = self.geometry(ref, np.atleast_1d(e))
        n, ds = _normals(F, local_face)
        return x[0], n[0], ds[0]

    def characteristic_lengths(self):
        n = self.degree + 1
        ref, w = tensor_rule(n)
        _, _, J = self.geometry(ref)
        return np.sqrt(J @ w)

    @property
    def h(self):
        return float(self.characteristic_lengths().max())

    def area(self):
        ref, w = tensor_rule(self.degree + 2)
        _, _, J = self.geometry(ref)
        return float(np.sum(J @ w))

    def jacobian_condition(self):
        """Max over elements and quadrature points of cond(F)."""
        ref, _ = tensor_rule(self.degree + 1)
        _, F, _ = self.geometry(ref)
        return float(np.max(np.linalg.cond(F)))

    def element_at(self, e):
        return self.element(e)

    # -- point location -------------------------------------------------
    def _bounding_boxes(self):
        if self._bbox is None:
            c = self.control_points()
            lo, hi = c.min(axis=1), c.max(axis=1)
            pad = 0.1 * (hi - lo).max(axis=1, keepdims=True)
            self._bbox = (lo - pad, hi + pad)
        return self._bbox

    def _newton(self, e, x, tol=1e-12, maxit=50):
        elem = self.element(e)
        xi = np.array([0.5, 0.5])
        scale = max(1.0, float(np.abs(x).max()))
        xe, F, _ = elem.eval(xi)
        res = np.linalg.norm(xe - x)
        for _ in range(maxit):
            if res <= tol * scale:
                break
            step = np.linalg.solve(F, xe - x)
            damp = 1.0
            while True:
                trial = xi - damp * step
                xt, Ft, _ = elem.eval(trial)
                rt = np.linalg.norm(xt - x)
                if rt < res or damp < 1e-4:
                    break
                damp *= 0.5
            xi, xe, F, res = trial, xt, Ft, rt
        return xi, res <= tol * scale

    def locate_point(self, x):
        """Element index and reference coordinates of physical point ``x``."""
        x = np.asarray(x, dtype=float)
        lo, hi = self._bounding_boxes()
        cand = np.nonzero(np.all((x >= lo) & (x <= hi), axis=1))[0]
        eps = 1e-10
        for e in cand:
            xi, ok = self._newton(e, x)
            if ok and np.all(xi >= -eps) and np.all(xi <= 1 + eps):
                return int(e), np.clip(xi, 0.0, 1.0)
        raise PointNotFoundError(f"point {x.tolist()} not found in mesh")


def build_cartesian_mesh(nx, ny, bbox=((0.0, 1.0), (0.0, 1.0)), m=1, attribute=None):
    """Uniform nx x ny mesh of the rectangle ``bbox`` with degree-m affine maps.

    ``attribute`` optionally maps element centers (ne, 2) to material ids.
    """
    if nx < 1 or ny < 1 or m < 1:
        raise ValueError("nx, ny and m must be >= 1")
    (x0, x1), (y0, y1) = bbox
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate bounding box {bbox}")
    g = Basis1D(m, "closed").nodes
    cells_x = np.arange(nx)[:, None] + g[None, :-1]
    xs = np.concatenate([cells_x.ravel(), [nx]]) / nx
    cells_y = np.arange(ny)[:, None] + g[None, :-1]
    ys = np.concatenate([cells_y.ravel(), [ny]]) / ny
    xs = x0 + (x1 - x0) * xs
    ys = y0 + (y1 - y0) * ys
    nxp = nx * m + 1
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    points = np.stack([X.ravel(), Y.ravel()], axis=-1)
    local = (np.arange(m + 1)[None, :] + nxp * np.arange(m + 1)[:, None]).ravel()
    elements = []
    for j in range(ny):
        for i in range(nx):
            elements.append(j * m * nxp + i * m + local)
    elements = np.array(elements)
    attrs = None
    if attribute is not None:
        centers = points[elements].mean(axis=1)
        attrs = attribute(centers)
    return Mesh(points, elements, m, attrs)


def taylor_green_velocity(x):
    return np.stack(
        [np.sin(x[..., 0]) * np.cos(x[..., 1]), -np.cos(x[..., 0]) * np.sin(x[..., 1])], axis=-1
    )


def distort_taylor_green(mesh, T=0.3 * np.pi, steps=300, length=np.pi):
    """Advect the mesh control points through the Taylor-Green vortex with forward Euler.

    The vortex cell [0, pi]^2 is rescaled to [0, length]^2, so ``length=1``
    distorts the unit square while keeping its boundary fixed.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    dt = T / steps
    s = np.pi / length
    pts = mesh.points.copy()
    for _ in range(steps):
        pts = pts + dt * taylor_green_velocity(s * pts) / s
    return Mesh(pts, mesh.elements, mesh.degree, mesh.attributes)


def refine_uniform(mesh):
    """Split every element into four, keeping the geometric degree."""
    m = mesh.degree
    g = mesh.gbasis.nodes
    sub = [((0.0, 0.5), (0.0, 0.5)), ((0.5, 1.0), (0.0, 0.5)), ((0.0, 0.5), (0.5, 1.0)), ((0.5, 1.0), (0.5, 1.0))]
    new_pts, new_attr = [], []
    for a, b in sub:
        ref = tensor_points(g)
        ref = np.stack([a[0] + (a[1] - a[0]) * ref[:, 0], b[0] + (b[1] - b[0]) * ref[:, 1]], axis=-1)
        x, _, _ = mesh.geometry(ref)
        new_pts.append(x)
    # (4, ne, K, 2) -> element-major ordering
    allx = np.stack(new_pts, axis=1).reshape(-1, (m + 1) ** 2, 2)
    attrs = np.repeat(mesh.attributes, 4)
    return _merge_points(allx, m, attrs)


def merge_coincident(points, tol):
    """Group coincident points: returns (representatives, inverse index)."""
    from scipy.spatial import cKDTree

    points = np.asarray(points, dtype=float)
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    parent = np.arange(points.shape[0])

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(points.shape[0])])
    return np.unique(roots, return_inverse=True)


def _merge_points(elem_points, m, attrs):
    flat = elem_points.reshape(-1, 2)
    uniq, inv = merge_coincident(flat, 1e-10 * np.ptp(flat, axis=0).max())
    return Mesh(flat[uniq], inv.reshape(elem_points.shape[0], -1), m, attrs)


# -- serialization ------------------------------------------------------------

def write_mesh(mesh, dest):
    """Write the plain-text mesh format to a path or text stream."""
    lines = ["VEFMESH 1", f"degree {mesh.degree}", f"points {mesh.points.shape[0]}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.points]
    lines.append(f"elements {mesh.ne}")
    for a, conn in zip(mesh.attributes, mesh.elements):
        lines.append(" ".join([str(int(a))] + [str(int(c)) for c in conn]))
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w") as fh:
            fh.write(text)
    else:
        dest.write(text)


def read_mesh(src):
    if isinstance(src, (str, bytes)) or hasattr(src, "__fspath__"):
        with open(src) as fh:
            text = fh.read()
    else:
        text = src.read()
    it = iter(io.StringIO(text))
    header = next(it).split()
    if header[0] != "VEFMESH":
        raise ValueError("not a mesh file")
    m = int(next(it).split()[1])
    npts = int(next(it).split()[1])
    pts = np.array([[float(v) for v in next(it).split()] for _ in range(npts)])
    ne = int(next(it).split()[1])
    rows = [[int(v) for v in next(it).split()] for _ in range(ne)]
    rows = np.array(rows, dtype=np.int64)
    return Mesh(pts, rows[:, 1:], m, rows[:, 0])
