"""Sparse kernels, BiCGStab, continuous-space solvers and the subspace-correction preconditioner."""
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverBreakdown(RuntimeError):
    """Krylov recurrence broke down and a restart did not recover."""


class SolverNotConverged(RuntimeError):
    """Iteration cap reached before the tolerance was met."""


def _csr(A):
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A, x):
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} times {x.shape}")
    return A @ x


def transpose(A):
    return _csr(A.T)


def triple_product(At, D, B):
    """Sparse product At @ D @ B with canonical CSR output."""
    if At.shape[1] != D.shape[0] or D.shape[1] != B.shape[0]:
        raise ValueError(f"dimension mismatch: {At.shape} {D.shape} {B.shape}")
    return _csr(_csr(At) @ _csr(D) @ _csr(B))


def block_diag_inverse(M, blocks):
    """Inverse of a block-diagonal matrix whose blocks are given by dof index rows.

    ``blocks`` is an integer array (nblocks, bs); each row lists the dofs of one
    diagonal block.
    """
    blocks = np.asarray(blocks)
    M = _csr(M)
    dense = np.stack([M[b][:, b].toarray() for b in blocks]) if blocks.shape[0] < 64 else \
        _gather_blocks(M, blocks)
    try:
        inv = np.linalg.inv(dense)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular diagonal block") from exc
    rows = np.broadcast_to(blocks[:, :, None], inv.shape)
    cols = np.broadcast_to(blocks[:, None, :], inv.shape)
    return _csr(sp.coo_matrix((inv.ravel(), (rows.ravel(), cols.ravel())), shape=M.shape))


def _gather_blocks(M, blocks):
    nb, bs = blocks.shape
    pos = np.full(M.shape[0], -1)
    owner = np.full(M.shape[0], -1)
    pos[blocks.ravel()] = np.tile(np.arange(bs), nb)
    owner[blocks.ravel()] = np.repeat(np.arange(nb), bs)
    C = M.tocoo()
    keep = (owner[C.row] >= 0) & (owner[C.row] == owner[C.col])
    out = np.zeros((nb, bs, bs))
    np.add.at(out, (owner[C.row[keep]], pos[C.row[keep]], pos[C.col[keep]]), C.data[keep])
    return out


def element_blocks(space):
    """Dof blocks of a DG space, one row per element (all components)."""
    if space.vdim == 1:
        return space.dofs
    return np.concatenate([c * space.nscalar + space.dofs for c in range(space.vdim)], axis=1)


# -- BiCGStab --------------------------------------------------------------------

@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual: float
    restarts: int = 0


def bicgstab(A, b, M=None, x0=None, rel_tol=1e-8, max_iter=1000, abs_tol=0.0):
    """Right-preconditioned BiCGStab.

    Stops when ||b - A x|| <= max(rel_tol ||b||, abs_tol).  On breakdown the
    method restarts once from the current iterate; a second breakdown raises
    ``SolverBreakdown``.
    """
    matvec = A.matvec if hasattr(A, "matvec") and not sp.issparse(A) else (lambda v: A @ v)
    prec = (lambda v: v) if M is None else (M if callable(M) else (lambda v: M @ v))
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    goal = max(rel_tol * bnorm, abs_tol)
    r = b - matvec(x)
    rnorm = np.linalg.norm(r)
    if rnorm <= goal:
        return KrylovResult(x, 0, True, rnorm)
    restarts = 0
    it = 0
    tiny = 1e-300

    def fresh(r):
        return r.copy(), np.zeros_like(r), np.zeros_like(r), 1.0, 1.0, 1.0

    rhat, p, v, rho, alpha, omega = fresh(r)
    while it < max_iter:
        rho_new = rhat @ r
        if abs(rho_new) <= tiny or omega == 0.0:
            if restarts >= 1:
                raise SolverBreakdown(f"BiCGStab breakdown after {it} iterations (residual {rnorm:.3e})")
            restarts += 1
            r = b - matvec(x)
            rhat, p, v, rho, alpha, omega = fresh(r)
            continue
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        rho = rho_new
        it += 1
        phat = prec(p)
        v = matvec(phat)
        denom = rhat @ v
        if abs(denom) <= tiny:
            if restarts >= 1:
                raise SolverBreakdown(f"BiCGStab breakdown after {it} iterations (residual {rnorm:.3e})")
            restarts += 1
            r = b - matvec(x)
            rhat, p, v, rho, alpha, omega = fresh(r)
            continue
        alpha = rho / denom
        s = r - alpha * v
        snorm = np.linalg.norm(s)
        if snorm <= goal:
            x = x + alpha * phat
            rnorm = snorm
            break
        shat = prec(s)
        t = matvec(shat)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        if rnorm <= goal:
            break
    true_res = np.linalg.norm(b - matvec(x))
    return KrylovResult(x, it, bool(true_res <= goal * (1 + 1e-6) or rnorm <= goal), true_res, restarts)


# -- continuous-space solvers ---------------------------------------------------------

class ExactSolver:
    """Sparse LU factorization; applies A^{-1} exactly up to roundoff."""

    mode = "exact"

    def __init__(self, A):
        self.lu = spla.splu(sp.csc_matrix(A))

    def __call__(self, r):
        return self.lu.solve(np.asarray(r, dtype=float))


class TwoLevelSubstitute:
    """Fixed-cost two-level smoothed-aggregation pass.

    One pre- and post-smoothing sweep of (block) Jacobi around an exact solve
    on a single aggregation-coarsened level.
    """

    mode = "substitute"

    def __init__(self, A, blocksize=1, omega=None):
        A = _csr(A)
        self.A = A
        sym = abs(A - A.T).max() <= 1e-12 * max(abs(A).max(), 1e-300) if A.nnz else True
        if blocksize > 1:
            smoother = ("block_jacobi", {"omega": omega or 0.6, "iterations": 1})
            self.ml = pyamg.smoothed_aggregation_solver(
                sp.bsr_matrix(A, blocksize=(blocksize, blocksize)),
                symmetry="symmetric" if sym else "nonsymmetric",
                max_levels=2, max_coarse=1, coarse_solver="splu",
                presmoother=smoother, postsmoother=smoother)
        else:
            smoother = ("jacobi", {"omega": omega or 2.0 / 3.0, "iterations": 1})
            self.ml = pyamg.smoothed_aggregation_solver(
                A, symmetry="symmetric" if sym else "nonsymmetric",
                max_levels=2, max_coarse=1, coarse_solver="splu",
                presmoother=smoother, postsmoother=smoother)
        self._op = self.ml.aspreconditioner(cycle="V")

    def __call__(self, r):
        return self._op @ np.asarray(r, dtype=float)


class AmgVCycle:
    """One V-cycle of a full algebraic multigrid hierarchy.

    ``method="air"`` uses approximate ideal restriction, which stays robust on
    the advective, non-symmetric operators; ``"sa"`` uses smoothed aggregation.
    """

    mode = "substitute"

    def __init__(self, A, method="air", max_coarse=50, theta=0.5, smoother="fc"):
        A = _csr(A)
        self.A = A
        if method == "air":
            # a stricter strength threshold than the library default keeps high-order
            # continuous operators from degrading under refinement
            kw = {}
            if smoother == "gs":
                gs = ("gauss_seidel", {"sweep": "forward"})
                kw = dict(presmoother=gs, postsmoother=gs)
            self.ml = pyamg.air_solver(A, strength=("classical", {"theta": theta, "norm": "min"}),
                                       max_coarse=max_coarse, **kw)
        elif method == "sa":
            sym = abs(A - A.T).max() <= 1e-12 * max(abs(A).max(), 1e-300) if A.nnz else True
            self.ml = pyamg.smoothed_aggregation_solver(
                A, symmetry="symmetric" if sym else "nonsymmetric", max_coarse=max_coarse)
        else:
            raise ValueError(f"unknown AMG method {method!r}")
        self._op = self.ml.aspreconditioner(cycle="V")

    def __call__(self, r):
        return self._op @ np.asarray(r, dtype=float)


AMG_METHODS = ("air", "sa", "two-level")


def substitute(A, amg="air", blocksize=1):
    """The fixed-cost approximate inverse used wherever an AMG cycle is called for."""
    if amg == "two-level":
        return TwoLevelSubstitute(A, blocksize=blocksize)
    # full DG operators carry upwind coupling that pointwise Gauss-Seidel smooths better
    return AmgVCycle(A, method=amg, smoother="gs" if blocksize > 1 else "fc")


class RichardsonSolver:
    """k preconditioned Richardson steps on A starting from zero."""

    mode = "k-inner"

    def __init__(self, A, inner, k=3):
        self.A = _csr(A)
        self.inner = inner
        self.k = k

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        z = self.inner(r)
        for _ in range(self.k - 1):
            z = z + self.inner(r - self.A @ z)
        return z


def continuous_solver(A, mode="exact", symmetrized=None, k=3, blocksize=1, amg="air"):
    """Build an approximate inverse of a continuous-space operator.

    ``symmetrized`` optionally supplies the operator the substitute is built on
    (the k-inner mode always iterates on ``A`` itself).
    """
    if mode == "exact":
        return ExactSolver(A)
    base = A if symmetrized is None else symmetrized
    if mode in ("substitute", "amg-substitute"):
        return substitute(base, amg, blocksize)
    if mode in ("k-inner", "amg-substitute-k-inner"):
        return RichardsonSolver(A, substitute(base, amg, blocksize), k)
    raise ValueError(f"unknown continuous solver mode {mode!r}")


class SubspaceCorrection:
    """Additive two-subspace preconditioner for closed-basis DG systems.

    z = Z Av^{-1} Z^T r + I_B diag(A)_B^{-1} I_B^T r
    """

    def __init__(self, A, Z, boundary_dofs, solver):
        A = _csr(A)
        self.Z = _csr(Z)
        self.Zt = transpose(self.Z)
        self.B = np.asarray(boundary_dofs)
        d = A.diagonal()[self.B]
        if np.any(d == 0):
            raise ZeroDivisionError("zero diagonal entry on an interface dof")
        self.dinv = 1.0 / d
        self.solver = solver

    @staticmethod
    def coarse_operator(A, Z):
        return triple_product(transpose(Z), A, Z)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        z = self.Z @ self.solver(self.Zt @ r)
        z[self.B] += self.dinv * r[self.B]
        return z


def write_coo(A, dest, meta=None):
    """Write a sparse matrix as ``row col value`` lines after a metadata header."""
    C = _csr(A).tocoo()
    lines = [f"# shape={A.shape[0]}x{A.shape[1]} nnz={C.nnz}"]
    lines += [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(C.row, C.col, C.data)]
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w") as fh:
            fh.write(text)
