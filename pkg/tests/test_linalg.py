import io

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from vefsolve.fem import FeSpace, assemble_mass
from vefsolve.linalg import (AmgVCycle, ExactSolver, RichardsonSolver, SolverBreakdown,
                             SubspaceCorrection, TwoLevelSubstitute, bicgstab, block_diag_inverse,
                             continuous_solver, element_blocks, spmv, substitute, transpose,
                             triple_product, write_coo)
from vefsolve.mesh import build_cartesian_mesh
from vefsolve.vef import (SolverConfig, VefDiscretization, build_preconditioner, isotropic_data,
                          solve_vef, zero_sources)


def _random_sparse(rng, m, n, density=0.2):
    return sp.random(m, n, density=density, random_state=rng, format="csr")


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 60), st.integers(1, 60), st.integers(1, 60))
def test_kernels_match_dense(seed, m, n, k):
    rng = np.random.default_rng(seed)
    A, D, B = _random_sparse(rng, m, n), _random_sparse(rng, n, n), _random_sparse(rng, n, k)
    x = rng.standard_normal(n)
    assert np.abs(spmv(A, x) - A.toarray() @ x).max() < 1e-12
    assert np.abs(transpose(A).toarray() - A.toarray().T).max() == 0.0
    At = transpose(A)
    P = triple_product(At.T.tocsr(), D, B)
    assert np.abs(P.toarray() - A.toarray() @ D.toarray() @ B.toarray()).max() < 1e-12
    assert P.has_sorted_indices


def test_spmv_identity_and_mismatch():
    x = np.arange(5.0)
    assert np.array_equal(spmv(sp.identity(5, format="csr"), x), x)
    with pytest.raises(ValueError):
        spmv(sp.identity(4, format="csr"), x)
    with pytest.raises(ValueError):
        triple_product(sp.identity(3), sp.identity(4), sp.identity(4))


def test_triple_product_identity_factors(rng):
    A, B = _random_sparse(rng, 6, 6), _random_sparse(rng, 6, 6)
    P = triple_product(transpose(A), sp.identity(6), B)
    assert np.abs(P.toarray() - A.toarray().T @ B.toarray()).max() < 1e-14


def test_block_inverse_diagonal_and_w1_mass(rng):
    d = rng.uniform(1, 2, 6)
    Minv = block_diag_inverse(sp.diags(d), np.arange(6).reshape(3, 2))
    assert np.allclose(Minv.diagonal(), 1 / d)
    W = FeSpace(build_cartesian_mesh(1, 1), 1, "dg", "closed", vdim=2)
    M = assemble_mass(W)
    Minv = block_diag_inverse(M, element_blocks(W))
    assert np.abs(Minv.toarray() - np.linalg.inv(M.toarray())).max() < 1e-12
    mesh = build_cartesian_mesh(4, 3)
    W = FeSpace(mesh, 2, "dg", "closed", vdim=2)
    M = assemble_mass(W)
    x = rng.standard_normal(W.ndofs)
    assert np.abs(block_diag_inverse(M, element_blocks(W)) @ (M @ x) - x).max() < 1e-12


def test_block_inverse_singular_rejected():
    with pytest.raises(np.linalg.LinAlgError):
        block_diag_inverse(sp.csr_matrix((4, 4)), np.arange(4).reshape(2, 2))


def test_bicgstab_identity():
    b = np.arange(1.0, 6.0)
    res = bicgstab(sp.identity(5, format="csr"), b)
    assert res.converged and res.iterations <= 1 and np.allclose(res.x, b)


def test_bicgstab_zero_rhs():
    res = bicgstab(sp.identity(3, format="csr"), np.zeros(3))
    assert res.iterations == 0 and np.all(res.x == 0)


@given(st.integers(0, 2 ** 31 - 1))
def test_bicgstab_random_spd(seed):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((20, 20))
    A = Q @ Q.T + 20 * np.eye(20)
    b = rng.standard_normal(20)
    res = bicgstab(sp.csr_matrix(A), b, rel_tol=1e-12, max_iter=200)
    assert res.converged
    assert np.abs(res.x - np.linalg.solve(A, b)).max() < 1e-8


def test_bicgstab_reports_nonconvergence():
    A = sp.diags(np.linspace(1, 1e6, 200)).tocsr()
    res = bicgstab(A, np.ones(200), rel_tol=1e-14, max_iter=2)
    assert not res.converged and res.iterations == 2


def test_bicgstab_breakdown_raises():
    # rho vanishes on the rotation for any restart
    A = sp.csr_matrix(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    with pytest.raises(SolverBreakdown):
        bicgstab(A, np.array([1.0, 0.0]), max_iter=10)


def test_continuous_modes_on_identity(rng):
    I = sp.identity(30, format="csr")
    r = rng.standard_normal(30)
    for mode in ("exact", "substitute", "k-inner"):
        assert np.allclose(continuous_solver(I, mode)(r), r)
    with pytest.raises(ValueError):
        continuous_solver(I, "bogus")


def test_exact_mode_residual(rng):
    mesh = build_cartesian_mesh(4, 4)
    disc = VefDiscretization(mesh, 2, 1.0, 0.1)
    A = disc.symmetrized_cg(isotropic_data())
    r = rng.standard_normal(A.shape[0])
    assert np.linalg.norm(A @ ExactSolver(A)(r) - r) < 1e-12 * np.linalg.norm(r) * 1e3


@pytest.mark.parametrize("amg", ["air", "sa", "two-level"])
def test_substitute_is_linear(amg, rng):
    mesh = build_cartesian_mesh(6, 6)
    A = VefDiscretization(mesh, 2, 1.0, 0.1).symmetrized_cg(isotropic_data())
    P = substitute(A, amg)
    r1, r2 = rng.standard_normal((2, A.shape[0]))
    assert np.abs(P(2.5 * r1 + r2) - 2.5 * P(r1) - P(r2)).max() < 1e-10 * np.abs(P(r1)).max()
    assert np.all(P(np.zeros(A.shape[0])) == 0)


def test_richardson_improves_on_single_cycle(rng):
    A = VefDiscretization(build_cartesian_mesh(8, 8), 2, 1.0, 0.1).symmetrized_cg(isotropic_data())
    r = rng.standard_normal(A.shape[0])
    one = AmgVCycle(A)
    three = RichardsonSolver(A, one, 3)
    assert np.linalg.norm(r - A @ three(r)) < np.linalg.norm(r - A @ one(r))


def _diffusion_system(n, p, kind="ip"):
    disc = VefDiscretization(build_cartesian_mesh(n, n), p, 1.0, 0.1)
    src = zero_sources()
    sysm = disc.assemble(kind, isotropic_data(), src)
    rng = np.random.default_rng(n * 10 + p)
    sysm.b = rng.standard_normal(sysm.A.shape[0])
    return sysm


def test_subspace_correction_linear_and_zero(rng):
    s = _diffusion_system(4, 2)
    P = build_preconditioner(s, "usc")
    assert isinstance(P, SubspaceCorrection)
    r1, r2 = rng.standard_normal((2, s.A.shape[0]))
    assert np.all(P(np.zeros_like(r1)) == 0)
    assert np.abs(P(3 * r1 + r2) - 3 * P(r1) - P(r2)).max() < 1e-10 * np.abs(P(r1)).max()
    assert np.array_equal(P(r1), P(r1))
    assert P.solver.A.shape[0] == s.disc.V.ndofs


@pytest.mark.parametrize("p", [1, 2, 3])
def test_usc_counts_flat_under_refinement(p):
    counts = []
    for n in (4, 8, 16, 32):
        s = _diffusion_system(n, p)
        _, stats = solve_vef(s, SolverConfig(precond="usc"))
        assert stats.converged
        counts.append(stats.iterations)
    assert max(counts) - min(counts) <= 3, counts


def test_write_coo(rng):
    A = _random_sparse(rng, 5, 4)
    buf = io.StringIO()
    write_coo(A, buf, {"kind": "ip"})
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# shape=5x4") and lines[1] == "# kind=ip"
    B = np.zeros((5, 4))
    for line in lines[2:]:
        i, j, v = line.split()
        B[int(i), int(j)] = float(v)
    assert np.array_equal(B, A.toarray())


def test_two_level_block_variant(rng):
    s = _diffusion_system(4, 1, "mdldg")
    P = TwoLevelSubstitute(s.A, blocksize=s.disc.Y.nd)
    r = rng.standard_normal(s.A.shape[0])
    assert np.all(np.isfinite(P(r)))
