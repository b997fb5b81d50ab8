import numpy as np
import pytest

from conftest import curved_mesh
from vefsolve.config import ProblemConfig
from vefsolve.experiments import (angular_quadrature, lineout, log_regression, mms_errors,
                                  write_table)
from vefsolve.fem import FeSpace, VolumeRule, interpolate
from vefsolve.problems import PIPE, WALL, MmsDefinition, crooked_pipe_mesh, in_pipe, mms_mesh


def test_log_regression_exact_power_law():
    h = np.array([0.2, 0.1, 0.05, 0.025])
    order, c = log_regression(h, 7 * h ** 4)
    assert abs(order - 4) < 1e-10 and abs(c - 7) < 1e-10


def test_log_regression_rejects_bad_input():
    with pytest.raises(ValueError):
        log_regression([0.1], [1.0])
    with pytest.raises(ValueError):
        log_regression([0.1, 0.05], [1.0, 0.0])


def test_mms_gradient_matches_finite_differences(rng):
    mms = MmsDefinition()
    x = rng.uniform(0.05, 0.95, (6, 2))
    om = np.array([0.3, -0.8, np.sqrt(0.27)])
    d = 1e-6
    fd = np.stack([(mms.psi(x + d * e, om) - mms.psi(x - d * e, om)) / (2 * d) for e in np.eye(2)], -1)
    assert np.abs(mms.grad_psi(x, om) - fd).max() < 1e-7


def test_mms_zeroth_moment_balance(rng):
    """Q0 = div J + sigma_a phi for the discrete moments of the manufactured flux."""
    mms = MmsDefinition()
    quad = angular_quadrature(4)
    src = mms.moment_sources(quad)
    x = rng.uniform(0.05, 0.95, (5, 2))
    divJ = sum(quad.weights[k] * mms.grad_psi(x, o) @ o[:2] for k, o in enumerate(quad.omega))
    phi = sum(quad.weights[k] * mms.psi(x, o) for k, o in enumerate(quad.omega))
    assert np.abs(src.Q0(x, 1) - divJ - (mms.sigma_t - mms.sigma_s) * phi).max() < 1e-12
    assert np.all(phi > 0) and np.allclose(phi, mms.phi(x), atol=1e-12)


def test_mms_errors_drop_under_refinement():
    kinds = ("ip", "br2", "mdldg", "cg")
    quad = angular_quadrature(4)
    coarse, fine = (mms_errors(mms_mesh(n, 2), 2, kinds, quad) for n in (4, 8))
    for k in kinds:
        assert coarse[k] / fine[k] > 5.0, k  # third order in the limit
    vals = np.array(list(fine.values()))
    assert vals.std() < vals.mean()


def test_lineout_exact_for_linear_field():
    mesh = curved_mesh(3, 3, m=2)
    gf = interpolate(lambda x: 1 + 2 * x[..., 0] - x[..., 1], FeSpace(mesh, 2))
    rows = lineout(gf, (0.0, 0.3), (1.0, 0.7), 11)
    assert rows.shape == (11, 4)
    assert np.allclose(rows[:, 0], np.linspace(0, np.hypot(1, 0.4), 11))
    assert np.allclose(rows[:, 3], 1 + 2 * rows[:, 1] - rows[:, 2], atol=1e-12)


def test_write_table_header(tmp_path):
    path = tmp_path / "sub" / "t.csv"
    write_table(str(path), ["a", "b"], [[1, 0.5], ["x", np.float64(2.0)]], {"k": "v"})
    assert path.read_text().splitlines() == ["# k=v", "a,b", "1,5.000000e-01", "x,2.000000e+00"]


def test_pipe_geometry():
    mesh = crooked_pipe_mesh(1)
    vol = VolumeRule(mesh, 2)
    area = vol.wJ.sum(axis=1)
    assert abs(area[mesh.attributes == PIPE].sum() - 9.0) < 1e-12
    assert abs(area.sum() - 28.0) < 1e-12
    assert set(np.unique(mesh.attributes)) == {PIPE, WALL}
    assert in_pipe(np.array([0.1, 0.0])) and not in_pipe(np.array([4.5, -1.5]))


def test_quadrature_folding():
    assert angular_quadrature(12).size == 84
    assert ProblemConfig.defaults("pipe").sn_order == 12
