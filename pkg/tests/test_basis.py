import numpy as np
import pytest
from hypothesis import given, strategies as st

from vefsolve.basis import Basis1D, gauss_legendre, gauss_lobatto, tensor_eval, tensor_rule


def test_closed_p2_nodes():
    assert np.allclose(Basis1D(2, "closed").nodes, [0.0, 0.5, 1.0], atol=1e-15)


def test_open_p1_nodes():
    r = np.sqrt(3.0)
    assert np.allclose(Basis1D(1, "open").nodes, [(3 - r) / 6, (3 + r) / 6], atol=1e-15)


@pytest.mark.parametrize("kind", ["closed", "open"])
def test_partition_of_unity_p3(kind):
    b = Basis1D(3, kind)
    assert abs(b.eval(0.37).sum() - 1.0) < 1e-14
    assert abs(b.deriv(0.37).sum()) < 1e-13


@pytest.mark.parametrize("kind", ["closed", "open"])
@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_kronecker_property(kind, p):
    b = Basis1D(p, kind)
    assert np.allclose(b.eval(b.nodes), np.eye(p + 1), atol=1e-13)


def test_closed_degree_zero_rejected():
    with pytest.raises(ValueError):
        Basis1D(0, "closed")
    assert Basis1D(0, "open").size == 1


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        Basis1D(2, "uniform")


@given(st.integers(1, 6), st.floats(0.0, 1.0))
def test_derivative_matches_finite_difference(p, xi):
    b = Basis1D(p, "closed")
    d = 1e-6
    fd = (b.eval(xi + d) - b.eval(xi - d)) / (2 * d)
    assert np.allclose(b.deriv(xi), fd, atol=1e-6 * (p + 1) ** 3)


@given(st.integers(1, 8), st.integers(0, 15))
def test_gauss_legendre_exactness(n, k):
    x, w = gauss_legendre(n)
    if k <= 2 * n - 1:
        assert abs(w @ x ** k - 1.0 / (k + 1)) < 1e-13


@given(st.integers(2, 8), st.integers(0, 13))
def test_gauss_lobatto_exactness(n, k):
    x, w = gauss_lobatto(n)
    assert x[0] == 0.0 and x[-1] == 1.0
    if k <= 2 * n - 3:
        assert abs(w @ x ** k - 1.0 / (k + 1)) < 1e-13


def test_tensor_rule_integrates_products():
    ref, w = tensor_rule(4)
    f = ref[:, 0] ** 5 * ref[:, 1] ** 7
    assert abs(w @ f - 1.0 / 48.0) < 1e-14


def test_tensor_eval_first_index_fastest():
    b = Basis1D(1, "closed")
    val, grad = tensor_eval(b, np.array([[1.0, 0.0]]))
    assert np.allclose(val[0], [0, 1, 0, 0])
    assert grad.shape == (1, 4, 2)
