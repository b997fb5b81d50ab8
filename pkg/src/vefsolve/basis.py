"""One-dimensional point sets, quadrature rules and nodal Lagrange bases on [0, 1]."""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre


@lru_cache(maxsize=None)
def gauss_legendre(n):
    """n-point Gauss-Legendre rule on [0, 1] as (points, weights)."""
    if n < 1:
        raise ValueError(f"need at least one Gauss-Legendre point, got {n}")
    x, w = legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_lobatto(n):
    """n-point Gauss-Lobatto rule on [0, 1] as (points, weights)."""
    if n < 2:
        raise ValueError(f"need at least two Gauss-Lobatto points, got {n}")
    p = n - 1
    coef = np.zeros(n)
    coef[-1] = 1.0
    interior = np.sort(legendre.legroots(legendre.legder(coef))) if p > 1 else np.array([])
    x = np.concatenate(([-1.0], interior, [1.0]))
    w = 2.0 / (p * (p + 1) * legendre.legval(x, coef) ** 2)
    # symmetrize to kill roundoff in the root finder
    x = 0.5 * (x - x[::-1])
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class Basis1D:
    """Lagrange basis of degree ``p`` on closed (Lobatto) or open (Legendre) nodes."""

    p: int
    kind: str = "closed"
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("closed", "open"):
            raise ValueError(f"unknown point kind {self.kind!r}")
        if self.p < 0 or (self.kind == "closed" and self.p < 1):
            raise ValueError(f"unsupported degree {self.p} for {self.kind} basis")
        if self.kind == "closed":
            nodes = gauss_lobatto(self.p + 1)[0]
        else:
            nodes = gauss_legendre(self.p + 1)[0]
        object.__setattr__(self, "nodes", np.array(nodes))

    @property
    def size(self):
        return self.p + 1

    def _denominators(self):
        x = self.nodes
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, 1.0)
        return np.prod(diff, axis=1)

    def eval(self, xi):
        """Basis values at points ``xi`` (any shape) -> shape ``xi.shape + (p+1,)``."""
        xi = np.asarray(xi, dtype=float)
        x = self.nodes
        d = xi[..., None] - x  # (..., n)
        n = x.size
        out = np.empty(xi.shape + (n,))
        for i in range(n):
            out[..., i] = np.prod(np.delete(d, i, axis=-1), axis=-1)
        return out / self._denominators()

    def deriv(self, xi):
        """First derivatives of the basis at ``xi`` -> shape ``xi.shape + (p+1,)``."""
        xi = np.asarray(xi, dtype=float)
        x = self.nodes
        n = x.size
        d = xi[..., None] - x
        out = np.zeros(xi.shape + (n,))
        if n == 1:
            return out
        for i in range(n):
            others = [k for k in range(n) if k != i]
            for k in others:
                rest = [j for j in others if j != k]
                term = np.prod(d[..., rest], axis=-1) if rest else np.ones(xi.shape)
                out[..., i] += term
        return out / self._denominators()


def tensor_eval(basis, xi):
    """Tensor-product basis values and reference gradients.

    ``xi`` has shape (..., 2).  Returns values (..., n*n) and gradients
    (..., n*n, 2) with the first coordinate running fastest.
    """
    xi = np.asarray(xi, dtype=float)
    v1 = basis.eval(xi[..., 0])
    v2 = basis.eval(xi[..., 1])
    d1 = basis.deriv(xi[..., 0])
    d2 = basis.deriv(xi[..., 1])
    n = basis.size
    shape = xi.shape[:-1]
    val = (v2[..., :, None] * v1[..., None, :]).reshape(shape + (n * n,))
    g1 = (v2[..., :, None] * d1[..., None, :]).reshape(shape + (n * n,))
    g2 = (d2[..., :, None] * v1[..., None, :]).reshape(shape + (n * n,))
    return val, np.stack([g1, g2], axis=-1)


def tensor_points(x1d):
    """Lattice of 2D points from 1D nodes, first coordinate fastest."""
    x1d = np.asarray(x1d)
    X, Y = np.meshgrid(x1d, x1d, indexing="xy")
    return np.stack([X.ravel(), Y.ravel()], axis=-1)


def tensor_rule(n):
    """n x n Gauss-Legendre rule on the unit square."""
    x, w = gauss_legendre(n)
    return tensor_points(x), np.outer(w, w).ravel()
