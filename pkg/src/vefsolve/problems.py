"""Problem definitions: manufactured solution, thick diffusion limit, crooked pipe."""
from dataclasses import dataclass

import numpy as np

from .fem import PiecewiseConstant
from .mesh import build_cartesian_mesh, distort_taylor_green, refine_uniform
from .transport import FOUR_PI, TransportProblem
from .vef import MomentSources, PrescribedVefData

PIPE, WALL = 1, 2


@dataclass
class MmsDefinition:
    """Smooth, positive, quadratically anisotropic angular flux on the unit square."""

    delta: float = 0.1
    gamma: float = 0.5
    sigma_t: float = 1.0
    sigma_s: float = 0.5

    def _s3(self, t):
        a = 3 * np.pi / (1 + 2 * self.delta)
        return np.sin(a * (t + self.delta)), a * np.cos(a * (t + self.delta))

    def _parts(self, x):
        X, Y = x[..., 0], x[..., 1]
        pi = np.pi
        s1 = np.sin(pi * X) * np.sin(pi * Y)
        g1 = np.stack([pi * np.cos(pi * X) * np.sin(pi * Y), pi * np.sin(pi * X) * np.cos(pi * Y)], -1)
        s2 = np.sin(2 * pi * X) * np.sin(2 * pi * Y)
        g2 = np.stack([2 * pi * np.cos(2 * pi * X) * np.sin(2 * pi * Y),
                       2 * pi * np.sin(2 * pi * X) * np.cos(2 * pi * Y)], -1)
        sx, dx = self._s3(X)
        sy, dy = self._s3(Y)
        s3 = sx * sy
        g3 = np.stack([dx * sy, sx * dy], -1)
        return (s1, g1), (s2, g2), (s3, g3)

    def psi(self, x, omega):
        (s1, _), (s2, _), (s3, _) = self._parts(x)
        return (s1 + omega[0] * omega[1] * s2 + omega[0] ** 2 * s3 + self.gamma) / FOUR_PI

    def grad_psi(self, x, omega):
        (_, g1), (_, g2), (_, g3) = self._parts(x)
        return (g1 + omega[0] * omega[1] * g2 + omega[0] ** 2 * g3) / FOUR_PI

    def phi(self, x):
        (s1, _), _, (s3, _) = self._parts(x)
        return s1 + s3 / 3.0 + self.gamma

    def q(self, x, omega):
        stream = self.grad_psi(x, omega) @ np.asarray(omega)[:2]
        return stream + self.sigma_t * self.psi(x, omega) - self.sigma_s / FOUR_PI * self.phi(x)

    def transport(self):
        return TransportProblem(self.sigma_t, self.sigma_s, q=self.q, inflow=self.psi)

    def moment_sources(self, quad):
        """Discrete moments of the source and the exact incoming partial current."""
        w, om = quad.weights, quad.omega

        def Q0(x, a):
            return sum(w[d] * self.q(x, om[d]) for d in range(w.size))

        def Q1(x, a):
            return sum(w[d] * self.q(x, om[d])[..., None] * om[d, :2] for d in range(w.size))

        def g(x, n):
            out = np.zeros(x.shape[:-1])
            for d in range(w.size):
                on = n @ om[d, :2]
                out += np.where(on < 0, w[d] * on * self.psi(x, om[d]), 0.0)
            return out

        return MomentSources(Q0, Q1, g)


def mms_mesh(n, m=3):
    """n x n Taylor-Green distorted mesh of the unit square."""
    return distort_taylor_green(build_cartesian_mesh(n, n, ((0.0, 1.0), (0.0, 1.0)), m), length=1.0)


MMS_SIZES = (12, 18, 24, 30)


@dataclass
class DiffusionLimitProblem:
    eps: float

    def transport(self):
        e = self.eps
        return TransportProblem(1.0 / e, 1.0 / e - e, q=e, inflow=0.0)

    @property
    def sigma_t(self):
        return 1.0 / self.eps

    @property
    def sigma_a(self):
        return self.eps


PIPE_SEGMENTS = ((0.0, 2.5, -0.5, 0.5), (2.5, 3.5, -0.5, 1.5), (3.5, 5.5, 0.5, 1.5),
                 (5.5, 6.5, -0.5, 1.5), (6.5, 7.0, -0.5, 0.5))


def in_pipe(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1], dtype=bool)
    for x0, x1, y0, y1 in PIPE_SEGMENTS:
        out |= (x[..., 0] >= x0) & (x[..., 0] <= x1) & (x[..., 1] >= y0) & (x[..., 1] <= y1)
    return out


def crooked_pipe_mesh(refine=0):
    """14 x 8 base mesh of [0,7] x [-2,2] with pipe/wall attributes, uniformly refined."""
    mesh = build_cartesian_mesh(14, 8, ((0.0, 7.0), (-2.0, 2.0)), 1,
                                attribute=lambda c: np.where(in_pipe(c), PIPE, WALL))
    for _ in range(refine):
        mesh = refine_uniform(mesh)
    return mesh


@dataclass
class CrookedPipeProblem:
    sigma_pipe: float = 0.2
    sigma_wall: float = 200.0
    sigma_abs: float = 1e-3
    q: float = 1e-1
    inflow_value: float = 1.0 / (2.0 * np.pi)

    @property
    def sigma_t(self):
        return PiecewiseConstant({PIPE: self.sigma_pipe + self.sigma_abs,
                                  WALL: self.sigma_wall + self.sigma_abs})

    @property
    def sigma_s(self):
        return PiecewiseConstant({PIPE: self.sigma_pipe, WALL: self.sigma_wall})

    @property
    def sigma_a(self):
        return self.sigma_abs

    def inflow(self, x, omega):
        on = (np.abs(x[..., 0]) < 1e-12) & (np.abs(x[..., 1]) <= 0.5 + 1e-12)
        return np.where(on, self.inflow_value, 0.0)

    def transport(self):
        return TransportProblem(self.sigma_t, self.sigma_s, q=self.q, inflow=self.inflow)


def mock_vef_data():
    """Forward-peaked closure in the pipe, isotropic in the wall."""
    Epipe = np.diag([9.0 / 11.0, 1.0 / 11.0])
    Ewall = np.eye(2) / 3.0

    def E(x, attr):
        a = np.broadcast_to(attr, x.shape[:-1])
        return np.where((a == PIPE)[..., None, None], Epipe, Ewall)

    def Eb(x, attr, n):
        a = np.broadcast_to(attr, x.shape[:-1])
        return np.where(a == PIPE, 0.9, 0.5)

    return PrescribedVefData(E, Eb)
