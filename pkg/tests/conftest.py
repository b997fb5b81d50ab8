import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vefsolve.mesh import Mesh, build_cartesian_mesh

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


def trapezoid_mesh(h=1.0, alpha=0.25):
    """One element with F = [[2 a xi2 + h, a (2 xi1 - 1)], [0, h]]."""
    pts = np.array([[0.0, 0.0], [h, 0.0], [-alpha, h], [h + alpha, h]])
    return Mesh(pts, np.array([[0, 1, 2, 3]]), 1)


def curved_mesh(nx=2, ny=2, m=2, amp=0.04):
    """Cartesian mesh with a smooth interior bump on every control point."""
    mesh = build_cartesian_mesh(nx, ny, ((0.0, 1.0), (0.0, 1.0)), m)
    x = mesh.points
    bump = amp * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    pts = x + np.stack([bump, -0.5 * bump], axis=-1)
    return Mesh(pts, mesh.elements, m)


@pytest.fixture
def two_elements():
    return build_cartesian_mesh(2, 1, ((0.0, 2.0), (0.0, 1.0)), 1)
