import numpy as np
import pytest

from mfgc.drift import DriftParams, Kernel
from mfgc.grid import SpaceTimeGrid
from mfgc.numham import HamiltonianParams
from mfgc.problem import Problem


def make_problem(n=8, nt=8, lam=0.6, theta=0.8, nu=0.05, c=0.5, seed=0, L=1, sweep="gauss_seidel",
                 bc=None, eps=0.0, T=0.5, kernel=None):
    """Small randomized instance on the unit square."""
    rng = np.random.default_rng(seed)
    g = SpaceTimeGrid(n, n, nt, (0.0, 0.0), (1.0, 1.0), T)
    x1, x2 = g.coords[..., 0], g.coords[..., 1]
    m0 = 1.0 + 0.5 * np.sin(2 * x1) * np.cos(3 * x2) + 0.1 * rng.uniform(size=g.shape)
    m0 /= m0.sum() * g.h1 * g.h2
    phi = 0.3 * np.cos(np.pi * x1) + 0.2 * x2**2 + 0.05 * rng.normal(size=g.shape)
    f0 = 0.2 + 0.1 * np.sin(np.pi * x2)
    ham = HamiltonianParams(lam, theta, 1.0, eps)
    return Problem(g, nu, ham, c, f0, m0, phi, kernel or Kernel("radial", 0.35), DriftParams(L, sweep), bc)


def random_fV(prob, seed=1, scale=0.3):
    rng = np.random.default_rng(seed)
    g = prob.grid
    f = prob.f0 + scale * rng.normal(size=(g.nt,) + g.shape)
    V = scale * rng.normal(size=(g.nt,) + g.shape + (2,))
    return f, V


def fd_ratio(err_big, err_small):
    return err_big / err_small


@pytest.fixture
def prob8():
    return make_problem()


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
