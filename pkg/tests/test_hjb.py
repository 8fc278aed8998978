import numpy as np
import pytest
from scipy.optimize import root

from mfgc.boundary import build_boundary
from mfgc.grid import extend_neumann, d1_plus, d2_plus, laplacian5
from mfgc.hjb import (HjbNewtonError, HjbStepConfig, assemble_jacobian, hjb_step, lin_hjb, residual_Ru,
                      solve_hjb)
from mfgc.numham import HamiltonianParams

from conftest import make_problem, random_fV


def loop_residual(u, v, f, V, prob):
    """Node-by-node evaluation of the implicit HJB step with Neumann ghosts."""
    g, ham, nu = prob.grid, prob.ham, prob.nu
    nx1, nx2 = g.shape
    a, lt = ham.a, ham.lt
    R = np.empty(g.shape)
    pos = lambda s: max(s, 0.0)
    neg = lambda s: max(-s, 0.0)
    for i in range(nx1):
        for j in range(nx2):
            uE = u[i + 1, j] if i + 1 < nx1 else u[i, j]
            uW = u[i - 1, j] if i > 0 else u[i, j]
            uN = u[i, j + 1] if j + 1 < nx2 else u[i, j]
            uS = u[i, j - 1] if j > 0 else u[i, j]
            VE = 0.5 * (V[i, j, 0] + V[i + 1, j, 0]) if i + 1 < nx1 else V[i, j, 0]
            VW = 0.5 * (V[i, j, 0] + V[i - 1, j, 0]) if i > 0 else V[i, j, 0]
            VN = 0.5 * (V[i, j, 1] + V[i, j + 1, 1]) if j + 1 < nx2 else V[i, j, 1]
            VS = 0.5 * (V[i, j, 1] + V[i, j - 1, 1]) if j > 0 else V[i, j, 1]
            q1 = neg((uE - u[i, j]) / (g.h1 * a) - lt * VE)
            q2 = -pos((u[i, j] - uW) / (g.h1 * a) - lt * VW)
            q3 = neg((uN - u[i, j]) / (g.h2 * a) - lt * VN)
            q4 = -pos((u[i, j] - uS) / (g.h2 * a) - lt * VS)
            lap = (uE - 2 * u[i, j] + uW) / g.h1**2 + (uN - 2 * u[i, j] + uS) / g.h2**2
            gval = 0.5 * a * (q1**2 + q2**2 + q3**2 + q4**2) - 0.5 * a * ham.lam**2 * ham.theta * (V[i, j] @ V[i, j])
            R[i, j] = u[i, j] - v[i, j] + g.dt * (-nu * lap + gval - f[i, j])
    return R


def test_residual_trivial_case():
    prob = make_problem(lam=0.0, nu=0.0)
    g = prob.grid
    u = np.full(g.shape, 1.7)
    R = residual_Ru(u, u, np.zeros(g.shape), np.random.default_rng(0).normal(size=g.shape + (2,)), prob)
    np.testing.assert_array_equal(R, 0.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_residual_matches_loop_evaluation(seed):
    prob = make_problem(n=7, seed=seed)
    rng = np.random.default_rng(seed + 10)
    g = prob.grid
    u, v, f = rng.normal(size=(3,) + g.shape)
    V = rng.normal(size=g.shape + (2,))
    np.testing.assert_allclose(residual_Ru(u, v, f, V, prob), loop_residual(u, v, f, V, prob), rtol=1e-13, atol=1e-14)


def test_jacobian_hand_stencil():
    prob = make_problem(n=4, lam=0.0, nu=0.2)
    g = prob.grid
    u = g.coords[..., 0] + 2.0 * g.coords[..., 1]
    J = assemble_jacobian(u, np.zeros(g.shape + (2,)), prob).toarray()
    ref = np.eye(g.n_nodes)
    for i in range(4):
        for j in range(4):
            r = g.index(i, j)
            for di, dj, h in ((1, 0, g.h1), (-1, 0, g.h1), (0, 1, g.h2), (0, -1, g.h2)):
                ii, jj = i + di, j + dj
                if 0 <= ii < 4 and 0 <= jj < 4:
                    ref[r, r] += g.dt * prob.nu / h**2
                    ref[r, g.index(ii, jj)] -= g.dt * prob.nu / h**2
            # every slope is positive, so only the backward differences are upwind
            if i > 0:
                s = (u[i, j] - u[i - 1, j]) / g.h1
                ref[r, r] += g.dt * s / g.h1
                ref[r, g.index(i - 1, j)] -= g.dt * s / g.h1
            if j > 0:
                s = (u[i, j] - u[i, j - 1]) / g.h2
                ref[r, r] += g.dt * s / g.h2
                ref[r, g.index(i, j - 1)] -= g.dt * s / g.h2
    np.testing.assert_allclose(J, ref, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("eps", [0.0, 0.05])
def test_jacobian_columns_by_finite_differences(eps):
    prob = make_problem(n=6, eps=eps, seed=3)
    rng = np.random.default_rng(4)
    g = prob.grid
    u, v, f = rng.normal(size=(3,) + g.shape)
    V = rng.normal(size=g.shape + (2,))
    J = assemble_jacobian(u, V, prob).toarray()
    R0 = residual_Ru(u, v, f, V, prob).ravel()
    for col in rng.choice(g.n_nodes, 8, replace=False):
        errs = []
        for d in (1e-4, 1e-5):
            up = u.ravel().copy()
            up[col] += d
            fd = (residual_Ru(up.reshape(g.shape), v, f, V, prob).ravel() - R0) / d
            errs.append(np.abs(fd - J[:, col]).max())
        assert errs[1] <= 1e-4
        assert errs[1] <= errs[0] + 1e-9


def test_jacobian_sign_pattern():
    rng = np.random.default_rng(5)
    for seed in range(5):
        prob = make_problem(n=7, seed=seed)
        g = prob.grid
        J = assemble_jacobian(rng.normal(size=g.shape), rng.normal(size=g.shape + (2,)), prob).toarray()
        off = J - np.diag(np.diag(J))
        assert np.all(np.diag(J) > 0)
        assert np.all(off <= 0)
        assert np.all(np.diag(J) + off.sum(axis=1) >= 1 - 1e-12)


def test_constants_solve_the_scheme():
    prob = make_problem(lam=0.0)
    g = prob.grid
    st = hjb_step(np.full(g.shape, 0.4), np.zeros(g.shape), np.zeros(g.shape + (2,)), prob)
    np.testing.assert_allclose(st.u, 0.4, atol=1e-14)


def test_quadratic_convergence_and_stopping():
    prob = make_problem(n=10, nu=0.01, seed=6)
    rng = np.random.default_rng(6)
    g = prob.grid
    x1, x2 = g.coords[..., 0], g.coords[..., 1]
    v = 2.0 * np.sin(3 * x1) * np.cos(2 * x2)
    V = 0.5 * rng.normal(size=g.shape + (2,))
    st = hjb_step(v, np.zeros(g.shape), V, prob, HjbStepConfig(1e-13), guess=np.zeros(g.shape))
    r = st.residuals
    assert r[-1] <= 1e-13
    assert np.abs(residual_Ru(st.u, v, np.zeros(g.shape), V, prob)).max() <= 1e-13
    # pairs above the rounding floor
    tail = [(r[k], r[k + 1]) for k in range(len(r) - 1) if r[k] < 1e-1 and r[k + 1] > 1e-14]
    assert tail, r
    for a, b in tail:
        assert b <= 50 * a**2


def test_step_matches_generic_root_finder():
    prob = make_problem(n=6, seed=7)
    rng = np.random.default_rng(7)
    g = prob.grid
    v, f = rng.normal(size=(2,) + g.shape)
    V = rng.normal(size=g.shape + (2,))
    st = hjb_step(v, f, V, prob, HjbStepConfig(1e-13))
    sol = root(lambda x: loop_residual(x.reshape(g.shape), v, f, V, prob).ravel(), v.ravel(), tol=1e-13)
    assert np.abs(loop_residual(sol.x.reshape(g.shape), v, f, V, prob)).max() <= 1e-11
    np.testing.assert_allclose(st.u.ravel(), sol.x, atol=1e-8)


def test_single_level_march_is_one_step():
    prob = make_problem(nt=1, seed=8)
    f, V = random_fV(prob)
    sol = solve_hjb(f, V, prob)
    st = hjb_step(prob.phi, f[0], V[0], prob)
    np.testing.assert_allclose(sol.u[0], st.u, atol=1e-14)
    np.testing.assert_array_equal(sol.u[1], prob.phi)


def test_strong_diffusion_flattens():
    prob = make_problem(nu=5.0, lam=0.0, seed=9, T=1.0)
    g = prob.grid
    sol = solve_hjb(np.zeros((g.nt,) + g.shape), np.zeros((g.nt,) + g.shape + (2,)), prob)
    assert np.ptp(sol.u[0]) < 0.2 * np.ptp(prob.phi)
    spreads = [np.ptp(sol.u[k]) for k in range(g.nt + 1)]
    assert all(a <= b + 1e-12 for a, b in zip(spreads, spreads[1:]))


def test_zero_drift_matches_independent_march():
    prob = make_problem(n=10, nt=10, seed=11)
    g = prob.grid
    rng = np.random.default_rng(11)
    f = rng.uniform(0, 1, size=(g.nt,) + g.shape)
    V = np.zeros((g.nt,) + g.shape + (2,))
    sol = solve_hjb(f, V, prob, HjbStepConfig(1e-13))
    ham = prob.ham

    def res(x, v, fk):
        # Godunov residual built from the ghost-layer difference operators
        gh = extend_neumann(x, g)
        p1 = d1_plus(x, gh, g)
        p2 = d2_plus(x, gh, g)
        q = (np.maximum(-p1[1:] / ham.a, 0) ** 2 + np.maximum(p1[:-1] / ham.a, 0) ** 2
             + np.maximum(-p2[:, 1:] / ham.a, 0) ** 2 + np.maximum(p2[:, :-1] / ham.a, 0) ** 2)
        return x - v + g.dt * (-prob.nu * laplacian5(x, gh, g) + 0.5 * ham.a * q - fk)

    u = prob.phi.copy()
    for k in range(g.nt - 1, -1, -1):
        out = root(lambda x: res(x.reshape(g.shape), u, f[k]).ravel(), u.ravel(), tol=1e-13)
        assert np.abs(res(out.x.reshape(g.shape), u, f[k])).max() <= 1e-11
        u = out.x.reshape(g.shape)
    np.testing.assert_allclose(sol.u[0], u, atol=1e-8)


def test_dirichlet_nodes_keep_values():
    prob = make_problem(n=9, seed=12)
    g = prob.grid
    bc = build_boundary(g, [dict(edge="left", lo=0.3, hi=0.7, kind="entrance", u=2.0, inflow=0.0),
                            dict(edge="right", lo=0.3, hi=0.7, kind="exit", u=-1.0)])
    prob = prob.with_changes(bc=bc)
    f, V = random_fV(prob)
    sol = solve_hjb(f, V, prob)
    for k in range(g.nt):
        np.testing.assert_array_equal(sol.u[k][bc.u_dirichlet], bc.u_values[bc.u_dirichlet])


def test_newton_failure_is_reported():
    prob = make_problem(n=6, seed=13)
    g = prob.grid
    with pytest.raises(HjbNewtonError):
        hjb_step(np.full(g.shape, np.nan), np.zeros(g.shape), np.zeros(g.shape + (2,)), prob)


@pytest.mark.parametrize("direction", ["f", "V", "both"])
def test_lin_hjb_finite_differences(direction):
    prob = make_problem(n=8, nt=8, seed=14)
    f, V = random_fV(prob)
    rng = np.random.default_rng(15)
    df = rng.normal(size=f.shape) if direction != "V" else np.zeros_like(f)
    dV = rng.normal(size=V.shape) if direction != "f" else np.zeros_like(V)
    cfg = HjbStepConfig(1e-13)
    base = solve_hjb(f, V, prob, cfg)
    lin = lin_hjb(df, dV, base, V, prob)
    errs = []
    for d in (1e-4, 1e-5):
        fd = (solve_hjb(f + d * df, V + d * dV, prob, cfg).u - base.u) / d
        errs.append(np.abs(fd - lin).max())
    assert 8 <= errs[0] / errs[1] <= 12


def test_lin_hjb_zero():
    prob = make_problem(seed=16)
    f, V = random_fV(prob)
    base = solve_hjb(f, V, prob)
    np.testing.assert_array_equal(lin_hjb(np.zeros_like(f), np.zeros_like(V), base, V, prob), 0.0)
