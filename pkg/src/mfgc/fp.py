"""Forward Fokker-Planck marcher in conservative face form, and its linearization.

The flux across an interior face with slope ``s`` is

    F = nu * (m_L - m_R) / h + [s]_- * m_L - [s]_+ * m_R,

and a step solves ``m^{k+1} + dt * div_h F(m^{k+1}) = m^k + dt * source``.
Wall faces carry zero total flux, entrance faces inject the prescribed rate,
exit nodes are pinned to ``m = 0``.  Without exits or entrances the step
matrix is exactly the transpose of the HJB Jacobian at the same ``(u, V)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GhostExtension, half_index
from .hjb import HjbSolution
from .linalg import LUFactor
from .numham import FaceSlopes, QuadField, dminus_eps, dplus_eps, face_slopes, minus_eps, plus_eps
from .problem import Problem


def fp_matrix(fs: FaceSlopes, prob: Problem):
    """Step matrix ``I + dt * (face fluxes)`` at the given face slopes."""
    lay = prob.layout
    eps = prob.ham.eps
    s = lay.interior(fs)
    M = lay.assemble(prob.grid.dt, prob.nu, minus_eps(s, eps), plus_eps(s, eps), transpose=True)
    return lay.pattern.identity_rows(M, prob.bc.m_exit.ravel())


def _rhs(m_cur: np.ndarray, prob: Problem) -> np.ndarray:
    b = m_cur + prob.grid.dt * prob.source
    b[prob.bc.m_exit] = 0.0
    return b.ravel()


def fp_step(m_cur, u_cur, V_lvl, prob: Problem) -> np.ndarray:
    """One implicit FP step driven by ``(u^k, V^k)``."""
    fs = face_slopes(u_cur, V_lvl, prob.grid, prob.ham)
    return LUFactor(fp_matrix(fs, prob)).solve(_rhs(m_cur, prob)).reshape(prob.grid.shape)


def shares_hjb_factor(prob: Problem) -> bool:
    """True when the FP step matrix is the transposed HJB Jacobian."""
    return prob.bc.pure_neumann and prob.ham.eps == 0


@dataclass
class FpSolution:
    m: np.ndarray
    solvers: list  # per level: callable b -> M_k^{-1} b

    def solve(self, k: int, b: np.ndarray) -> np.ndarray:
        return self.solvers[k](b)


def _solver(k, hsol, prob, fs):
    if hsol is not None and shares_hjb_factor(prob):
        lu = hsol.steps[k].lu
        return lambda b: lu.solve(b, trans=True)
    lu = LUFactor(fp_matrix(fs, prob))
    return lu.solve


def solve_fp(u: np.ndarray, V: np.ndarray, prob: Problem, hsol: HjbSolution | None = None,
             initial: np.ndarray | None = None) -> FpSolution:
    """Forward march from ``m^0 = m0`` (or ``initial``).

    With ``hsol`` given the face slopes are reused and, in the pure-Neumann
    exact-bracket case, so are the HJB factorizations (transposed solves).
    """
    g = prob.grid
    m = np.empty((g.nt + 1,) + g.shape)
    m[0] = prob.m0 if initial is None else initial
    solvers = []
    for k in range(g.nt):
        fs = hsol.steps[k].slopes if hsol is not None else face_slopes(u[k], V[k], g, prob.ham)
        solve = _solver(k, hsol, prob, fs)
        solvers.append(solve)
        m[k + 1] = solve(_rhs(m[k], prob)).reshape(g.shape)
    return FpSolution(m, solvers)


def lin_eps(s: np.ndarray) -> float:
    """Smoothing width used for bracket derivatives in the linearization."""
    return 1e-6 * max(1.0, float(np.max(np.abs(s))) if s.size else 1.0)


def lin_fp(du: np.ndarray, dV: np.ndarray, fsol: FpSolution, slopes: list, prob: Problem) -> np.ndarray:
    """Linearized forward march with ``dm^0 = 0`` at the base state.

    ``slopes[k]`` are the base face slopes of level ``k``.
    """
    g = prob.grid
    lay = prob.layout
    ham = prob.ham
    dm = np.zeros((g.nt + 1,) + g.shape)
    exit_mask = prob.bc.m_exit
    for k in range(g.nt):
        s = lay.interior(slopes[k])
        e = lin_eps(s)
        duv = du[k].ravel()
        dF1, dF2 = half_index(dV[k])
        ds = (duv[lay.R] - duv[lay.L]) * lay.hinv / ham.a - ham.lt * lay.interior_pair(dF1, dF2)
        mv = fsol.m[k + 1].ravel()
        dflux = ds * (dminus_eps(s, e) * mv[lay.L] - dplus_eps(s, e) * mv[lay.R])
        rhs = dm[k].ravel() - g.dt * lay.divergence(dflux)
        rhs[exit_mask.ravel()] = 0.0
        dm[k + 1] = fsol.solve(k, rhs).reshape(g.shape)
    return dm


def fp_ghost(m: np.ndarray, Q: QuadField, prob: Problem) -> GhostExtension:
    """Ghost values of ``m`` that cancel the total (diffusive plus transport) flux through each wall.

    Left edge: ``m_{-1} (nu + h q1_{-1}) = m_0 (nu - h q2_0)``, and symmetrically
    on the other edges.
    """
    g, nu = prob.grid, prob.nu
    q = Q.q
    h1, h2 = g.h1, g.h2
    return GhostExtension(
        left=m[0, :] * (nu - h1 * q[0, :, 1]) / (nu + h1 * Q.left),
        right=m[-1, :] * (nu + h1 * q[-1, :, 0]) / (nu - h1 * Q.right),
        bottom=m[:, 0] * (nu - h2 * q[:, 0, 3]) / (nu + h2 * Q.bottom),
        top=m[:, -1] * (nu + h2 * q[:, -1, 2]) / (nu - h2 * Q.top),
    )
