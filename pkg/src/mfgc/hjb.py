"""Backward HJB marcher with a Newton solve per time level, and its linearization.

One level solves ``R(u) = 0`` with

    R(u) = u - v + dt * (-nu * Lap_h u + g(Phi(u, V), V) - f),

where ``v`` is the next-level value.  Dirichlet nodes carry ``R = u - g_D``.
The Jacobian is ``I + dt * (diffusion + upwind transport)``, assembled face
by face: a face with slope ``s`` adds ``[s]_- / h`` to its left node and
``[s]_+ / h`` to its right node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import half_index
from .linalg import LUFactor
from .numham import FaceSlopes, dminus_eps, dplus_eps, face_slopes, g_num, minus_eps, phi_from_slopes, plus_eps
from .problem import Problem


@dataclass(frozen=True)
class HjbStepConfig:
    newton_tol: float = 1e-10
    max_newton: int = 50

    def __post_init__(self):
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton < 1:
            raise ValueError("max_newton must be at least 1")


class HjbNewtonError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(msg)
        self.residual = residual


def _weights(fs: FaceSlopes, eps: float):
    """Face derivative weights ``(-m m', p p')`` of ``g``; equal to ``([s]_-, [s]_+)`` for exact brackets."""
    wm1 = -minus_eps(fs.s1, eps) * dminus_eps(fs.s1, eps)
    wp1 = plus_eps(fs.s1, eps) * dplus_eps(fs.s1, eps)
    wm2 = -minus_eps(fs.s2, eps) * dminus_eps(fs.s2, eps)
    wp2 = plus_eps(fs.s2, eps) * dplus_eps(fs.s2, eps)
    return (wm1, wp1), (wm2, wp2)


def _diffusion(u: np.ndarray, prob: Problem) -> np.ndarray:
    lay = prob.layout
    uv = u.ravel()
    flux = prob.nu * (uv[lay.L] - uv[lay.R]) * lay.hinv
    return lay.divergence(flux).reshape(u.shape)


def _residual(u, u_next, f_lvl, V_lvl, fs, prob):
    q = phi_from_slopes(fs, prob.ham.eps).q
    R = u - u_next + prob.grid.dt * (_diffusion(u, prob) + g_num(q, V_lvl, prob.ham) - f_lvl)
    bc = prob.bc
    if bc.u_dirichlet.any():
        R[bc.u_dirichlet] = u[bc.u_dirichlet] - bc.u_values[bc.u_dirichlet]
    return R


def residual_Ru(u_cur, u_next, f_lvl, V_lvl, prob: Problem) -> np.ndarray:
    """Nodewise residual of the implicit HJB step."""
    fs = face_slopes(u_cur, V_lvl, prob.grid, prob.ham)
    return _residual(u_cur, u_next, f_lvl, V_lvl, fs, prob)


def _jacobian(fs: FaceSlopes, prob: Problem):
    lay = prob.layout
    (wm1, wp1), (wm2, wp2) = _weights(fs, prob.ham.eps)
    wl = lay.interior_pair(wm1, wm2)
    wr = lay.interior_pair(wp1, wp2)
    J = lay.assemble(prob.grid.dt, prob.nu, wl, wr)
    return lay.pattern.identity_rows(J, prob.bc.u_dirichlet.ravel())


def assemble_jacobian(u_cur, V_lvl, prob: Problem):
    """Sparse ``dR/du`` at ``u_cur``; Dirichlet rows are identity rows."""
    return _jacobian(face_slopes(u_cur, V_lvl, prob.grid, prob.ham), prob)


@dataclass
class HjbStep:
    u: np.ndarray
    slopes: FaceSlopes
    lu: LUFactor
    iterations: int
    residuals: list = field(default_factory=list)


def hjb_step(u_next, f_lvl, V_lvl, prob: Problem, cfg: HjbStepConfig = HjbStepConfig(), guess=None) -> HjbStep:
    """Newton solve of one level from ``guess`` (default ``u_next``).

    The returned factorization is of the Jacobian at the returned ``u``.
    """
    u = np.array(u_next if guess is None else guess, dtype=float)
    bc = prob.bc
    if bc.u_dirichlet.any():
        u[bc.u_dirichlet] = bc.u_values[bc.u_dirichlet]
    hist = []
    for it in range(cfg.max_newton + 1):
        fs = face_slopes(u, V_lvl, prob.grid, prob.ham)
        R = _residual(u, u_next, f_lvl, V_lvl, fs, prob)
        res = float(np.max(np.abs(R)))
        hist.append(res)
        if not np.isfinite(res):
            raise HjbNewtonError("non-finite HJB residual", res)
        lu = LUFactor(_jacobian(fs, prob))
        if res <= cfg.newton_tol:
            return HjbStep(u, fs, lu, it, hist)
        if it == cfg.max_newton:
            break
        u -= lu.solve(R.ravel()).reshape(u.shape)
    raise HjbNewtonError(f"HJB Newton did not converge in {cfg.max_newton} iterations (residual {res:.3e})", res)


@dataclass
class HjbSolution:
    u: np.ndarray
    steps: list

    @property
    def newton_iterations(self) -> list:
        return [s.iterations for s in self.steps]


def solve_hjb(f: np.ndarray, V: np.ndarray, prob: Problem, cfg: HjbStepConfig = HjbStepConfig(),
              terminal: np.ndarray | None = None) -> HjbSolution:
    """Backward march from ``u^{nt} = phi`` (or ``terminal``)."""
    nt = prob.grid.nt
    if f.shape[0] != nt or V.shape[0] != nt:
        raise ValueError("f and V need nt levels")
    u = np.empty((nt + 1,) + prob.grid.shape)
    u[nt] = prob.phi if terminal is None else terminal
    steps = [None] * nt
    for k in range(nt - 1, -1, -1):
        st = hjb_step(u[k + 1], f[k], V[k], prob, cfg)
        u[k] = st.u
        steps[k] = st
    return HjbSolution(u, steps)


def dg_dV(fs: FaceSlopes, V_lvl, dV_lvl, prob: Problem) -> np.ndarray:
    """Directional derivative of ``g(Phi(u, V), V)`` in ``V`` along ``dV``."""
    ham = prob.ham
    (wm1, wp1), (wm2, wp2) = _weights(fs, ham.eps)
    dF1, dF2 = half_index(dV_lvl)
    t1 = wm1[1:] * dF1[1:] - wp1[:-1] * dF1[:-1]
    t2 = wm2[:, 1:] * dF2[:, 1:] - wp2[:, :-1] * dF2[:, :-1]
    return ham.a * ham.lt * (t1 + t2) - ham.a * ham.lam**2 * ham.theta * np.sum(V_lvl * dV_lvl, axis=-1)


def lin_hjb(df: np.ndarray, dV: np.ndarray, sol: HjbSolution, V: np.ndarray, prob: Problem) -> np.ndarray:
    """Linearized backward march with ``du^{nt} = 0`` at the base state ``(sol, V)``."""
    nt = prob.grid.nt
    dt = prob.grid.dt
    du = np.zeros((nt + 1,) + prob.grid.shape)
    dmask = prob.bc.u_dirichlet
    for k in range(nt - 1, -1, -1):
        st = sol.steps[k]
        rhs = du[k + 1] + dt * (df[k] - dg_dV(st.slopes, V[k], dV[k], prob))
        rhs[dmask] = 0.0
        du[k] = st.lu.solve(rhs.ravel()).reshape(prob.grid.shape)
    return du
