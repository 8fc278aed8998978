"""Outer fixed-point system in ``(f, V)``, matrix-free Newton-BiCGStab, continuation and the stationary iteration.

Unknowns are ``f`` and ``V`` on levels ``0 .. nt-1``.  The residual is

    G_f = f - (c * m^{k+1} + f0),      G_V = V - F_V(u, m, V),

with ``u = F_u(f, V)`` (backward HJB) and ``m = F_m(u, V)`` (forward FP).
Its Jacobian is applied by chaining the linearized HJB, FP and drift
solves at the last evaluated point.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .drift import DriftOperator, apply_V, coupling_f
from .fp import FpSolution, fp_matrix, solve_fp, lin_fp
from .grid import SpaceTimeGrid
from .hjb import HjbNewtonError, HjbSolution, HjbStepConfig, lin_hjb, residual_Ru, solve_hjb
from .linalg import KrylovConfig, bicgstab
from .numham import face_slopes
from .problem import Problem

log = logging.getLogger(__name__)


@dataclass
class OuterState:
    f: np.ndarray
    V: np.ndarray
    u: np.ndarray | None = None
    m: np.ndarray | None = None

    def copy(self) -> "OuterState":
        return OuterState(self.f.copy(), self.V.copy(),
                          None if self.u is None else self.u.copy(),
                          None if self.m is None else self.m.copy())


def initial_state(prob: Problem) -> OuterState:
    """``f = f0 + c * m0`` on every level, ``V = 0``."""
    g = prob.grid
    f = np.broadcast_to(prob.f0 + prob.c * prob.m0, (g.nt,) + g.shape).copy()
    return OuterState(f, np.zeros((g.nt,) + g.shape + (2,)))


def picard_warmup(prob: Problem, state: OuterState, sweeps: int,
                  hjb_cfg: HjbStepConfig = HjbStepConfig()) -> tuple[OuterState, int]:
    """Fixed-point sweeps ``(f, V) <- (f, V) - G(f, V)``; returns the sweep with the smallest residual.

    The residual may rise on the first sweep before it falls, so all sweeps
    are taken and the best iterate kept.
    """
    f, V = state.f, state.V
    ev = Evaluation(prob, f, V, hjb_cfg)
    best, best_r, best_k = (f, V), ev.norm, 0
    for k in range(1, sweeps + 1):
        try:
            ev = Evaluation(prob, f - ev.Gf, V - ev.Gv, hjb_cfg)
        except HjbNewtonError:
            break
        f, V = ev.f, ev.V
        if not np.isfinite(ev.norm):
            break
        if ev.norm < best_r:
            best, best_r, best_k = (f, V), ev.norm, k
    return OuterState(*best), best_k


@dataclass(frozen=True)
class NewtonConfig:
    """Outer solver settings.

    ``warmup`` fixed-point sweeps are applied only on a cold start (no
    initial state given).
    """

    tol: float = 1e-8
    krylov: KrylovConfig = KrylovConfig(1e-7, 400)
    max_newton: int = 30
    patience: int = 3
    line_search: bool = False
    hjb: HjbStepConfig = HjbStepConfig()
    warmup: int = 4


class OuterDivergenceError(RuntimeError):
    def __init__(self, msg: str, report: "StageReport"):
        super().__init__(msg)
        if isinstance(report, StageReport):
            report.error = msg
        self.report = report


@dataclass
class StageReport:
    label: str = ""
    params: dict = field(default_factory=dict)
    newton_iters: int = 0
    bicgstab_iters: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    seconds: float = 0.0
    converged: bool = False
    error: str = ""
    warmup_sweeps: int = 0

    @property
    def avg_bicgstab(self) -> float:
        return float(np.mean(self.bicgstab_iters)) if self.bicgstab_iters else 0.0

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")


@dataclass
class SolveReport:
    stages: list = field(default_factory=list)


def residual_norm(Gf: np.ndarray, Gv: np.ndarray) -> float:
    """Euclidean norm divided by the square root of the unknown count."""
    n = Gf.size + Gv.size
    return float(np.sqrt((np.sum(Gf**2) + np.sum(Gv**2)) / n))


class Evaluation:
    """Residual of the outer system at ``(f, V)`` with everything needed for Jacobian products."""

    def __init__(self, prob: Problem, f: np.ndarray, V: np.ndarray, hjb_cfg: HjbStepConfig = HjbStepConfig()):
        self.prob = prob
        self.f = f
        self.V = V
        self.hsol: HjbSolution = solve_hjb(f, V, prob, hjb_cfg)
        self.fsol: FpSolution = solve_fp(self.hsol.u, V, prob, self.hsol)
        self.drift = DriftOperator(prob.table, prob.ham, prob.grid, prob.drift)
        self.Vt = self.drift.evaluate(self.hsol.u, self.fsol.m, V)
        self.Gf = f - coupling_f(self.fsol.m, prob.c, prob.f0)
        self.Gv = V - self.Vt
        self.slopes = [s.slopes for s in self.hsol.steps]

    @property
    def u(self):
        return self.hsol.u

    @property
    def m(self):
        return self.fsol.m

    @property
    def norm(self) -> float:
        return residual_norm(self.Gf, self.Gv)

    def apply(self, df: np.ndarray, dV: np.ndarray):
        p = self.prob
        du = lin_hjb(df, dV, self.hsol, self.V, p)
        dm = lin_fp(du, dV, self.fsol, self.slopes, p)
        dVt = self.drift.linear(du, dm, dV)
        return df - p.c * dm[1:], dV - dVt

    # flat-vector helpers for the Krylov solver
    def pack(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.concatenate([a.ravel(), b.ravel()])

    def unpack(self, x: np.ndarray):
        nf = self.f.size
        return x[:nf].reshape(self.f.shape), x[nf:].reshape(self.V.shape)

    def apply_flat(self, x: np.ndarray) -> np.ndarray:
        return self.pack(*self.apply(*self.unpack(x)))


def residual_G(f, V, prob: Problem, hjb_cfg: HjbStepConfig = HjbStepConfig()) -> Evaluation:
    return Evaluation(prob, f, V, hjb_cfg)


def apply_A(df, dV, ev: Evaluation):
    return ev.apply(df, dV)


def _stage_params(prob: Problem) -> dict:
    g = prob.grid
    return dict(nu=prob.nu, **{"lambda": prob.ham.lam}, theta=prob.ham.theta, c=prob.c, L=prob.drift.L,
                grid=f"{g.nx1}x{g.nx2}x{g.nt}")


def newton_outer(prob: Problem, state: OuterState | None = None, cfg: NewtonConfig = NewtonConfig(),
                 label: str = "") -> tuple[OuterState, StageReport]:
    """Newton iterations ``A dx = -G`` with BiCGStab until the RMS residual is at most ``cfg.tol``."""
    t0 = time.perf_counter()
    rep = StageReport(label=label, params=_stage_params(prob))
    if state is None:
        state, rep.warmup_sweeps = picard_warmup(prob, initial_state(prob), cfg.warmup, cfg.hjb)
    f, V = state.f.copy(), state.V.copy()
    ev = Evaluation(prob, f, V, cfg.hjb)
    r = ev.norm
    rep.residuals.append(r)
    best, worse = r, 0
    while r > cfg.tol:
        if rep.newton_iters >= cfg.max_newton:
            rep.seconds = time.perf_counter() - t0
            raise OuterDivergenceError(f"no convergence in {cfg.max_newton} Newton steps (residual {r:.3e})", rep)
        kr = bicgstab(ev.apply_flat, -ev.pack(ev.Gf, ev.Gv), None, cfg.krylov)
        rep.bicgstab_iters.append(kr.iterations)
        dF, dV = ev.unpack(kr.x)
        step = 1.0
        while True:
            try:
                new = Evaluation(prob, f + step * dF, V + step * dV, cfg.hjb)
                rn = new.norm
            except HjbNewtonError:
                new, rn = None, np.inf
            if not cfg.line_search or rn < r or step < 1 / 32:
                break
            step *= 0.5
        rep.newton_iters += 1
        if new is None or not np.isfinite(rn):
            rep.seconds = time.perf_counter() - t0
            raise OuterDivergenceError("outer Newton produced a non-finite residual", rep)
        f, V, ev, r = new.f, new.V, new, rn
        rep.residuals.append(r)
        log.info("%s newton %d: residual %.3e, bicgstab %d", label, rep.newton_iters, r, kr.iterations)
        if r < best:
            best, worse = r, 0
        else:
            worse += 1
            if worse >= cfg.patience:
                rep.seconds = time.perf_counter() - t0
                raise OuterDivergenceError(f"outer residual grew for {worse} steps (residual {r:.3e})", rep)
    rep.converged = True
    rep.seconds = time.perf_counter() - t0
    return OuterState(f, V, ev.u.copy(), ev.m.copy()), rep


@dataclass
class ContinuationSchedule:
    """Ordered parameter values; ``make_problem(value)`` builds each stage."""

    parameter: str
    values: Sequence
    tols: Sequence[float] | None = None

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("continuation schedule needs at least one value")
        if self.tols is not None and len(self.tols) != len(self.values):
            raise ValueError("one tolerance per stage")


def continuation(schedule: ContinuationSchedule, make_problem: Callable[[object], Problem],
                 initial: OuterState | None = None, cfg: NewtonConfig = NewtonConfig()):
    """Solve the stages in order, each warm-started from the previous solution.

    Returns ``(state, SolveReport)``; a failing stage raises
    :class:`OuterDivergenceError` whose ``report`` holds all stages so far.
    """
    report = SolveReport()
    state = initial
    for i, value in enumerate(schedule.values):
        prob = make_problem(value)
        c = cfg if schedule.tols is None else replace(cfg, tol=schedule.tols[i])
        try:
            state, rep = newton_outer(prob, state, c, label=f"{schedule.parameter}={value}")
        except OuterDivergenceError as exc:
            report.stages.append(exc.report)
            exc.report = report
            raise
        report.stages.append(rep)
    return state, report


def neighbor_order(n_rows: int, n_cols: int):
    """Row-major cell order with the warm-start source of each cell.

    Above the diagonal a cell starts from its left neighbour, on or below it
    from the cell above; ``(0, 0)`` has no source.
    """
    out = []
    for i in range(n_rows):
        for j in range(n_cols):
            if i == 0 and j == 0:
                src = None
            elif j > i or i == 0:
                src = (i, j - 1)
            else:
                src = (i - 1, j)
            out.append(((i, j), src))
    return out


def _interp_levels(field_: np.ndarray, cg: SpaceTimeGrid, fg: SpaceTimeGrid) -> np.ndarray:
    nl = field_.shape[0]
    tc = np.arange(nl) * cg.dt
    tf = np.clip(np.arange(fg.nt) * fg.dt, tc[0], tc[-1])
    pts = np.stack(np.meshgrid(tf, fg.x1, fg.x2, indexing="ij"), axis=-1)
    if nl == 1:
        pts = pts[..., 1:]
        axes = (cg.x1, cg.x2)
        field_ = field_[0]
    else:
        axes = (tc, cg.x1, cg.x2)
    trailing = field_.shape[len(axes):]
    flat = field_.reshape(field_.shape[: len(axes)] + (-1,))
    out = np.stack([RegularGridInterpolator(axes, flat[..., c])(pts) for c in range(flat.shape[-1])], axis=-1)
    return out.reshape(out.shape[:-1] + trailing)


def coarse_to_fine_guess(state: OuterState, coarse: SpaceTimeGrid, fine: SpaceTimeGrid) -> OuterState:
    """Bilinear-in-space, linear-in-time interpolation of ``(f, V)`` onto ``fine``."""
    if coarse == fine:
        return OuterState(state.f.copy(), state.V.copy())
    return OuterState(_interp_levels(state.f, coarse, fine), _interp_levels(state.V, coarse, fine))


@dataclass
class StationaryResult:
    u: np.ndarray
    m: np.ndarray
    V: np.ndarray
    cycles: int
    variations: list
    residuals: dict
    state: OuterState
    reports: list


def time_variation(u: np.ndarray, m: np.ndarray) -> float:
    """``max_{k,k'} |u^k - u^k'|_inf + max_{k,k'} |m^k - m^k'|_inf``."""
    return float(np.max(np.ptp(u, axis=0)) + np.max(np.ptp(m, axis=0)))


def stationary_residuals(prob: Problem, u: np.ndarray, m: np.ndarray, V: np.ndarray, f: np.ndarray) -> dict:
    """Max-norm residuals of the time-independent discrete system at one slice."""
    g = prob.grid
    # the implicit step with u_next = u and dt scaling removed
    Ru = residual_Ru(u, u, f, V, prob) / g.dt
    Ru[prob.bc.u_dirichlet] = 0.0
    M = fp_matrix(face_slopes(u, V, g, prob.ham), prob)
    Rm = ((M @ m.ravel() - m.ravel()) / g.dt - prob.source.ravel()).reshape(g.shape)
    Rm[prob.bc.m_exit] = 0.0
    Rv = V - apply_V(u, m, V, prob.table, prob.ham, g, prob.drift.z_floor)
    return dict(hjb=float(np.max(np.abs(Ru))), fp=float(np.max(np.abs(Rm))), drift=float(np.max(np.abs(Rv))))


def stationary_solve(prob: Problem, cfg: NewtonConfig = NewtonConfig(), steady_tol: float = 1e-6,
                     max_cycles: int = 40, state: OuterState | None = None) -> StationaryResult:
    """Restart the horizon from the mid-horizon slices until the solution stops changing in time.

    Each cycle sets ``u(T) := u(T/2)`` and ``m(0) := m(T/2)`` from the previous
    cycle and warm-starts ``(f, V)``.
    """
    g = prob.grid
    mid = min(g.level_of(0.5 * g.T), g.nt - 1)
    variations, reports = [], []
    cur = prob
    for cycle in range(1, max_cycles + 1):
        state, rep = newton_outer(cur, state, cfg, label=f"cycle {cycle}")
        reports.append(rep)
        var = time_variation(state.u, state.m)
        variations.append(var)
        log.info("stationary cycle %d: variation %.3e", cycle, var)
        if var <= steady_tol:
            res = stationary_residuals(cur, state.u[mid], state.m[mid], state.V[mid], state.f[mid])
            return StationaryResult(state.u[mid].copy(), state.m[mid].copy(), state.V[mid].copy(), cycle,
                                    variations, res, state, reports)
        # LU roundoff can leave densities of order -1e-15
        cur = cur.with_changes(phi=state.u[mid].copy(), m0=np.maximum(state.m[mid], 0.0))
    raise RuntimeError(f"stationary iteration did not settle in {max_cycles} cycles (variation {variations[-1]:.3e})")
