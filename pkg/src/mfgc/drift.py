"""Interaction kernels, the normalization Z, the average-drift map and its L-sweep fixed point.

On one level the drift map reads, with ``w = (central gradient of u) / a``,

    V_out(x) = (1 / Z(x)) * sum_y K(x, y) m(y) (-w(y) + lam*theta*V_in(y)),
    Z(x)     = sum_y K(x, y) m(y),

which is an affine map of ``V_in`` with max-norm Lipschitz constant
``|lam|*theta``.  Nodes where ``Z`` falls below the floor get zero drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import sweep
from .grid import SpaceTimeGrid, central_gradient
from .numham import HamiltonianParams


def smooth_cutoff(t):
    """C1 profile: 1 for ``t <= 0``, 0 for ``t >= 1``, cubic smoothstep in between."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class Kernel:
    """Radial cutoff kernel, optionally restricted to a forward cone of half-angle ``omega0``."""

    variant: str = "radial"
    rho: float = 0.2
    omega0: float | None = None

    def __post_init__(self):
        if self.variant not in ("radial", "cone"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.variant == "cone" and not (self.omega0 is not None and 0 < self.omega0 < np.pi / 2):
            raise ValueError("cone kernel needs omega0 in (0, pi/2)")

    def radial(self, r):
        return smooth_cutoff((np.asarray(r, dtype=float) - 0.9 * self.rho) / (0.1 * self.rho))

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = y - x
        val = self.radial(np.hypot(d[..., 0], d[..., 1]))
        if self.variant == "cone":
            # angle to (1, 0); coincident points count as angle 0
            omega = np.abs(np.arctan2(d[..., 1], d[..., 0]))
            kappa = smooth_cutoff((omega - 0.9 * self.omega0) / (0.1 * self.omega0))
            val = val * kappa * (y[..., 0] >= x[..., 0])
        return val


def kernel_eval(x, y, k: Kernel):
    return k(x, y)


@dataclass
class KernelTable:
    """Node-pair weights ``K[n, r]`` in CSR form (rows are target nodes)."""

    K: sp.csr_matrix

    @cached_property
    def arrays(self):
        K = self.K
        return (K.indptr.astype(np.int32), K.indices.astype(np.int32), K.data.astype(np.float64))

    @property
    def nnz(self) -> int:
        return self.K.nnz


def kernel_table(grid: SpaceTimeGrid, k: Kernel) -> KernelTable:
    pts = grid.coords.reshape(-1, 2)
    n = pts.shape[0]
    pairs = cKDTree(pts).query_pairs(k.rho, output_type="ndarray")
    rows = np.concatenate([np.arange(n), pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([np.arange(n), pairs[:, 1], pairs[:, 0]])
    vals = k(pts[rows], pts[cols])
    keep = vals > 0
    K = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))
    K.sort_indices()
    return KernelTable(K)


@dataclass(frozen=True)
class DriftParams:
    L: int = 1
    sweep: str = "gauss_seidel"
    z_floor: float = 1e-12

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if self.sweep not in ("jacobi", "gauss_seidel"):
            raise ValueError(f"unknown sweep {self.sweep!r}")
        if self.z_floor <= 0:
            raise ValueError("z_floor must be positive")


def compute_Z(m_next: np.ndarray, table: KernelTable, z_floor: float = 1e-12):
    """Return ``(Z, flagged)`` on one level; ``flagged`` marks ``Z <= z_floor * sum(m)``."""
    mv = np.asarray(m_next, dtype=float).ravel()
    Z = table.K @ mv
    flagged = Z <= z_floor * max(mv.sum(), 0.0)
    return Z.reshape(np.shape(m_next)), flagged.reshape(np.shape(m_next))


def _inverse_Z(mv, table, z_floor):
    Z = table.K @ mv
    flagged = Z <= z_floor * max(mv.sum(), 0.0)
    inv = np.zeros_like(Z)
    inv[~flagged] = 1.0 / Z[~flagged]
    return inv


def drift_gradient(u: np.ndarray, grid: SpaceTimeGrid, ham: HamiltonianParams) -> np.ndarray:
    """``w = grad_h u / a`` with the centred difference, shape ``(nx1, nx2, 2)``."""
    return central_gradient(u, grid) / ham.a


def apply_V(u, m_next, Vp, table: KernelTable, ham: HamiltonianParams, grid: SpaceTimeGrid,
            z_floor: float = 1e-12) -> np.ndarray:
    """One evaluation of the drift map with all inputs from the previous iterate."""
    N = grid.n_nodes
    mv = np.ascontiguousarray(m_next, dtype=float).ravel()
    inv = _inverse_Z(mv, table, z_floor)
    w = drift_gradient(u, grid, ham).reshape(N, 2)
    out = np.empty((N, 2))
    sweep.drift_sweep(*table.arrays, mv, inv, np.ascontiguousarray(w),
                      np.ascontiguousarray(Vp, dtype=float).reshape(N, 2), out, ham.lt, False)
    return out.reshape(grid.shape + (2,))


def coupling_f(m: np.ndarray, c: float, f0: np.ndarray) -> np.ndarray:
    """``f~^k = c * m^{k+1} + f0`` for ``k = 0 .. nt - 1``."""
    return c * m[1:] + f0[None]


@dataclass
class DriftOperator:
    """The L-sweep drift map on all levels and its linearization at the last evaluated point."""

    table: KernelTable
    ham: HamiltonianParams
    grid: SpaceTimeGrid
    params: DriftParams = field(default_factory=DriftParams)

    def __post_init__(self):
        self._base = None

    @property
    def gs(self) -> bool:
        return self.params.sweep == "gauss_seidel"

    def evaluate(self, u: np.ndarray, m: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Apply ``L`` sweeps per level from ``V^k`` with ``u^k`` and ``m^{k+1}``; store the base point."""
        g, N, L = self.grid, self.grid.n_nodes, self.params.L
        nt = V.shape[0]
        its = np.empty((L + 1, nt, N, 2))
        its[0] = V.reshape(nt, N, 2)
        ms = np.ascontiguousarray(m[1:nt + 1].reshape(nt, N))
        invs = np.empty((nt, N))
        ws = np.empty((nt, N, 2))
        arr = self.table.arrays
        for k in range(nt):
            invs[k] = _inverse_Z(ms[k], self.table, self.params.z_floor)
            ws[k] = drift_gradient(u[k], g, self.ham).reshape(N, 2)
            for ell in range(1, L + 1):
                sweep.drift_sweep(*arr, ms[k], invs[k], ws[k], its[ell - 1, k], its[ell, k], self.ham.lt, self.gs)
        self._base = dict(its=its, m=ms, inv=invs, w=ws)
        return its[L].reshape(V.shape).copy()

    def linear(self, du: np.ndarray, dm: np.ndarray, dV: np.ndarray) -> np.ndarray:
        """Directional derivative of :meth:`evaluate` at the stored base point."""
        if self._base is None:
            raise RuntimeError("evaluate must be called before linear")
        b = self._base
        g, N, L = self.grid, self.grid.n_nodes, self.params.L
        nt = dV.shape[0]
        arr = self.table.arrays
        out = np.empty((nt, N, 2))
        bufs = (np.empty((N, 2)), np.empty((N, 2)))
        for k in range(nt):
            dmk = np.ascontiguousarray(dm[k + 1].ravel(), dtype=float)
            dwk = drift_gradient(du[k], g, self.ham).reshape(N, 2)
            prev, cur = bufs
            prev[...] = dV[k].reshape(N, 2)
            for ell in range(1, L + 1):
                sweep.drift_sweep_lin(*arr, b["m"][k], b["inv"][k], b["w"][k], b["its"][ell - 1, k],
                                      b["its"][ell, k], dmk, dwk, prev, cur, self.ham.lt, self.gs)
                prev, cur = cur, prev
            out[k] = prev
        return out.reshape(dV.shape)


def solve_FV(u, m, V, table: KernelTable, ham: HamiltonianParams, grid: SpaceTimeGrid,
             params: DriftParams = DriftParams()) -> np.ndarray:
    return DriftOperator(table, ham, grid, params).evaluate(u, m, V)


def lin_drift(u, m, V, du, dm, dV, table: KernelTable, ham: HamiltonianParams, grid: SpaceTimeGrid,
              params: DriftParams = DriftParams()) -> np.ndarray:
    op = DriftOperator(table, ham, grid, params)
    op.evaluate(u, m, V)
    return op.linear(du, dm, dV)
