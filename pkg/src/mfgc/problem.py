"""Discrete problem definition shared by the HJB, FP, drift and outer solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .boundary import BoundarySpec, neumann_boundary
from .drift import DriftParams, Kernel, KernelTable, kernel_table
from .grid import SpaceTimeGrid
from .linalg import CooPattern
from .numham import FaceSlopes, HamiltonianParams


class FaceLayout:
    """Interior faces of the node grid and the five-point CSR pattern.

    Face ``f`` joins node ``L[f]`` (left/bottom) and node ``R[f]`` (right/top).
    Axis-1 faces come first in the row-major order of ``s1[1:-1]``, then the
    axis-2 faces in the order of ``s2[:, 1:-1]``.
    """

    def __init__(self, grid: SpaceTimeGrid):
        nx1, nx2 = grid.shape
        idx = np.arange(grid.n_nodes).reshape(nx1, nx2)
        self.n = grid.n_nodes
        self.n1 = (nx1 - 1) * nx2
        self.L = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
        self.R = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
        nf = self.L.size
        self.hinv = np.empty(nf)
        self.hinv[: self.n1] = 1.0 / grid.h1
        self.hinv[self.n1:] = 1.0 / grid.h2
        self.h2inv = self.hinv**2
        diag = np.arange(self.n)
        L, R = self.L, self.R
        self.pattern = CooPattern(
            np.concatenate([diag, L, L, R, R]), np.concatenate([diag, L, R, R, L]), self.n
        )

    def interior(self, fs: FaceSlopes) -> np.ndarray:
        return np.concatenate([fs.s1[1:-1].ravel(), fs.s2[:, 1:-1].ravel()])

    def interior_pair(self, F1: np.ndarray, F2: np.ndarray) -> np.ndarray:
        return np.concatenate([F1[1:-1].ravel(), F2[:, 1:-1].ravel()])

    def assemble(self, dt: float, nu: float, wl: np.ndarray, wr: np.ndarray, transpose: bool = False):
        """``I + dt * sum_f`` of face blocks.

        With ``A = nu/h^2 + wl/h`` and ``B = nu/h^2 + wr/h`` the block of face
        ``f`` is ``[[A, -A], [-B, B]]`` in rows ``(L, R)``; ``transpose`` gives
        ``[[A, -B], [-A, B]]``.
        """
        A = dt * (nu * self.h2inv + wl * self.hinv)
        B = dt * (nu * self.h2inv + wr * self.hinv)
        if transpose:
            vals = np.concatenate([np.ones(self.n), A, -B, B, -A])
        else:
            vals = np.concatenate([np.ones(self.n), A, -A, B, -B])
        return self.pattern.assemble(vals)

    def divergence(self, flux: np.ndarray) -> np.ndarray:
        """Nodal ``sum of outgoing face fluxes / h``: ``+flux/h`` at ``L``, ``-flux/h`` at ``R``."""
        q = flux * self.hinv
        return np.bincount(self.L, q, self.n) - np.bincount(self.R, q, self.n)


@dataclass
class Problem:
    """A fully discretized MFGC instance on one grid."""

    grid: SpaceTimeGrid
    nu: float
    ham: HamiltonianParams
    c: float
    f0: np.ndarray
    m0: np.ndarray
    phi: np.ndarray
    kernel: Kernel
    drift: DriftParams = field(default_factory=DriftParams)
    bc: BoundarySpec | None = None

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        shape = self.grid.shape
        self.f0 = np.broadcast_to(np.asarray(self.f0, dtype=float), shape).copy()
        self.m0 = np.broadcast_to(np.asarray(self.m0, dtype=float), shape).copy()
        self.phi = np.broadcast_to(np.asarray(self.phi, dtype=float), shape).copy()
        if np.any(self.m0 < 0):
            raise ValueError("m0 must be nonnegative")
        if self.bc is None:
            self.bc = neumann_boundary(self.grid)
        if self.bc.u_dirichlet.shape != shape:
            raise ValueError("boundary spec does not match the grid")

    @cached_property
    def layout(self) -> FaceLayout:
        return FaceLayout(self.grid)

    @cached_property
    def table(self) -> KernelTable:
        return kernel_table(self.grid, self.kernel)

    @cached_property
    def source(self) -> np.ndarray:
        return self.bc.source(self.grid)

    def with_changes(self, **changes) -> "Problem":
        """Copy with new field values, reusing cached geometry when the grid and kernel are unchanged."""
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        new = Problem(**kw)
        if new.grid == self.grid:
            if "layout" in self.__dict__:
                new.__dict__["layout"] = self.__dict__["layout"]
            if new.kernel == self.kernel and "table" in self.__dict__:
                new.__dict__["table"] = self.__dict__["table"]
        return new
