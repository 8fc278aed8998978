"""Space-time grid, grid-function helpers and ghost-layer boundary extension.

Grid functions on one time level are arrays of shape ``(nx1, nx2)`` indexed
``[i, j]``; all-levels fields prepend a time axis.  Vector fields carry a
trailing component axis of length 2.  Flattening is row-major, so the node
``(i, j)`` has the lexicographic index ``i * nx2 + j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    # centred form keeps mirror nodes exact negatives of each other
    h = (hi - lo) / (n - 1)
    x = 0.5 * (lo + hi) + (np.arange(n) - 0.5 * (n - 1)) * h
    x[0], x[-1] = lo, hi
    return x


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Rectangular node grid on ``[x_lo, x_hi]`` with ``nt`` implicit time steps."""

    nx1: int
    nx2: int
    nt: int
    x_lo: tuple[float, float] = (0.0, 0.0)
    x_hi: tuple[float, float] = (1.0, 1.0)
    T: float = 1.0

    def __post_init__(self):
        if self.nx1 < 2 or self.nx2 < 2:
            raise ValueError("need at least two nodes per axis")
        if self.nt < 1:
            raise ValueError("need at least one time step")
        if not (self.x_hi[0] > self.x_lo[0] and self.x_hi[1] > self.x_lo[1]):
            raise ValueError("x_hi must exceed x_lo on both axes")
        if self.T <= 0:
            raise ValueError("horizon must be positive")

    @property
    def h1(self) -> float:
        return (self.x_hi[0] - self.x_lo[0]) / (self.nx1 - 1)

    @property
    def h2(self) -> float:
        return (self.x_hi[1] - self.x_lo[1]) / (self.nx2 - 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx1, self.nx2)

    @property
    def n_nodes(self) -> int:
        return self.nx1 * self.nx2

    @cached_property
    def x1(self) -> np.ndarray:
        return _axis(self.x_lo[0], self.x_hi[0], self.nx1)

    @cached_property
    def x2(self) -> np.ndarray:
        return _axis(self.x_lo[1], self.x_hi[1], self.nx2)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(nx1, nx2, 2)``."""
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        return np.stack([X1, X2], axis=-1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def level_of(self, t: float) -> int:
        """Nearest time level to ``t``."""
        if t < -1e-12 or t > self.T + 1e-12:
            raise ValueError(f"time {t} outside [0, {self.T}]")
        return int(round(t / self.dt))

    def index(self, i, j):
        return np.asarray(i) * self.nx2 + np.asarray(j)


@dataclass
class GhostExtension:
    """One-node-wide layers outside the grid: ``y[-1, :]``, ``y[nx1, :]``, ``y[:, -1]``, ``y[:, nx2]``."""

    left: np.ndarray
    right: np.ndarray
    bottom: np.ndarray
    top: np.ndarray

    def padded(self, y: np.ndarray) -> np.ndarray:
        """``y`` surrounded by its ghost layers, shape ``(nx1 + 2, nx2 + 2)``; corners are NaN."""
        nx1, nx2 = y.shape
        if self.left.shape != (nx2,) or self.right.shape != (nx2,):
            raise ValueError("axis-1 ghost layers must have length nx2")
        if self.bottom.shape != (nx1,) or self.top.shape != (nx1,):
            raise ValueError("axis-2 ghost layers must have length nx1")
        out = np.full((nx1 + 2, nx2 + 2), np.nan)
        out[1:-1, 1:-1] = y
        out[0, 1:-1] = self.left
        out[-1, 1:-1] = self.right
        out[1:-1, 0] = self.bottom
        out[1:-1, -1] = self.top
        return out


def _edge(z, n):
    return np.broadcast_to(np.asarray(z, dtype=float), (n,))


def extend_neumann(y: np.ndarray, grid: SpaceTimeGrid, z=None) -> GhostExtension:
    """First-order ghost values for ``dy/dn = z``: ``y[-1, j] = y[0, j] + h1 * z`` and so on.

    ``z`` is ``None`` (homogeneous), a scalar, or a mapping with keys
    ``left/right/bottom/top`` holding edge arrays.
    """
    nx1, nx2 = y.shape
    if z is None:
        z = 0.0
    if not isinstance(z, dict):
        z = dict(left=z, right=z, bottom=z, top=z)
    return GhostExtension(
        left=y[0, :] + grid.h1 * _edge(z["left"], nx2),
        right=y[-1, :] + grid.h1 * _edge(z["right"], nx2),
        bottom=y[:, 0] + grid.h2 * _edge(z["bottom"], nx1),
        top=y[:, -1] + grid.h2 * _edge(z["top"], nx1),
    )


def time_derivative(y: np.ndarray, k: int, dt: float) -> np.ndarray:
    """Forward difference ``(y[k+1] - y[k]) / dt`` of an all-levels field."""
    if not 0 <= k < y.shape[0] - 1:
        raise IndexError(f"time index {k} outside [0, {y.shape[0] - 2}]")
    return (y[k + 1] - y[k]) / dt


def _require(ghost):
    if ghost is None:
        raise ValueError("ghost layer required")


def d1_plus(y: np.ndarray, ghost: GhostExtension, grid: SpaceTimeGrid) -> np.ndarray:
    """Right difference along axis 1 at ``i = -1 .. nx1 - 1``; row ``p`` holds index ``i = p - 1``."""
    _require(ghost)
    ext = np.concatenate([ghost.left[None, :], y, ghost.right[None, :]], axis=0)
    return np.diff(ext, axis=0) / grid.h1


def d2_plus(y: np.ndarray, ghost: GhostExtension, grid: SpaceTimeGrid) -> np.ndarray:
    """Right difference along axis 2 at ``j = -1 .. nx2 - 1``; column ``p`` holds ``j = p - 1``."""
    _require(ghost)
    ext = np.concatenate([ghost.bottom[:, None], y, ghost.top[:, None]], axis=1)
    return np.diff(ext, axis=1) / grid.h2


def laplacian5(y: np.ndarray, ghost: GhostExtension, grid: SpaceTimeGrid) -> np.ndarray:
    """Five-point Laplacian with per-axis steps."""
    _require(ghost)
    p = ghost.padded(y)
    c = p[1:-1, 1:-1]
    return (
        (p[2:, 1:-1] - 2 * c + p[:-2, 1:-1]) / grid.h1**2
        + (p[1:-1, 2:] - 2 * c + p[1:-1, :-2]) / grid.h2**2
    )


def half_index(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Face values of a vector field by linear interpolation, edge faces copy the edge node.

    Returns ``(F1, F2)``: ``F1[p, j]`` is component 1 at ``(p - 1/2, j)`` for
    ``p = 0 .. nx1``; ``F2[i, p]`` is component 2 at ``(i, p - 1/2)``.
    """
    V1 = V[..., 0]
    V2 = V[..., 1]
    F1 = np.concatenate([V1[:1], 0.5 * (V1[1:] + V1[:-1]), V1[-1:]], axis=0)
    F2 = np.concatenate([V2[:, :1], 0.5 * (V2[:, 1:] + V2[:, :-1]), V2[:, -1:]], axis=1)
    return F1, F2


def central_gradient(u: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Centred gradient using homogeneous Neumann ghosts, shape ``(nx1, nx2, 2)``."""
    up = np.concatenate([u[:1], u, u[-1:]], axis=0)
    g1 = (up[2:] - up[:-2]) / (2 * grid.h1)
    up = np.concatenate([u[:, :1], u, u[:, -1:]], axis=1)
    g2 = (up[:, 2:] - up[:, :-2]) / (2 * grid.h2)
    return np.stack([g1, g2], axis=-1)
