"""Boundary partition for the coupled system.

Walls carry homogeneous Neumann data for ``u`` and the zero-total-flux rule
for ``m``.  Dirichlet nodes for ``u`` hold fixed values; exit nodes hold
``m = 0``; entrance faces inject agents at a prescribed rate per unit length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import SpaceTimeGrid

EDGES = ("left", "right", "bottom", "top")


@dataclass
class BoundarySpec:
    """Per-node boundary data on one grid.

    ``inflow[edge]`` is the entering flux of agents per unit boundary length
    and per unit time across the faces of that edge (zero on walls).
    """

    u_dirichlet: np.ndarray
    u_values: np.ndarray
    m_exit: np.ndarray
    inflow: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = self.u_dirichlet.shape
        if self.u_values.shape != shape or self.m_exit.shape != shape:
            raise ValueError("boundary masks must share the grid shape")
        for k, v in self.inflow.items():
            if k not in EDGES:
                raise ValueError(f"unknown edge {k!r}")
            n = shape[1] if k in ("left", "right") else shape[0]
            if np.shape(v) != (n,):
                raise ValueError(f"inflow on {k} must have length {n}")
            if not np.all(np.isfinite(v)):
                raise ValueError("inflow values must be finite")

    @property
    def pure_neumann(self) -> bool:
        return not (self.u_dirichlet.any() or self.m_exit.any() or any(np.any(v) for v in self.inflow.values()))

    def source(self, grid: SpaceTimeGrid) -> np.ndarray:
        """Inflow as a nodal source density (rate divided by the normal step)."""
        s = np.zeros(grid.shape)
        for k, v in self.inflow.items():
            v = np.asarray(v, dtype=float)
            if k == "left":
                s[0, :] += v / grid.h1
            elif k == "right":
                s[-1, :] += v / grid.h1
            elif k == "bottom":
                s[:, 0] += v / grid.h2
            else:
                s[:, -1] += v / grid.h2
        return s


def neumann_boundary(grid: SpaceTimeGrid) -> BoundarySpec:
    z = np.zeros(grid.shape, dtype=bool)
    return BoundarySpec(z, np.zeros(grid.shape), z.copy(), {})


def edge_segment(grid: SpaceTimeGrid, edge: str, lo: float, hi: float, tol: float = 1e-9) -> np.ndarray:
    """Mask of the nodes on ``edge`` whose tangential coordinate lies in ``[lo, hi]``."""
    mask = np.zeros(grid.shape, dtype=bool)
    if edge in ("left", "right"):
        sel = (grid.x2 >= lo - tol) & (grid.x2 <= hi + tol)
        mask[0 if edge == "left" else -1, sel] = True
    elif edge in ("bottom", "top"):
        sel = (grid.x1 >= lo - tol) & (grid.x1 <= hi + tol)
        mask[sel, 0 if edge == "bottom" else -1] = True
    else:
        raise ValueError(f"unknown edge {edge!r}")
    return mask


def build_boundary(grid: SpaceTimeGrid, segments) -> BoundarySpec:
    """Assemble a :class:`BoundarySpec` from segment descriptors.

    Each segment is a mapping with ``edge``, ``lo``, ``hi``, ``kind`` in
    ``{"entrance", "exit", "wall"}`` and, for entrance/exit, ``u`` (Dirichlet
    value); an entrance also takes ``inflow`` (rate).
    """
    spec = neumann_boundary(grid)
    inflow = {}
    for seg in segments:
        mask = edge_segment(grid, seg["edge"], seg["lo"], seg["hi"])
        kind = seg["kind"]
        if kind == "wall":
            continue
        if kind not in ("entrance", "exit"):
            raise ValueError(f"unknown segment kind {kind!r}")
        spec.u_dirichlet |= mask
        spec.u_values[mask] = seg["u"]
        if kind == "exit":
            spec.m_exit |= mask
        else:
            edge = seg["edge"]
            n = grid.nx2 if edge in ("left", "right") else grid.nx1
            line = mask[0 if edge == "left" else -1, :] if edge in ("left", "right") else \
                mask[:, 0 if edge == "bottom" else -1]
            inflow.setdefault(edge, np.zeros(n))
            inflow[edge][line] += float(seg.get("inflow", 0.0))
    spec.inflow = inflow
    spec.__post_init__()
    return spec
