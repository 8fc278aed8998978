"""Numerical Hamiltonian: brackets, the upwind map Phi, g, H and the transport operator.

Bracket convention: ``[s]_+ = max(s, 0)`` and ``[s]_- = max(-s, 0)``, both
nonnegative, so ``s = [s]_+ - [s]_-``.

Every Phi component is a bracket of a *face slope*

    s = (right difference of u) / a - lambda * theta * (face value of V),

and each interior face feeds two nodes: the node on its left gets
``q1 = [s]_-`` and the node on its right gets ``q2 = -[s]_+`` (likewise
``q3``/``q4`` along axis 2).  The solvers work with face slopes directly;
:func:`phi` expands them to the per-node four-vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GhostExtension, SpaceTimeGrid, half_index


@dataclass(frozen=True)
class HamiltonianParams:
    """Parameters of ``H(p, V) = a/2 |p/a - lam*theta*V|^2 - a*lam^2*theta/2 |V|^2``."""

    lam: float
    theta: float
    a: float = 1.0
    eps: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (-1, 1)")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    @classmethod
    def normalized(cls, lam: float, theta: float, a_tilde: float, eps: float = 0.0):
        """Scale ``a = a_tilde / (1 - lam^2 theta)``."""
        return cls(lam, theta, a_tilde / (1.0 - lam**2 * theta), eps)

    @property
    def lt(self) -> float:
        return self.lam * self.theta


def plus_eps(v, eps: float = 0.0):
    """Smoothed positive part; ``eps = 0`` gives ``max(v, 0)``."""
    v = np.asarray(v, dtype=float)
    if eps == 0:
        return np.maximum(v, 0.0)
    return 0.5 * (np.exp(-np.abs(v) / eps) - 1.0) * eps + np.where(v > 0, v, 0.0)


def minus_eps(v, eps: float = 0.0):
    """Smoothed negative part ``plus_eps(v) - v`` (nonnegative for ``eps = 0``)."""
    v = np.asarray(v, dtype=float)
    if eps == 0:
        return np.maximum(-v, 0.0)
    return plus_eps(v, eps) - v


def dplus_eps(v, eps: float = 0.0):
    """Derivative of :func:`plus_eps`; for ``eps = 0`` the indicator of ``v > 0``."""
    v = np.asarray(v, dtype=float)
    if eps == 0:
        return (v > 0).astype(float)
    e = 0.5 * np.exp(-np.abs(v) / eps)
    return np.where(v > 0, 1.0 - e, e)


def dminus_eps(v, eps: float = 0.0):
    return dplus_eps(v, eps) - 1.0


def hamiltonian(p, V, ham: HamiltonianParams):
    p = np.asarray(p, dtype=float)
    V = np.asarray(V, dtype=float)
    s = p / ham.a - ham.lt * V
    return 0.5 * ham.a * np.sum(s**2, axis=-1) - 0.5 * ham.a * ham.lam**2 * ham.theta * np.sum(V**2, axis=-1)


def hamiltonian_grad(p, V, ham: HamiltonianParams):
    """``H_p = p/a - lam*theta*V``; the optimal feedback is ``-H_p``."""
    return np.asarray(p, dtype=float) / ham.a - ham.lt * np.asarray(V, dtype=float)


def g_num(q, V, ham: HamiltonianParams):
    """``g(q, V) = a/2 |q|^2 - a lam^2 theta / 2 |V|^2`` over the trailing axis."""
    q = np.asarray(q, dtype=float)
    V = np.asarray(V, dtype=float)
    return 0.5 * ham.a * np.sum(q**2, axis=-1) - 0.5 * ham.a * ham.lam**2 * ham.theta * np.sum(V**2, axis=-1)


def numerical_hamiltonian(pvec, V, ham: HamiltonianParams):
    """Godunov Hamiltonian from the four one-sided differences ``(D1+ at i, D1+ at i-1, D2+ at j, D2+ at j-1)``."""
    pvec = np.asarray(pvec, dtype=float)
    V = np.asarray(V, dtype=float)
    eps = ham.eps
    s1 = pvec[..., 0] / ham.a - ham.lt * V[..., 0]
    s2 = pvec[..., 1] / ham.a - ham.lt * V[..., 0]
    s3 = pvec[..., 2] / ham.a - ham.lt * V[..., 1]
    s4 = pvec[..., 3] / ham.a - ham.lt * V[..., 1]
    q = np.stack([minus_eps(s1, eps), -plus_eps(s2, eps), minus_eps(s3, eps), -plus_eps(s4, eps)], axis=-1)
    return g_num(q, V, ham)


@dataclass
class FaceSlopes:
    """Face slopes of one level: ``s1[p, j]`` on the face ``(p - 1/2, j)``, ``s2[i, p]`` on ``(i, p - 1/2)``.

    Boundary faces (``p = 0`` and ``p = n``) use the homogeneous Neumann
    ghost of ``u``, so there the slope is ``-lam*theta*V`` of the edge node.
    """

    s1: np.ndarray
    s2: np.ndarray


def face_slopes(u: np.ndarray, V: np.ndarray, grid: SpaceTimeGrid, ham: HamiltonianParams) -> FaceSlopes:
    F1, F2 = half_index(V)
    nx1, nx2 = u.shape
    du1 = np.zeros((nx1 + 1, nx2))
    du1[1:-1] = np.diff(u, axis=0)
    du2 = np.zeros((nx1, nx2 + 1))
    du2[:, 1:-1] = np.diff(u, axis=1)
    return FaceSlopes(
        s1=du1 / (grid.h1 * ham.a) - ham.lt * F1,
        s2=du2 / (grid.h2 * ham.a) - ham.lt * F2,
    )


@dataclass
class QuadField:
    """Phi on one level: ``q[i, j, c]`` for ``c = 0..3`` plus the four extra boundary values.

    ``left[j] = Phi[-1, j, 1]``, ``right[j] = Phi[nx1, j, 2]``,
    ``bottom[i] = Phi[i, -1, 3]``, ``top[i] = Phi[i, nx2, 4]`` (1-based
    component labels).
    """

    q: np.ndarray
    left: np.ndarray
    right: np.ndarray
    bottom: np.ndarray
    top: np.ndarray


def phi_from_slopes(fs: FaceSlopes, eps: float = 0.0) -> QuadField:
    mn1 = minus_eps(fs.s1, eps)
    pl1 = plus_eps(fs.s1, eps)
    mn2 = minus_eps(fs.s2, eps)
    pl2 = plus_eps(fs.s2, eps)
    q = np.stack([mn1[1:], -pl1[:-1], mn2[:, 1:], -pl2[:, :-1]], axis=-1)
    return QuadField(q=q, left=mn1[0], right=-pl1[-1], bottom=mn2[:, 0], top=-pl2[:, -1])


def phi(u: np.ndarray, V: np.ndarray, grid: SpaceTimeGrid, ham: HamiltonianParams) -> QuadField:
    """Upwind map Phi(u, V) with its boundary extension; ``u`` uses homogeneous Neumann ghosts."""
    return phi_from_slopes(face_slopes(u, V, grid, ham), ham.eps)


def transport(Q: QuadField, m: np.ndarray, ghost: GhostExtension, grid: SpaceTimeGrid) -> np.ndarray:
    """Discrete transport operator T(q, m), evaluated stencil-by-stencil with ghost values of ``m``."""
    nx1, nx2 = m.shape
    q = Q.q
    mp = ghost.padded(m)
    # extend each component by one layer on the side where the stencil reaches out
    q1 = np.concatenate([Q.left[None, :], q[..., 0]], axis=0)      # i = -1 .. nx1-1
    q2 = np.concatenate([q[..., 1], Q.right[None, :]], axis=0)     # i = 0 .. nx1
    q3 = np.concatenate([Q.bottom[:, None], q[..., 2]], axis=1)    # j = -1 .. nx2-1
    q4 = np.concatenate([q[..., 3], Q.top[:, None]], axis=1)       # j = 0 .. nx2
    mc = m
    m_im1 = mp[:-2, 1:-1]
    m_ip1 = mp[2:, 1:-1]
    m_jm1 = mp[1:-1, :-2]
    m_jp1 = mp[1:-1, 2:]
    t1 = -q1[1:] * mc + q1[:-1] * m_im1 + q2[:-1] * mc - q2[1:] * m_ip1
    t2 = -q3[:, 1:] * mc + q3[:, :-1] * m_jm1 + q4[:, :-1] * mc - q4[:, 1:] * m_jp1
    return t1 / grid.h1 + t2 / grid.h2
