"""Sparse assembly, direct LU solves and an unpreconditioned BiCGStab."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class BreakdownError(RuntimeError):
    pass


class CooPattern:
    """Fixed sparsity pattern built from COO coordinates.

    Repeated assembly with new values reduces to one ``bincount`` into the
    CSR data array, with duplicates summed in COO order.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, n: int):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keys = rows * n + cols
        ukeys, self.pos = np.unique(keys, return_inverse=True)
        self.n = n
        self.nnz = ukeys.size
        r = ukeys // n
        self.indices = (ukeys % n).astype(np.int32)
        self.indptr = np.zeros(n + 1, dtype=np.int32)
        np.cumsum(np.bincount(r, minlength=n), out=self.indptr[1:])
        self.row_of = r
        self.diag = np.full(n, -1, dtype=np.int64)
        d = np.flatnonzero(r == self.indices)
        self.diag[r[d]] = d

    def assemble(self, vals: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.pos, weights=vals, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))

    def identity_rows(self, A: sp.csr_matrix, mask: np.ndarray) -> sp.csr_matrix:
        """Replace the rows flagged in ``mask`` (length n) by identity rows, in place."""
        if mask.any():
            if (self.diag[mask] < 0).any():
                raise ValueError("pattern lacks a diagonal entry in a masked row")
            A.data[mask[self.row_of]] = 0.0
            A.data[self.diag[mask]] = 1.0
        return A


class LUFactor:
    """Sparse LU factorization with row pivoting; solves with ``A`` or ``A^T``."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        u = self._lu.U.diagonal()
        if not np.all(np.isfinite(u)) or np.min(np.abs(u)) <= 1e-300:
            raise SingularMatrixError("zero pivot in LU factorization")
        self.shape = A.shape

    def solve(self, b: np.ndarray, trans: bool = False) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float), trans="T" if trans else "N")


def lu_solve(A, b: np.ndarray) -> np.ndarray:
    return LUFactor(A).solve(b)


@dataclass(frozen=True)
class KrylovConfig:
    rel_tol: float = 1e-7
    max_iters: int = 400

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


class KrylovResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool
    rel_residual: float


def _bicgstab_once(apply, x, r, r0norm, cfg, precond, it0):
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(r)
    p = np.zeros_like(r)
    target = cfg.rel_tol * r0norm
    it = it0
    tiny = np.finfo(float).eps ** 2
    rn = np.linalg.norm(r)
    if rn <= target:
        return x, it, True, False, rn
    while it < cfg.max_iters:
        it += 1
        rho_new = rhat @ r
        if abs(rho_new) <= tiny * np.linalg.norm(rhat) * np.linalg.norm(r):
            return x, it, False, True, rn
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        ph = precond(p)
        v = apply(ph)
        den = rhat @ v
        if abs(den) <= tiny * np.linalg.norm(rhat) * np.linalg.norm(v):
            return x, it, False, True, rn
        alpha = rho_new / den
        s = r - alpha * v
        sn = np.linalg.norm(s)
        if sn <= target:
            return x + alpha * ph, it, True, False, sn
        sh = precond(s)
        t = apply(sh)
        tt = t @ t
        if tt == 0.0:
            return x + alpha * ph, it, False, True, sn
        omega = (t @ s) / tt
        x = x + alpha * ph + omega * sh
        r = s - omega * t
        rn = np.linalg.norm(r)
        if rn <= target:
            return x, it, True, False, rn
        if omega == 0.0:
            return x, it, False, True, rn
        rho = rho_new
    return x, it, False, False, rn


def bicgstab(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray | None = None,
    cfg: KrylovConfig = KrylovConfig(),
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
) -> KrylovResult:
    """Solve ``A x = b`` with BiCGStab given only ``x -> A x``.

    Stops when ``|b - A x| <= rel_tol * |b - A x0|``.  Hitting the cap is
    reported through ``converged = False``.  On a breakdown the method
    restarts once from the current iterate and raises
    :class:`BreakdownError` if that breaks down too.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    precond = precond or (lambda z: z)
    r = b - apply(x) if x.any() else b.copy()
    r0norm = np.linalg.norm(r)
    if r0norm == 0.0:
        return KrylovResult(x, 0, True, 0.0)
    it = 0
    for attempt in range(2):
        x, it, ok, broke, rn = _bicgstab_once(apply, x, r, r0norm, cfg, precond, it)
        if not broke:
            break
        r = b - apply(x)
        if attempt == 1:
            raise BreakdownError(f"BiCGStab broke down twice after {it} iterations")
    rel = rn / r0norm
    if not ok:
        warnings.warn(f"BiCGStab stopped at {it} iterations with relative residual {rel:.2e}", RuntimeWarning)
    return KrylovResult(x, it, ok, rel)
