"""Pure-Python drift sweeps with the same signatures as the compiled kernels.

Gauss-Seidel is written as a sparse triangular solve,
``(I - lt*A_L) x = b + lt*A_U x_old``, which reproduces the lexicographic
node-by-node update exactly up to rounding.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def _row_scaled(indptr, indices, data, inv):
    n = inv.shape[0]
    rows = np.repeat(np.arange(n), np.diff(indptr))
    return sp.csr_matrix((data * inv[rows], indices, indptr), shape=(n, n))


def _lower_solve(A, lt, rhs):
    AL = sp.tril(A, -1, format="csr")
    T = sp.identity(A.shape[0], format="csr") - lt * AL
    return spla.spsolve_triangular(T, rhs, lower=True)


def drift_sweep(indptr, indices, data, m, inv, w, v_old, v_new, lt, gs):
    B = _row_scaled(indptr, indices, data, inv)
    A = B @ sp.diags(m)
    if not gs:
        v_new[...] = A @ (lt * v_old - w)
        return
    AU = sp.triu(A, 0, format="csr")
    v_new[...] = _lower_solve(A, lt, lt * (AU @ v_old) - A @ w)


def drift_sweep_lin(indptr, indices, data, m, inv, w, v_old, v_new, dm, dw, dv_old, dv_new, lt, gs):
    B = _row_scaled(indptr, indices, data, inv)
    A = B @ sp.diags(m)
    base = -(B @ (m[:, None] * dw)) - (B @ dm)[:, None] * v_new
    if not gs:
        dv_new[...] = base + B @ (dm[:, None] * (lt * v_old - w)) + lt * (A @ dv_old)
        return
    BL = sp.tril(B, -1, format="csr")
    BU = sp.triu(B, 0, format="csr")
    AU = sp.triu(A, 0, format="csr")
    rhs = (
        base
        + BL @ (dm[:, None] * (lt * v_new - w))
        + BU @ (dm[:, None] * (lt * v_old - w))
        + lt * (AU @ dv_old)
    )
    dv_new[...] = _lower_solve(A, lt, rhs)
