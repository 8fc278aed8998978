# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled drift sweeps over a CSR kernel table.

A sweep at node ``n`` evaluates

    out[n] = inv[n] * sum_r K[n, r] * m[r] * (-w[r] + lt * src[r])

where ``src[r]`` is the already-updated value for ``r < n`` in Gauss-Seidel
mode and the previous value otherwise.
"""


def drift_sweep(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                const double[::1] m, const double[::1] inv, const double[:, ::1] w,
                const double[:, ::1] v_old, double[:, ::1] v_new, double lt, bint gs):
    cdef Py_ssize_t n, k, r, N = inv.shape[0]
    cdef double a0, a1, km, s0, s1
    for n in range(N):
        if inv[n] == 0.0:
            v_new[n, 0] = 0.0
            v_new[n, 1] = 0.0
            continue
        a0 = 0.0
        a1 = 0.0
        for k in range(indptr[n], indptr[n + 1]):
            r = indices[k]
            km = data[k] * m[r]
            if gs and r < n:
                s0 = v_new[r, 0]
                s1 = v_new[r, 1]
            else:
                s0 = v_old[r, 0]
                s1 = v_old[r, 1]
            a0 += km * (lt * s0 - w[r, 0])
            a1 += km * (lt * s1 - w[r, 1])
        v_new[n, 0] = inv[n] * a0
        v_new[n, 1] = inv[n] * a1


def drift_sweep_lin(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                    const double[::1] m, const double[::1] inv, const double[:, ::1] w,
                    const double[:, ::1] v_old, const double[:, ::1] v_new,
                    const double[::1] dm, const double[:, ::1] dw,
                    const double[:, ::1] dv_old, double[:, ::1] dv_new, double lt, bint gs):
    cdef Py_ssize_t n, k, r, N = inv.shape[0]
    cdef double a0, a1, zd, kd, s0, s1, d0, d1
    for n in range(N):
        if inv[n] == 0.0:
            dv_new[n, 0] = 0.0
            dv_new[n, 1] = 0.0
            continue
        a0 = 0.0
        a1 = 0.0
        zd = 0.0
        for k in range(indptr[n], indptr[n + 1]):
            r = indices[k]
            kd = data[k]
            if gs and r < n:
                s0 = v_new[r, 0]
                s1 = v_new[r, 1]
                d0 = dv_new[r, 0]
                d1 = dv_new[r, 1]
            else:
                s0 = v_old[r, 0]
                s1 = v_old[r, 1]
                d0 = dv_old[r, 0]
                d1 = dv_old[r, 1]
            a0 += kd * (dm[r] * (lt * s0 - w[r, 0]) + m[r] * (lt * d0 - dw[r, 0]))
            a1 += kd * (dm[r] * (lt * s1 - w[r, 1]) + m[r] * (lt * d1 - dw[r, 1]))
            zd += kd * dm[r]
        dv_new[n, 0] = inv[n] * (a0 - zd * v_new[n, 0])
        dv_new[n, 1] = inv[n] * (a1 - zd * v_new[n, 1])
