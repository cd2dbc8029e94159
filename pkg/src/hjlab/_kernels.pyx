# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sweeps for the extremal operators and the Lévy quadrature.

Semantics match ``hjlab._fallback`` operation for operation (same
association order, same tie-breaking) so both backends agree bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def extremal_sweep(const double[::1] phi, const double[::1] g_pos,
                   const double[::1] g_neg, double dx, int K, int kmin,
                   bint upper):
    cdef Py_ssize_t n = phi.shape[0]
    cdef Py_ssize_t i, ip
    cdef int j, s, k, sidx
    cdef double num, d, val, best, h, g
    cdef double dK = K * dx
    cdef double dK2 = dK * dK
    out = np.empty(n, dtype=np.float64)
    oj = np.empty(n, dtype=np.int64)
    ok = np.empty(n, dtype=np.int64)
    os_ = np.empty(n, dtype=np.int64)
    cdef double[::1] vout = out
    cdef long long[::1] vj = oj
    cdef long long[::1] vk = ok
    cdef long long[::1] vs = os_
    cdef int bj = 0, bk = 0, bs = 0
    for i in range(n):
        best = 0.0
        for sidx in range(2):
            s = 1 if sidx == 0 else -1
            g = g_pos[i] if s == 1 else g_neg[i]
            for j in range(1, K + 1):
                ip = (i + s * j) % n
                if ip < 0:
                    ip += n
                h = (s * j) * dx
                num = (phi[ip] - phi[i]) - h * g
                k = j if j > kmin else kmin
                if upper:
                    if num > 0.0:
                        d = k * dx
                        val = num / (d * d)
                    else:
                        k = K
                        val = num / dK2
                    if (sidx == 0 and j == 1) or val > best:
                        best = val
                        bj = j
                        bk = k
                        bs = s
                else:
                    if num < 0.0:
                        d = k * dx
                        val = num / (d * d)
                    else:
                        k = K
                        val = num / dK2
                    if (sidx == 0 and j == 1) or val < best:
                        best = val
                        bj = j
                        bk = k
                        bs = s
        vout[i] = best
        vj[i] = bj
        vk[i] = bk
        vs[i] = bs
    return out, oj, ok, os_


def levy_sweep(const double[::1] phi, const double[::1] g_pos,
               const double[::1] g_neg, const double[:, ::1] shifts,
               const double[::1] weights, double dx):
    """Sum over quadrature nodes of ``w * (phi(x + h) - phi(x) - h g)``.

    ``shifts`` holds jump lengths in grid units, one row per quadrature
    node and one column per grid node; off-grid targets are linearly
    interpolated with periodic wrap.
    """
    cdef Py_ssize_t n = phi.shape[0]
    cdef Py_ssize_t m = shifts.shape[0]
    cdef Py_ssize_t a, i, i0, i1
    cdef double sh, fl, th, val, g, acc
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] vout = out
    for a in range(m):
        for i in range(n):
            sh = shifts[a, i]
            fl = floor(sh)
            th = sh - fl
            i0 = (i + <Py_ssize_t>fl) % n
            if i0 < 0:
                i0 += n
            i1 = (i0 + 1) % n
            val = (1.0 - th) * phi[i0] + th * phi[i1]
            g = g_pos[i] if sh > 0.0 else g_neg[i]
            vout[i] = vout[i] + weights[a] * ((val - phi[i]) - (sh * dx) * g)
    return out
