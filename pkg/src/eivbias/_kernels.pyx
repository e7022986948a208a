# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-observation accumulation kernel (see ``_kernels_py`` for the contract)."""

import numpy as np
from libc.math cimport log, sqrt


def accumulate(const double[:, ::1] sigma0, const double[:, :, ::1] tau,
               const double[:, ::1] resid, bint want_q=True):
    cdef Py_ssize_t n = tau.shape[0]
    cdef Py_ssize_t q = sigma0.shape[0]
    cdef Py_ssize_t i, a, b, c, d, k
    cdef double s, logdet = 0.0, quad = 0.0, wab

    S1_arr = np.zeros((q, q))
    s3_arr = np.zeros(q)
    S4_arr = np.zeros((q, q))
    Q_arr = np.zeros((q, q, q, q)) if want_q else None
    L_arr = np.zeros((q, q))
    Li_arr = np.zeros((q, q))
    W_arr = np.zeros((q, q))
    w_arr = np.zeros(q)
    cdef double[:, ::1] S1 = S1_arr
    cdef double[::1] s3 = s3_arr
    cdef double[:, ::1] S4 = S4_arr
    cdef double[:, :, :, ::1] Q
    cdef double[:, ::1] L = L_arr
    cdef double[:, ::1] Li = Li_arr
    cdef double[:, ::1] W = W_arr
    cdef double[::1] w = w_arr
    if want_q:
        Q = Q_arr

    for i in range(n):
        # lower Cholesky factor of sigma0 + tau[i]
        for a in range(q):
            for b in range(a + 1):
                s = sigma0[a, b] + tau[i, a, b]
                for k in range(b):
                    s -= L[a, k] * L[b, k]
                if a == b:
                    if not s > 0.0:
                        return 0.0, 0.0, None, None, None, None, i
                    L[a, a] = sqrt(s)
                else:
                    L[a, b] = s / L[b, b]
        for a in range(q):
            logdet += 2.0 * log(L[a, a])
        # Li = L^{-1} (lower triangular)
        for b in range(q):
            for a in range(q):
                Li[a, b] = 0.0
            Li[b, b] = 1.0 / L[b, b]
            for a in range(b + 1, q):
                s = 0.0
                for k in range(b, a):
                    s -= L[a, k] * Li[k, b]
                Li[a, b] = s / L[a, a]
        # W = Li' Li
        for a in range(q):
            for b in range(a + 1):
                s = 0.0
                for k in range(a, q):
                    s += Li[k, a] * Li[k, b]
                W[a, b] = s
                W[b, a] = s
        for a in range(q):
            s = 0.0
            for b in range(q):
                s += W[a, b] * resid[i, b]
            w[a] = s
            quad += resid[i, a] * s
        for a in range(q):
            s3[a] += w[a]
            for b in range(q):
                S1[a, b] += W[a, b]
                S4[a, b] += w[a] * w[b]
        if want_q:
            for a in range(q):
                for b in range(q):
                    wab = W[a, b]
                    for c in range(q):
                        for d in range(q):
                            Q[a, b, c, d] += wab * W[c, d]

    return logdet, quad, S1_arr, s3_arr, S4_arr, Q_arr, -1
