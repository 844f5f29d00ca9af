# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled float32 kernels with explicit fixed-order accumulation loops.

The contracted axis of every matrix product is summed left to right, making
results bit-reproducible and independent of the host BLAS.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport expf, sqrtf

cnp.import_array()

DEF LN_EPS = 1e-5


def matmul(cnp.float32_t[:, ::1] a, cnp.float32_t[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef cnp.float32_t aval
    for i in range(m):
        for t in range(k):
            aval = a[i, t]
            for j in range(n):
                out[i, j] = out[i, j] + aval * b[t, j]
    return out_arr


def bmm(cnp.float32_t[:, :, ::1] a, cnp.float32_t[:, :, ::1] b):
    cdef Py_ssize_t g = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2]
    out_arr = np.zeros((g, m, n), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t q, i, j, t
    cdef cnp.float32_t aval
    for q in range(g):
        for i in range(m):
            for t in range(k):
                aval = a[q, i, t]
                for j in range(n):
                    out[q, i, j] = out[q, i, j] + aval * b[q, t, j]
    return out_arr


def bmm_nt(cnp.float32_t[:, :, ::1] a, cnp.float32_t[:, :, ::1] b):
    # (G,M,K) @ (G,N,K)^T
    cdef Py_ssize_t g = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[1]
    out_arr = np.zeros((g, m, n), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t q, i, j, t
    for q in range(g):
        for i in range(m):
            for t in range(k):
                for j in range(n):
                    out[q, i, j] = out[q, i, j] + a[q, i, t] * b[q, j, t]
    return out_arr


def bmm_tn(cnp.float32_t[:, :, ::1] a, cnp.float32_t[:, :, ::1] b):
    # (G,K,M)^T @ (G,K,N)
    cdef Py_ssize_t g = a.shape[0], k = a.shape[1], m = a.shape[2], n = b.shape[2]
    out_arr = np.zeros((g, m, n), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t q, i, j, t
    cdef cnp.float32_t aval
    for q in range(g):
        for t in range(k):
            for i in range(m):
                aval = a[q, t, i]
                for j in range(n):
                    out[q, i, j] = out[q, i, j] + aval * b[q, t, j]
    return out_arr


def softmax_rows(cnp.float32_t[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    out_arr = np.empty((n, k), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef cnp.float32_t mx, s, e
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, k):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(k):
            e = expf(x[i, j] - mx)
            out[i, j] = e
            s = s + e
        for j in range(k):
            out[i, j] = out[i, j] / s
    return out_arr


def softmax_backward_rows(cnp.float32_t[:, ::1] dy, cnp.float32_t[:, ::1] y):
    cdef Py_ssize_t n = dy.shape[0], k = dy.shape[1]
    out_arr = np.empty((n, k), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef cnp.float32_t dot
    for i in range(n):
        dot = 0.0
        for j in range(k):
            dot = dot + dy[i, j] * y[i, j]
        for j in range(k):
            out[i, j] = (dy[i, j] - dot) * y[i, j]
    return out_arr


def layernorm_forward(cnp.float32_t[:, ::1] x,
                      cnp.float32_t[::1] gamma,
                      cnp.float32_t[::1] beta):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    y_arr = np.empty((n, d), dtype=np.float32)
    xhat_arr = np.empty((n, d), dtype=np.float32)
    rstd_arr = np.empty(n, dtype=np.float32)
    cdef cnp.float32_t[:, ::1] y = y_arr, xhat = xhat_arr
    cdef cnp.float32_t[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef cnp.float32_t mu, var, diff, r
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu = mu + x[i, j]
        mu = mu / d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var = var + diff * diff
        var = var / d
        r = 1.0 / sqrtf(var + LN_EPS)
        rstd[i] = r
        for j in range(d):
            xhat[i, j] = (x[i, j] - mu) * r
            y[i, j] = xhat[i, j] * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layernorm_backward(cnp.float32_t[:, ::1] dy,
                       cnp.float32_t[:, ::1] xhat,
                       cnp.float32_t[::1] rstd,
                       cnp.float32_t[::1] gamma):
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1]
    dx_arr = np.empty((n, d), dtype=np.float32)
    dgamma_arr = np.zeros(d, dtype=np.float32)
    dbeta_arr = np.zeros(d, dtype=np.float32)
    cdef cnp.float32_t[:, ::1] dx = dx_arr
    cdef cnp.float32_t[::1] dgamma = dgamma_arr, dbeta = dbeta_arr
    cdef Py_ssize_t i, j
    cdef cnp.float32_t m1, m2, g
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            g = dy[i, j] * gamma[j]
            m1 = m1 + g
            m2 = m2 + g * xhat[i, j]
        m1 = m1 / d
        m2 = m2 / d
        for j in range(d):
            g = dy[i, j] * gamma[j]
            dx[i, j] = (g - m1 - xhat[i, j] * m2) * rstd[i]
            dgamma[j] = dgamma[j] + dy[i, j] * xhat[i, j]
            dbeta[j] = dbeta[j] + dy[i, j]
    return dx_arr, dgamma_arr, dbeta_arr


def quickgelu_forward(cnp.float32_t[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    out_arr = np.empty((n, d), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef cnp.float32_t s
    for i in range(n):
        for j in range(d):
            s = 1.0 / (1.0 + expf(-1.702 * x[i, j]))
            out[i, j] = x[i, j] * s
    return out_arr


def quickgelu_backward(cnp.float32_t[:, ::1] dy, cnp.float32_t[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    out_arr = np.empty((n, d), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef cnp.float32_t s
    for i in range(n):
        for j in range(d):
            s = 1.0 / (1.0 + expf(-1.702 * x[i, j]))
            out[i, j] = dy[i, j] * (s + x[i, j] * s * (1.0 - s) * 1.702)
    return out_arr
