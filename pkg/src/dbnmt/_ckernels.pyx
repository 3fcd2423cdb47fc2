# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``. Same signatures, same results."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expf, log, INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


# libm's tanh is several times slower than exp; both helpers go through exp
cdef inline real _exp(real a) noexcept nogil:
    if real is float:
        return expf(a)
    else:
        return exp(a)


cdef inline real _sigmoid(real a) noexcept nogil:
    return 1.0 / (1.0 + _exp(-a))


cdef inline real _tanh(real a) noexcept nogil:
    # odd symmetry keeps exp's argument nonpositive so it never overflows
    cdef real e
    if a >= 0:
        e = _exp(-2.0 * a)
        return (1.0 - e) / (1.0 + e)
    e = _exp(2.0 * a)
    return (e - 1.0) / (1.0 + e)


def gru_gates(real[:, ::1] gx, real[:, ::1] ghzr, real[:, ::1] h):
    cdef Py_ssize_t B = h.shape[0], H = h.shape[1], i, k
    dtype = np.float32 if real is float else np.float64
    z_arr = np.empty((B, H), dtype=dtype)
    r_arr = np.empty((B, H), dtype=dtype)
    rh_arr = np.empty((B, H), dtype=dtype)
    cdef real[:, ::1] z = z_arr
    cdef real[:, ::1] r = r_arr
    cdef real[:, ::1] rh = rh_arr
    with nogil:
        for i in range(B):
            for k in range(H):
                z[i, k] = _sigmoid(gx[i, k] + ghzr[i, k])
                r[i, k] = _sigmoid(gx[i, H + k] + ghzr[i, H + k])
                rh[i, k] = r[i, k] * h[i, k]
    return z_arr, r_arr, rh_arr


def gru_output(real[:, ::1] gx, real[:, ::1] ghn, real[:, ::1] h,
               real[:, ::1] z, real[::1] mask):
    cdef Py_ssize_t B = h.shape[0], H = h.shape[1], i, k
    cdef real m, nv, new
    dtype = np.float32 if real is float else np.float64
    n_arr = np.empty((B, H), dtype=dtype)
    out_arr = np.empty((B, H), dtype=dtype)
    cdef real[:, ::1] n = n_arr
    cdef real[:, ::1] out = out_arr
    with nogil:
        for i in range(B):
            m = mask[i]
            for k in range(H):
                nv = _tanh(gx[i, 2 * H + k] + ghn[i, k])
                n[i, k] = nv
                new = h[i, k] + z[i, k] * (nv - h[i, k])
                out[i, k] = m * new + (1.0 - m) * h[i, k]
    return n_arr, out_arr


def gru_backward_a(real[:, ::1] g, real[::1] mask, real[:, ::1] h,
                   real[:, ::1] z, real[:, ::1] n):
    cdef Py_ssize_t B = h.shape[0], H = h.shape[1], i, k
    cdef real m, gnew, zk, nk
    dtype = np.float32 if real is float else np.float64
    da_arr = np.zeros((B, 3 * H), dtype=dtype)
    dh_arr = np.empty((B, H), dtype=dtype)
    cdef real[:, ::1] da = da_arr
    cdef real[:, ::1] dh = dh_arr
    with nogil:
        for i in range(B):
            m = mask[i]
            for k in range(H):
                gnew = m * g[i, k]
                zk = z[i, k]
                nk = n[i, k]
                da[i, k] = gnew * (nk - h[i, k]) * zk * (1.0 - zk)
                da[i, 2 * H + k] = gnew * zk * (1.0 - nk * nk)
                dh[i, k] = (1.0 - m) * g[i, k] + gnew * (1.0 - zk)
    return da_arr, dh_arr


def gru_backward_b(real[:, ::1] drh, real[:, ::1] h, real[:, ::1] r,
                   real[:, ::1] da, real[:, ::1] dh):
    cdef Py_ssize_t B = h.shape[0], H = h.shape[1], i, k
    cdef real rk
    with nogil:
        for i in range(B):
            for k in range(H):
                rk = r[i, k]
                da[i, H + k] = drh[i, k] * h[i, k] * rk * (1.0 - rk)
                dh[i, k] += drh[i, k] * rk


def log_softmax_rows(real[:, ::1] x):
    cdef Py_ssize_t N = x.shape[0], V = x.shape[1], i, k
    cdef double mx, s, lse
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((N, V), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    with nogil:
        for i in range(N):
            mx = x[i, 0]
            for k in range(1, V):
                if x[i, k] > mx:
                    mx = x[i, k]
            s = 0.0
            for k in range(V):
                s += exp(x[i, k] - mx)
            lse = mx + log(s)
            for k in range(V):
                out[i, k] = x[i, k] - lse
    return out_arr


def max_over_time(real[:, :, ::1] x, cnp.int64_t[::1] valid):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], C = x.shape[2], b, t, c, n
    cdef real best
    cdef cnp.int64_t arg
    dtype = np.float32 if real is float else np.float64
    vals_arr = np.empty((B, C), dtype=dtype)
    idx_arr = np.empty((B, C), dtype=np.int64)
    cdef real[:, ::1] vals = vals_arr
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    with nogil:
        for b in range(B):
            n = valid[b]
            for c in range(C):
                best = x[b, 0, c]
                arg = 0
                for t in range(1, n):
                    if x[b, t, c] > best:
                        best = x[b, t, c]
                        arg = t
                vals[b, c] = best
                idx[b, c] = arg
    return vals_arr, idx_arr


def max_over_time_backward(real[:, ::1] g, cnp.int64_t[:, ::1] argmax, Py_ssize_t T):
    cdef Py_ssize_t B = g.shape[0], C = g.shape[1], b, c
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((B, T, C), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for b in range(B):
            for c in range(C):
                out[b, argmax[b, c], c] += g[b, c]
    return out_arr
