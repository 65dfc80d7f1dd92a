# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors the `_kernels_np` surface exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, log, sin, sqrt

cnp.import_array()

BACKEND = "compiled"


def softmax_causal(double[:, :, ::1] scores, long[::1] qpos):
    cdef Py_ssize_t H = scores.shape[0]
    cdef Py_ssize_t Tq = scores.shape[1]
    cdef Py_ssize_t Tk = scores.shape[2]
    out_arr = np.zeros((H, Tq, Tk), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t h, i, j, lim
    cdef double m, s, v
    with nogil:
        for h in range(H):
            for i in range(Tq):
                lim = qpos[i] + 1
                if lim > Tk:
                    lim = Tk
                m = scores[h, i, 0]
                for j in range(1, lim):
                    if scores[h, i, j] > m:
                        m = scores[h, i, j]
                s = 0.0
                for j in range(lim):
                    v = exp(scores[h, i, j] - m)
                    out[h, i, j] = v
                    s += v
                for j in range(lim):
                    out[h, i, j] /= s
    return out_arr


def softmax_causal_bwd(double[:, :, ::1] probs, double[:, :, ::1] dprobs):
    cdef Py_ssize_t H = probs.shape[0]
    cdef Py_ssize_t Tq = probs.shape[1]
    cdef Py_ssize_t Tk = probs.shape[2]
    out_arr = np.empty((H, Tq, Tk), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t h, i, j
    cdef double dot
    with nogil:
        for h in range(H):
            for i in range(Tq):
                dot = 0.0
                for j in range(Tk):
                    dot += probs[h, i, j] * dprobs[h, i, j]
                for j in range(Tk):
                    out[h, i, j] = probs[h, i, j] * (dprobs[h, i, j] - dot)
    return out_arr


def rmsnorm(double[:, ::1] x, double[::1] g, double eps):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    y_arr = np.empty((N, d), dtype=np.float64)
    rinv_arr = np.empty(N, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[::1] rinv = rinv_arr
    cdef Py_ssize_t i, j
    cdef double ms, r
    with nogil:
        for i in range(N):
            ms = 0.0
            for j in range(d):
                ms += x[i, j] * x[i, j]
            r = 1.0 / sqrt(ms / d + eps)
            rinv[i] = r
            for j in range(d):
                y[i, j] = x[i, j] * r * g[j]
    return y_arr, rinv_arr


def rmsnorm_bwd(double[:, ::1] x, double[::1] g, double[::1] rinv,
                double[:, ::1] dy):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    dx_arr = np.empty((N, d), dtype=np.float64)
    dg_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dg = dg_arr
    cdef Py_ssize_t i, j
    cdef double proj, r, c
    with nogil:
        for i in range(N):
            r = rinv[i]
            proj = 0.0
            for j in range(d):
                proj += dy[i, j] * g[j] * x[i, j]
            c = proj * r * r * r / d
            for j in range(d):
                dx[i, j] = dy[i, j] * g[j] * r - x[i, j] * c
                dg[j] += x[i, j] * r * dy[i, j]
    return dx_arr, dg_arr


def rope_apply(x, double[::1] pos, double base, double sign):
    x3 = np.ascontiguousarray(x if x.ndim == 3 else x[None, :, :])
    d = x3.shape[2]
    inv_freq = base ** (-np.arange(d // 2, dtype=np.float64) * 2.0 / d)
    out_arr = np.empty_like(x3)
    _rope3(x3, out_arr, pos, inv_freq, sign)
    return out_arr if x.ndim == 3 else out_arr[0]


cdef void _rope3(double[:, :, ::1] x, double[:, :, ::1] y, double[::1] pos,
                 double[::1] inv_freq, double sign) noexcept nogil:
    cdef Py_ssize_t H = x.shape[0]
    cdef Py_ssize_t T = x.shape[1]
    cdef Py_ssize_t half = inv_freq.shape[0]
    cdef Py_ssize_t h, t, i
    cdef double theta, c, s, a, b
    for h in range(H):
        for t in range(T):
            for i in range(half):
                theta = sign * pos[t] * inv_freq[i]
                c = cos(theta)
                s = sin(theta)
                a = x[h, t, 2 * i]
                b = x[h, t, 2 * i + 1]
                y[h, t, 2 * i] = a * c - b * s
                y[h, t, 2 * i + 1] = a * s + b * c


def ce_rows(double[:, ::1] logits, long[::1] targets, double[::1] weights):
    cdef Py_ssize_t N = logits.shape[0]
    cdef Py_ssize_t V = logits.shape[1]
    probs_arr = np.empty((N, V), dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double m, s, total
    total = 0.0
    with nogil:
        for i in range(N):
            m = logits[i, 0]
            for j in range(1, V):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(V):
                probs[i, j] = exp(logits[i, j] - m)
                s += probs[i, j]
            for j in range(V):
                probs[i, j] /= s
            total += -weights[i] * log(probs[i, targets[i]])
    return total, probs_arr


def ce_rows_bwd(double[:, ::1] probs, long[::1] targets, double[::1] weights,
                double upstream):
    cdef Py_ssize_t N = probs.shape[0]
    cdef Py_ssize_t V = probs.shape[1]
    out_arr = np.empty((N, V), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double c
    with nogil:
        for i in range(N):
            c = upstream * weights[i]
            for j in range(V):
                out[i, j] = probs[i, j] * c
            out[i, targets[i]] -= c
    return out_arr


def silu(x):
    flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    out = np.empty_like(flat)
    _silu1(flat, out)
    return out.reshape(x.shape)


cdef void _silu1(double[::1] x, double[::1] y) noexcept nogil:
    cdef Py_ssize_t i
    cdef double sig
    for i in range(x.shape[0]):
        if x[i] >= 0:
            sig = 1.0 / (1.0 + exp(-x[i]))
        else:
            sig = exp(x[i]) / (1.0 + exp(x[i]))
        y[i] = x[i] * sig


def silu_bwd(x, dy):
    xf = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    dyf = np.ascontiguousarray(dy, dtype=np.float64).reshape(-1)
    out = np.empty_like(xf)
    _silu_bwd1(xf, dyf, out)
    return out.reshape(x.shape)


cdef void _silu_bwd1(double[::1] x, double[::1] dy, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double sig
    for i in range(x.shape[0]):
        if x[i] >= 0:
            sig = 1.0 / (1.0 + exp(-x[i]))
        else:
            sig = exp(x[i]) / (1.0 + exp(x[i]))
        out[i] = dy[i] * sig * (1.0 + x[i] * (1.0 - sig))
