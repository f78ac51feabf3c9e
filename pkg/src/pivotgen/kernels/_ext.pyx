# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled lane of the hot kernels. Mirrors `_py.py` formula for
formula; single-pass row loops instead of chained NumPy temporaries."""

import numpy as np

cimport numpy as cnp
from libc.math cimport expf, logf, sqrt, sqrtf, tanhf

cnp.import_array()

cdef float GELU_C = 0.7978845608028654
cdef float GELU_A = 0.044715


def softmax_fwd(x):
    cdef float[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float m, z, e
    for i in range(n):
        m = xv[i, 0]
        for j in range(1, d):
            if xv[i, j] > m:
                m = xv[i, j]
        z = 0.0
        for j in range(d):
            e = expf(xv[i, j] - m)
            out[i, j] = e
            z += e
        for j in range(d):
            out[i, j] /= z
    return out_arr


def softmax_bwd(y, gy):
    cdef float[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float32)
    cdef float[:, ::1] gv = np.ascontiguousarray(gy, dtype=np.float32)
    cdef Py_ssize_t n = yv.shape[0], d = yv.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float inner
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += yv[i, j] * gv[i, j]
        for j in range(d):
            out[i, j] = yv[i, j] * (gv[i, j] - inner)
    return out_arr


def cross_entropy_fwd(logits, targets):
    cdef float[:, ::1] lv = np.ascontiguousarray(logits, dtype=np.float32)
    cdef long[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef Py_ssize_t n = lv.shape[0], v = lv.shape[1], i, j
    losses_arr = np.empty(n, dtype=np.float32)
    probs_arr = np.empty((n, v), dtype=np.float32)
    cdef float[::1] losses = losses_arr
    cdef float[:, ::1] probs = probs_arr
    cdef float m, z, e
    for i in range(n):
        m = lv[i, 0]
        for j in range(1, v):
            if lv[i, j] > m:
                m = lv[i, j]
        z = 0.0
        for j in range(v):
            e = expf(lv[i, j] - m)
            probs[i, j] = e
            z += e
        for j in range(v):
            probs[i, j] /= z
        losses[i] = logf(z) - (lv[i, tv[i]] - m)
    return losses_arr, probs_arr


def cross_entropy_bwd(probs, targets, gloss):
    cdef float[:, ::1] pv = np.ascontiguousarray(probs, dtype=np.float32)
    cdef long[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef float[::1] gv = np.ascontiguousarray(gloss, dtype=np.float32)
    cdef Py_ssize_t n = pv.shape[0], v = pv.shape[1], i, j
    out_arr = np.empty((n, v), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    for i in range(n):
        for j in range(v):
            out[i, j] = pv[i, j] * gv[i]
        out[i, tv[i]] -= gv[i]
    return out_arr


def layernorm_fwd(x, gain, bias, double eps):
    # moments in float64, mirroring the numpy lane (see _py.layernorm_fwd)
    cdef float[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef float[::1] g = np.ascontiguousarray(gain, dtype=np.float32)
    cdef float[::1] b = np.ascontiguousarray(bias, dtype=np.float32)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1], i, j
    y_arr = np.empty((n, d), dtype=np.float32)
    xhat_arr = np.empty((n, d), dtype=np.float32)
    inv_arr = np.empty(n, dtype=np.float32)
    cdef float[:, ::1] y = y_arr
    cdef float[:, ::1] xhat = xhat_arr
    cdef float[::1] inv = inv_arr
    cdef double mu, var, diff, s
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += xv[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = xv[i, j] - mu
            var += diff * diff
        var /= d
        s = 1.0 / sqrt(var + eps)
        inv[i] = <float> s
        for j in range(d):
            xhat[i, j] = <float> ((xv[i, j] - mu) * s)
            y[i, j] = xhat[i, j] * g[j] + b[j]
    return y_arr, xhat_arr, inv_arr


def layernorm_bwd(xhat, inv_std, gain, gy):
    cdef float[:, ::1] xh = np.ascontiguousarray(xhat, dtype=np.float32)
    cdef float[::1] inv = np.ascontiguousarray(inv_std, dtype=np.float32)
    cdef float[::1] g = np.ascontiguousarray(gain, dtype=np.float32)
    cdef float[:, ::1] gyv = np.ascontiguousarray(gy, dtype=np.float32)
    cdef Py_ssize_t n = xh.shape[0], d = xh.shape[1], i, j
    gx_arr = np.empty((n, d), dtype=np.float32)
    ggain_arr = np.zeros(d, dtype=np.float32)
    gbias_arr = np.zeros(d, dtype=np.float32)
    cdef float[:, ::1] gx = gx_arr
    cdef float[::1] ggain = ggain_arr
    cdef float[::1] gbias = gbias_arr
    cdef float m1, m2, gh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            gh = gyv[i, j] * g[j]
            m1 += gh
            m2 += gh * xh[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            gh = gyv[i, j] * g[j]
            gx[i, j] = (gh - m1 - xh[i, j] * m2) * inv[i]
            ggain[j] += gyv[i, j] * xh[i, j]
            gbias[j] += gyv[i, j]
    return gx_arr, ggain_arr, gbias_arr


def gelu_fwd(x):
    cdef float[::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef Py_ssize_t n = xv.shape[0], i
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef float t
    for i in range(n):
        t = tanhf(GELU_C * (xv[i] + GELU_A * xv[i] * xv[i] * xv[i]))
        out[i] = 0.5 * xv[i] * (1.0 + t)
    return out_arr


def gelu_bwd(x, gy):
    cdef float[::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef float[::1] gv = np.ascontiguousarray(gy, dtype=np.float32)
    cdef Py_ssize_t n = xv.shape[0], i
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef float x2, t, dinner
    for i in range(n):
        x2 = xv[i] * xv[i]
        t = tanhf(GELU_C * (xv[i] + GELU_A * xv[i] * x2))
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * x2)
        out[i] = gv[i] * (0.5 * (1.0 + t) + 0.5 * xv[i] * (1.0 - t * t) * dinner)
    return out_arr


def adamw_update(p, g, m, v, double lr, double beta1, double beta2, double eps,
                 double weight_decay, double bc1, double bc2):
    cdef float[::1] pv = p
    cdef float[::1] gv = np.ascontiguousarray(g, dtype=np.float32)
    cdef float[::1] mv = m
    cdef float[::1] vv = v
    cdef Py_ssize_t n = pv.shape[0], i
    cdef float b1 = <float> beta1, b2 = <float> beta2
    cdef float flr = <float> lr, feps = <float> eps, fwd = <float> weight_decay
    cdef float fbc1 = <float> bc1, fbc2 = <float> bc2
    cdef float mhat, vhat
    for i in range(n):
        mv[i] = b1 * mv[i] + (1.0 - b1) * gv[i]
        vv[i] = b2 * vv[i] + (1.0 - b2) * gv[i] * gv[i]
        mhat = mv[i] * fbc1
        vhat = vv[i] * fbc2
        pv[i] -= flr * (mhat / (sqrtf(vhat) + feps) + fwd * pv[i])
