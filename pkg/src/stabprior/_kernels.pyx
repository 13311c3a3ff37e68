# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels; see ``_kernels_py`` for the reference versions."""
import numpy as np

from libc.math cimport exp, fabs, log, log1p, sqrt, M_PI

cdef double SIGMA_FLOOR = 1e-8
cdef double DENOM_CLAMP = 1e-10
cdef double RELU_MEAN_SQ = 1.0 - 1.0 / M_PI
cdef unsigned char FLAG_CLAMPED = 1
cdef unsigned char FLAG_FLOORED = 2
cdef unsigned char FLAG_BELOW_TARGET = 4


cdef inline double _softplus(double x) nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def softplus_floor(rho):
    cdef const double[::1] r = np.ascontiguousarray(rho, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n = r.shape[0], k
    out = np.empty(n, dtype=np.float64)
    der = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] d = der
    cdef double s
    with nogil:
        for k in range(n):
            s = _softplus(r[k])
            if s < SIGMA_FLOOR:
                o[k] = SIGMA_FLOOR
                d[k] = 0.0
            else:
                o[k] = s
                d[k] = _sigmoid(r[k])
    shape = np.shape(rho)
    return out.reshape(shape), der.reshape(shape)


def stabilising_sigma(mu_q, sigma_q, fan_in):
    cdef const double[:, :] mu = np.asarray(mu_q, dtype=np.float64)
    cdef const double[:, :] sg = np.asarray(sigma_q, dtype=np.float64)
    cdef Py_ssize_t rows = mu.shape[0], cols = mu.shape[1], i, j
    cdef double fan = fan_in
    sigma_p = np.empty(cols, dtype=np.float64)
    flags = np.zeros(cols, dtype=np.uint8)
    mu_sum_arr = np.zeros(cols, dtype=np.float64)
    var_sum_arr = np.zeros(cols, dtype=np.float64)
    cdef double[::1] sp = sigma_p
    cdef unsigned char[::1] fl = flags
    cdef double[::1] ms = mu_sum_arr
    cdef double[::1] vs = var_sum_arr
    cdef double gamma, denom, v
    with nogil:
        for i in range(rows):
            for j in range(cols):
                ms[j] += mu[i, j]
                vs[j] += sg[i, j] * sg[i, j]
        for j in range(cols):
            gamma = fabs(2.0 - RELU_MEAN_SQ * ms[j] * ms[j])
            denom = vs[j] - gamma
            if denom <= 0.0:
                fl[j] |= FLAG_BELOW_TARGET
            if fabs(denom) < DENOM_CLAMP:
                denom = -DENOM_CLAMP if denom < 0.0 else DENOM_CLAMP
                fl[j] |= FLAG_CLAMPED
            v = sqrt(fabs(vs[j] * gamma / denom) / fan)
            if v < SIGMA_FLOOR:
                v = SIGMA_FLOOR
                fl[j] |= FLAG_FLOORED
            sp[j] = v
    return sigma_p, flags


def gaussian_product(mu_q, sigma_q, mu_p, sigma_p):
    mq_a = np.asarray(mu_q, dtype=np.float64)
    shape = mq_a.shape
    cdef const double[:, :] mq = mq_a
    cdef const double[:, :] sq = np.asarray(sigma_q, dtype=np.float64)
    cdef const double[:, :] mp = np.broadcast_to(np.asarray(mu_p, dtype=np.float64), shape)
    cdef const double[:, :] spv = np.broadcast_to(np.asarray(sigma_p, dtype=np.float64), shape)
    cdef Py_ssize_t rows = shape[0], cols = shape[1], i, j
    mu_out = np.empty(shape, dtype=np.float64)
    sg_out = np.empty(shape, dtype=np.float64)
    d1_out = np.empty(shape, dtype=np.float64)
    d2_out = np.empty(shape, dtype=np.float64)
    d3_out = np.empty(shape, dtype=np.float64)
    cdef double[:, ::1] mo = mu_out
    cdef double[:, ::1] so = sg_out
    cdef double[:, ::1] d1 = d1_out
    cdef double[:, ::1] d2 = d2_out
    cdef double[:, ::1] d3 = d3_out
    cdef double a, b, a2, b2, s, rs, m
    with nogil:
        for i in range(rows):
            for j in range(cols):
                a = sq[i, j]
                b = spv[i, j]
                a2 = a * a
                b2 = b * b
                s = b2 + a2
                rs = sqrt(s)
                m = (mq[i, j] * b2 + mp[i, j] * a2) / s
                mo[i, j] = m
                so[i, j] = b * a / rs
                d1[i, j] = b2 / s
                d2[i, j] = 2.0 * a * (mp[i, j] - m) / s
                d3[i, j] = b * b2 / (s * rs)
    return mu_out, sg_out, d1_out, d2_out, d3_out


def kl_diag(mu_q, sigma_q, mu_p, sigma_p):
    mq_a = np.asarray(mu_q, dtype=np.float64)
    shape = mq_a.shape
    if mq_a.ndim != 2:
        shape2 = (1, mq_a.size)
        mq_a = mq_a.reshape(shape2)
    else:
        shape2 = shape
    cdef const double[:, :] mq = mq_a
    cdef const double[:, :] sq = np.asarray(sigma_q, dtype=np.float64).reshape(shape2)
    cdef const double[:, :] mp = np.broadcast_to(np.asarray(mu_p, dtype=np.float64), shape).reshape(shape2)
    cdef const double[:, :] spv = np.broadcast_to(np.asarray(sigma_p, dtype=np.float64), shape).reshape(shape2)
    cdef Py_ssize_t rows = shape2[0], cols = shape2[1], i, j
    dmu_out = np.empty(shape2, dtype=np.float64)
    dsg_out = np.empty(shape2, dtype=np.float64)
    cdef double[:, ::1] dm = dmu_out
    cdef double[:, ::1] ds = dsg_out
    cdef double total = 0.0, diff, inv, a, b
    with nogil:
        for i in range(rows):
            for j in range(cols):
                a = sq[i, j]
                b = spv[i, j]
                diff = mq[i, j] - mp[i, j]
                inv = 1.0 / (b * b)
                total += log(b / a) + 0.5 * (a * a + diff * diff) * inv - 0.5
                dm[i, j] = diff * inv
                ds[i, j] = a * inv - 1.0 / a
    return total, dmu_out.reshape(shape), dsg_out.reshape(shape)
