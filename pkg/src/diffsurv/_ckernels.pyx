# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels. Signatures match ``_pykernels``."""
import numpy as np
from libc.math cimport sin, exp, pow, log, sqrt, fabs, isfinite, INFINITY

BACKEND = "cython"

cdef enum:
    CONST = 0
    IDENT = 1
    SIN = 2
    SIGNPOW = 3
    EXP = 4
    SQUARE = 5

cdef enum:
    H_ABS = 0
    H_SQUARE = 1
    H_POSITIVE = 2
    H_EXP = 3


cdef inline double _basis(long code, double p, double x) noexcept nogil:
    if code == CONST:
        return 1.0
    elif code == IDENT:
        return x
    elif code == SIN:
        return sin(x)
    elif code == SIGNPOW:
        if x > 0.0:
            return pow(x, p)
        elif x < 0.0:
            return -pow(-x, p)
        return 0.0
    elif code == EXP:
        return exp(p * x)
    elif code == SQUARE:
        return x * x
    return 0.0


cdef inline double _drift(double x, const long[:] codes, const double[:] weights,
                          const double[:] powers, double offset) noexcept nogil:
    cdef double b = offset
    cdef Py_ssize_t i
    for i in range(codes.shape[0]):
        b += weights[i] * _basis(codes[i], powers[i], x)
    return b


cdef inline double _hazard(long hcode, double hpar, double x) noexcept nogil:
    if hcode == H_ABS:
        return fabs(x)
    elif hcode == H_SQUARE:
        return x * x
    elif hcode == H_POSITIVE:
        return x if x > 0.0 else 0.0
    elif hcode == H_EXP:
        return exp(hpar * x)
    return 0.0


def _check_codes(codes, n):
    for c in codes:
        if c < 0 or c > n:
            raise ValueError(f"unknown code {c}")


def basis_eval(long code, double p, x):
    _check_codes([code], 5)
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(xv.shape[0])
    cdef double[:] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(xv.shape[0]):
            ov[i] = _basis(code, p, xv[i])
    return out.reshape(np.shape(x))


def drift_eval(x, codes, weights, powers, double offset):
    cdef const long[:] cv = np.ascontiguousarray(codes, dtype=np.int_)
    _check_codes(codes, 5)
    cdef const double[:] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[:] pv = np.ascontiguousarray(powers, dtype=np.float64)
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(xv.shape[0])
    cdef double[:] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(xv.shape[0]):
            ov[i] = _drift(xv[i], cv, wv, pv, offset)
    return out.reshape(np.shape(x))


def euler_fill(double[:] x, Py_ssize_t start, const double[:] dt, const double[:] dw,
               double sigma, codes, weights, powers, double offset):
    cdef const long[:] cv = np.ascontiguousarray(codes, dtype=np.int_)
    _check_codes(codes, 5)
    cdef const double[:] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[:] pv = np.ascontiguousarray(powers, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t k
    cdef double xk = x[start]
    cdef Py_ssize_t bad = -1
    with nogil:
        for k in range(start, n - 1):
            xk = xk + _drift(xk, cv, wv, pv, offset) * dt[k] + sigma * dw[k]
            if not isfinite(xk):
                bad = k + 1
                break
            x[k + 1] = xk
    return bad


def girsanov_sum(const double[:] x, const double[:] dt, Py_ssize_t lo, Py_ssize_t hi,
                 double sigma, codes, weights, powers, double offset):
    cdef const long[:] cv = np.ascontiguousarray(codes, dtype=np.int_)
    _check_codes(codes, 5)
    cdef const double[:] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[:] pv = np.ascontiguousarray(powers, dtype=np.float64)
    cdef double s1 = 0.0, s2 = 0.0, b
    cdef Py_ssize_t k
    with nogil:
        for k in range(lo, hi):
            b = _drift(x[k], cv, wv, pv, offset)
            s1 += b * (x[k + 1] - x[k])
            s2 += b * b * dt[k]
    return s1 / (sigma * sigma) - 0.5 * s2 / (sigma * sigma)


def hazard_eval(long hcode, double hpar, x):
    _check_codes([hcode], 3)
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(xv.shape[0])
    cdef double[:] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(xv.shape[0]):
            ov[i] = _hazard(hcode, hpar, xv[i])
    return out.reshape(np.shape(x))


def loglik_nodes(const double[:] x, Py_ssize_t lo, Py_ssize_t hi, const long[:] events,
                 const double[:] weights, long hcode, double hpar):
    _check_codes([hcode], 3)
    cdef double total = 0.0, h
    cdef Py_ssize_t n
    cdef bint dead = False
    with nogil:
        for n in range(lo, hi):
            h = _hazard(hcode, hpar, x[n])
            total -= weights[n] * h
            if events[n] > 0:
                if h <= 0.0:
                    dead = True
                    break
                total += events[n] * log(h)
    if dead:
        return -INFINITY
    return total


def bridge_fill(double[:] x, Py_ssize_t lo, Py_ssize_t hi, const double[:] t,
                double sigma, const double[:] z):
    cdef double b = t[hi]
    cdef double end = x[hi]
    cdef double xk = x[lo]
    cdef double dtk, rem, mean, var
    cdef Py_ssize_t k
    with nogil:
        for k in range(lo, hi - 1):
            dtk = t[k + 1] - t[k]
            rem = b - t[k]
            mean = xk + dtk / rem * (end - xk)
            var = sigma * sigma * dtk * (b - t[k + 1]) / rem
            xk = mean + sqrt(var) * z[k - lo]
            x[k + 1] = xk
