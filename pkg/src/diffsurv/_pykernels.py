"""Pure-Python implementations of the numerical kernels.

Mirrors ``_ckernels.pyx`` function for function. Used when the compiled
extension is missing or ``DIFFSURV_PURE_PYTHON=1`` is set.
"""
import math

import numpy as np

# basis function codes
CONST, IDENT, SIN, SIGNPOW, EXP, SQUARE = 0, 1, 2, 3, 4, 5
# hazard codes
H_ABS, H_SQUARE, H_POSITIVE, H_EXP = 0, 1, 2, 3

BACKEND = "python"


def _basis_scalar(code, p, x):
    if code == CONST:
        return 1.0
    if code == IDENT:
        return x
    if code == SIN:
        return math.sin(x)
    if code == SIGNPOW:
        if x > 0.0:
            return x ** p
        if x < 0.0:
            return -((-x) ** p)
        return 0.0
    if code == EXP:
        try:
            return math.exp(p * x)
        except OverflowError:
            return math.inf
    if code == SQUARE:
        return x * x
    raise ValueError(f"unknown basis code {code}")


def basis_eval(code, p, x):
    """Vectorised evaluation of a single basis function."""
    x = np.asarray(x, dtype=float)
    if code == CONST:
        return np.ones_like(x)
    if code == IDENT:
        return x.copy()
    if code == SIN:
        return np.sin(x)
    if code == SIGNPOW:
        return np.sign(x) * np.abs(x) ** p
    if code == EXP:
        with np.errstate(over="ignore"):
            return np.exp(p * x)
    if code == SQUARE:
        return x * x
    raise ValueError(f"unknown basis code {code}")


def drift_eval(x, codes, weights, powers, offset):
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, offset)
    for c, w, p in zip(codes, weights, powers):
        out += w * basis_eval(int(c), p, x)
    return out


def _drift_scalar(x, codes, weights, powers, offset):
    b = offset
    for c, w, p in zip(codes, weights, powers):
        b += w * _basis_scalar(c, p, x)
    return b


def euler_fill(x, start, dt, dw, sigma, codes, weights, powers, offset):
    """In-place Euler recursion from ``x[start]``; ``dw[k]`` drives ``x[k] -> x[k+1]``.

    Returns the index of the first non-finite value, or -1.
    """
    codes = [int(c) for c in codes]
    weights = [float(w) for w in weights]
    powers = [float(p) for p in powers]
    n = x.shape[0]
    xk = float(x[start])
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is reported through the return value
        for k in range(start, n - 1):
            b = _drift_scalar(xk, codes, weights, powers, offset)
            xk = xk + b * dt[k] + sigma * dw[k]
            if not math.isfinite(xk):
                return k + 1
            x[k + 1] = xk
    return -1


def girsanov_sum(x, dt, lo, hi, sigma, codes, weights, powers, offset):
    """Discrete Girsanov exponent over intervals ``lo .. hi-1`` (Ito, left point)."""
    if hi <= lo:
        return 0.0
    xs = x[lo:hi]
    b = drift_eval(xs, codes, weights, powers, offset)
    dx = x[lo + 1:hi + 1] - xs
    s2 = sigma * sigma
    return float(np.sum(b * dx) / s2 - 0.5 * np.sum(b * b * dt[lo:hi]) / s2)


def hazard_eval(hcode, hpar, x):
    x = np.asarray(x, dtype=float)
    if hcode == H_ABS:
        return np.abs(x)
    if hcode == H_SQUARE:
        return x * x
    if hcode == H_POSITIVE:
        return np.maximum(x, 0.0)
    if hcode == H_EXP:
        with np.errstate(over="ignore"):
            return np.exp(hpar * x)
    raise ValueError(f"unknown hazard code {hcode}")


def loglik_nodes(x, lo, hi, events, weights, hcode, hpar):
    """Sum over nodes ``lo .. hi-1`` of ``E_n log h(x_n) - w_n h(x_n)``."""
    if hi <= lo:
        return 0.0
    h = hazard_eval(hcode, hpar, x[lo:hi])
    ev = events[lo:hi]
    total = -float(np.dot(weights[lo:hi], h))
    mask = ev > 0
    if mask.any():
        hm = h[mask]
        if np.any(hm <= 0.0):
            return -math.inf
        total += float(np.dot(ev[mask], np.log(hm)))
    return total


def bridge_fill(x, lo, hi, t, sigma, z):
    """Sequential conditional-Gaussian Brownian bridge between pinned ``x[lo]``, ``x[hi]``."""
    b = t[hi]
    end = x[hi]
    xk = x[lo]
    for j, k in enumerate(range(lo, hi - 1)):
        dtk = t[k + 1] - t[k]
        rem = b - t[k]
        mean = xk + dtk / rem * (end - xk)
        var = sigma * sigma * dtk * (b - t[k + 1]) / rem
        xk = mean + math.sqrt(var) * z[j]
        x[k + 1] = xk
