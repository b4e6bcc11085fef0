"""Drift specifications.

Three forms are supported:

* :class:`LinearBasisDrift` -- ``offset + sum_i theta_i * scale_i * f_i(x)`` with
  ``f_i`` drawn from a fixed menu of basis functions. Basis exponents may be
  parameters themselves (the Weibull-type drift ``theta1 sign(x)|x|^theta2``).
* :class:`CovariateScaledDrift` -- a single basis term whose coefficient is
  ``exp(intercept + sum_c slope_c * (z_c - centre_c))``.
* :class:`CallableDrift` -- an arbitrary vectorised ``beta(x, params)``.

The first two lower to a :class:`KernelDrift` understood by the compiled
kernels; callable drifts fall back to Python loops.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels

BASIS_CODES = {
    "const": kernels.CONST,
    "identity": kernels.IDENT,
    "sin": kernels.SIN,
    "signpow": kernels.SIGNPOW,
    "exp": kernels.EXP,
    "square": kernels.SQUARE,
}


@dataclass(frozen=True)
class BasisTerm:
    """One basis function ``scale * f(x; power)``.

    ``power`` is only read by ``signpow`` (exponent) and ``exp`` (rate); it
    may name a model parameter instead of holding a number.
    """

    kind: str
    scale: float = 1.0
    power: float | str = 0.0

    def __post_init__(self):
        if self.kind not in BASIS_CODES:
            raise ValueError(f"unknown basis kind {self.kind!r}")

    def resolve_power(self, params: Mapping[str, float]) -> float:
        if isinstance(self.power, str):
            return float(params[self.power])
        return float(self.power)


@dataclass(frozen=True)
class KernelDrift:
    """Drift with every parameter bound; the form the kernels consume."""

    codes: np.ndarray
    weights: np.ndarray
    powers: np.ndarray
    offset: float = 0.0

    def __call__(self, x):
        return kernels.drift_eval(x, self.codes, self.weights, self.powers, self.offset)

    def basis(self, x) -> np.ndarray:
        """Basis matrix ``f_i(x)``, one column per term, weights not applied."""
        x = np.asarray(x, dtype=float)
        cols = [
            kernels.basis_eval(int(c), float(p), x) for c, p in zip(self.codes, self.powers)
        ]
        return np.stack(cols, axis=-1) if cols else np.zeros(x.shape + (0,))


def _as_params(names: Sequence[str], theta) -> dict[str, float]:
    if isinstance(theta, Mapping):
        return {k: float(v) for k, v in theta.items()}
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape[0] != len(names):
        raise ValueError(f"expected {len(names)} parameters {tuple(names)}, got {theta.shape[0]}")
    return dict(zip(names, theta.tolist()))


class DriftSpec:
    """Base class. ``param_names`` lists every parameter the drift reads."""

    param_names: tuple[str, ...] = ()
    form = "general"

    def params(self, theta) -> dict[str, float]:
        return _as_params(self.param_names, theta)

    def kernel_form(self, theta, z: Mapping[str, float] | None = None) -> KernelDrift | None:
        return None

    def evaluate(self, x, theta, z=None) -> np.ndarray:
        kd = self.kernel_form(theta, z)
        if kd is None:
            raise NotImplementedError
        return kd(x)

    def __call__(self, x, theta, z=None):
        return self.evaluate(x, theta, z)


class LinearBasisDrift(DriftSpec):
    """``offset + sum_i theta_i f_i(x)``; the first ``len(terms)`` names are the coefficients."""

    form = "linear-basis"

    def __init__(self, terms: Sequence[BasisTerm], param_names: Sequence[str], offset: float = 0.0):
        self.terms = tuple(terms)
        self.param_names = tuple(param_names)
        self.offset = float(offset)
        if len(self.param_names) < len(self.terms):
            raise ValueError("need one coefficient name per basis term")
        for t in self.terms:
            if isinstance(t.power, str) and t.power not in self.param_names:
                raise ValueError(f"basis exponent {t.power!r} is not a parameter")

    @property
    def linear_names(self) -> tuple[str, ...]:
        return self.param_names[: len(self.terms)]

    @property
    def d(self) -> int:
        return len(self.terms)

    def kernel_form(self, theta, z=None) -> KernelDrift:
        p = self.params(theta)
        codes = np.array([BASIS_CODES[t.kind] for t in self.terms], dtype=np.int_)
        scales = np.array([t.scale for t in self.terms], dtype=float)
        coefs = np.array([p[n] for n in self.linear_names], dtype=float)
        powers = np.array([t.resolve_power(p) for t in self.terms], dtype=float)
        return KernelDrift(codes, coefs * scales, powers, self.offset)

    def basis_form(self, theta) -> KernelDrift:
        """Kernel form with unit coefficients, so ``basis`` returns ``scale_i f_i``."""
        kd = self.kernel_form(theta)
        scales = np.array([t.scale for t in self.terms], dtype=float)
        return KernelDrift(kd.codes, scales, kd.powers, self.offset)

    def basis_matrix(self, x, theta) -> np.ndarray:
        bf = self.basis_form(theta)
        return bf.basis(x) * bf.weights

    def evaluate_generic(self, x, theta) -> np.ndarray:
        """Sum of basis columns, computed without the fused kernel (cross-check path)."""
        p = self.params(theta)
        F = self.basis_matrix(x, theta)
        out = np.full(F.shape[:-1], self.offset)
        for j, n in enumerate(self.linear_names):
            out += p[n] * F[..., j]
        return out


class CovariateScaledDrift(DriftSpec):
    """``exp(intercept + sum_c slope_c (z_c - centre_c)) * term(x)``."""

    form = "covariate"

    def __init__(
        self,
        term: BasisTerm,
        intercept: str,
        slopes: Mapping[str, str],
        centres: Mapping[str, float],
        extra_params: Sequence[str] = (),
    ):
        self.term = term
        self.intercept = intercept
        self.slopes = dict(slopes)
        self.centres = {c: float(centres.get(c, 0.0)) for c in self.slopes}
        self.param_names = (intercept, *self.slopes.values(), *extra_params)

    def coefficient(self, theta, z: Mapping[str, float] | None) -> float:
        p = theta if isinstance(theta, Mapping) else self.params(theta)
        z = z or {}
        eta = p[self.intercept]
        for cov, name in self.slopes.items():
            eta += p[name] * (float(z.get(cov, 0.0)) - self.centres[cov])
        return float(np.exp(eta))

    def kernel_form(self, theta, z=None) -> KernelDrift:
        p = theta if isinstance(theta, Mapping) else self.params(theta)
        c = self.coefficient(p, z)
        return KernelDrift(
            np.array([BASIS_CODES[self.term.kind]], dtype=np.int_),
            np.array([c * self.term.scale]),
            np.array([self.term.resolve_power(p)]),
            0.0,
        )


class CallableDrift(DriftSpec):
    """Black-box ``fn(x, params) -> beta``; ``fn`` must accept numpy arrays."""

    form = "general"

    def __init__(self, fn: Callable, param_names: Sequence[str] = ()):
        self.fn = fn
        self.param_names = tuple(param_names)

    def evaluate(self, x, theta, z=None):
        return np.asarray(self.fn(np.asarray(x, dtype=float), self.params(theta)), dtype=float)


class BoundDrift:
    """A drift with parameters (and covariates) fixed; callable on arrays."""

    def __init__(self, drift: DriftSpec, theta, z=None):
        self.kernel = drift.kernel_form(theta, z)
        if self.kernel is None:
            params = drift.params(theta)
            self._fn = lambda x: drift.evaluate(x, params, z)
        else:
            self._fn = self.kernel

    def __call__(self, x):
        return self._fn(x)


def bind(drift, theta=None, z=None):
    """Normalise ``drift`` (DriftSpec, KernelDrift, BoundDrift or callable) to something callable."""
    if isinstance(drift, (KernelDrift, BoundDrift)):
        return drift
    if isinstance(drift, DriftSpec):
        return BoundDrift(drift, theta if theta is not None else {}, z)
    if callable(drift):
        return drift
    raise TypeError(f"cannot use {type(drift).__name__} as a drift")


def kernel_of(bound) -> KernelDrift | None:
    if isinstance(bound, KernelDrift):
        return bound
    if isinstance(bound, BoundDrift):
        return bound.kernel
    return None
