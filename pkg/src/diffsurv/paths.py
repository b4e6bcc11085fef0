"""Time grids, Brownian motion and bridges, Euler-Maruyama and Girsanov densities.

All stochastic integrals use the left-endpoint (Ito) convention and all time
integrals are left Riemann sums, so the Girsanov log-density here is exactly
the log Radon-Nikodym derivative of the Euler-Maruyama path law with respect
to discretised scaled Brownian motion on the same grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from . import kernels
from .drift import CallableDrift, DriftSpec, bind, kernel_of


class ExplosionError(ArithmeticError):
    """Raised when a simulated path becomes non-finite."""


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes (at least two)."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = _readonly(self.nodes)
        if nodes.ndim != 1 or nodes.shape[0] < 2:
            raise ValueError("a TimeGrid needs at least 2 nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    def __len__(self):
        return self.nodes.shape[0]

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())

    @property
    def start(self) -> float:
        return float(self.nodes[0])

    @property
    def end(self) -> float:
        return float(self.nodes[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    def _tol(self) -> float:
        return 1e-9 * max(1.0, abs(self.end), abs(self.start))

    def index(self, t: float) -> int:
        """Index of node ``t``; raises ``ValueError`` if ``t`` is not a node."""
        i = int(np.searchsorted(self.nodes, t))
        tol = self._tol()
        for j in (i - 1, i):
            if 0 <= j < len(self) and abs(self.nodes[j] - t) <= tol:
                return j
        raise ValueError(f"time {t!r} is not a grid node")

    def indices(self, times) -> np.ndarray:
        return np.array([self.index(t) for t in np.atleast_1d(times)], dtype=int)

    def contains(self, t: float) -> bool:
        try:
            self.index(t)
        except ValueError:
            return False
        return True

    def refine(self, times: Sequence[float]) -> "TimeGrid":
        """Union with ``times`` (deduplicated to within grid tolerance)."""
        return TimeGrid(_merge(self.nodes, np.asarray(times, dtype=float), self._tol()))


def _merge(base: np.ndarray, extra: np.ndarray, tol: float) -> np.ndarray:
    # extra nodes win over base nodes that lie within tol of them
    extra = np.unique(extra)
    if extra.size:
        keep = np.ones(extra.size, dtype=bool)
        keep[1:] = np.diff(extra) > tol
        extra = extra[keep]
        pos = np.searchsorted(extra, base)
        near = np.zeros(base.size, dtype=bool)
        for off in (-1, 0):
            j = np.clip(pos + off, 0, extra.size - 1)
            near |= np.abs(extra[j] - base) <= tol
        base = base[~near]
    return np.union1d(base, extra)


def make_grid(t_start: float, t_end: float, dt: float, extra_nodes: Sequence[float] = ()) -> TimeGrid:
    """Uniform grid at spacing ``dt`` on ``[t_start, t_end]`` merged with ``extra_nodes``.

    Uniform nodes are ``t_start + k*dt``; the last node is always ``t_end``.
    Extra nodes replace uniform nodes closer than ~1e-9 so that observation
    times are represented exactly.
    """
    for v in (t_start, t_end, dt):
        if not math.isfinite(v):
            raise ValueError("grid bounds and step must be finite")
    if not t_end > t_start:
        raise ValueError(f"empty time range [{t_start}, {t_end}]")
    if not dt > 0:
        raise ValueError("dt must be positive")
    extra = np.asarray(list(extra_nodes), dtype=float)
    if extra.size and not np.all(np.isfinite(extra)):
        raise ValueError("extra nodes must be finite")
    tol = 1e-9 * max(1.0, abs(t_end), abs(t_start))
    if extra.size and (extra.min() < t_start - tol or extra.max() > t_end + tol):
        raise ValueError("extra nodes must lie in [t_start, t_end]")
    n = int(math.floor((t_end - t_start) / dt + 1e-9))
    uniform = t_start + dt * np.arange(n + 1)
    uniform = uniform[uniform < t_end - tol]
    uniform = np.append(uniform, t_end)
    extra = extra[(extra > t_start + tol) & (extra < t_end - tol)]
    return TimeGrid(_merge(uniform, extra, tol))


def uniform_subgrid(grid: TimeGrid, t_start: float, dt: float, max_nodes: int) -> np.ndarray:
    """Indices of nodes of the form ``t_start + k*dt`` (strided to at most ``max_nodes``), plus the last node."""
    tol = grid._tol()
    k = (grid.nodes - t_start) / dt
    on = np.abs(k - np.round(k)) * dt <= tol
    idx = np.flatnonzero(on)
    if idx.size == 0 or idx[-1] != len(grid) - 1:
        idx = np.append(idx, len(grid) - 1)
    if max_nodes and idx.size > max_nodes:
        stride = int(math.ceil((idx.size - 1) / (max_nodes - 1)))
        sub = idx[::stride]
        if sub[-1] != idx[-1]:
            sub = np.append(sub, idx[-1])
        idx = sub
    return idx


@dataclass(frozen=True, eq=False)
class DiffusionPath:
    """Path values on the nodes of a grid."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (len(self.grid),):
            raise ValueError("one value per grid node required")
        object.__setattr__(self, "values", values)

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    def at(self, t: float) -> float:
        return float(self.values[self.grid.index(t)])

    def increment(self, s: float, t: float) -> float:
        return float(self.values[self.grid.index(t)] - self.values[self.grid.index(s)])

    def restrict(self, a: float, b: float) -> "DiffusionPath":
        i, j = self.grid.index(a), self.grid.index(b)
        return DiffusionPath(TimeGrid(self.grid.nodes[i : j + 1]), self.values[i : j + 1])

    def equals(self, other: "DiffusionPath") -> bool:
        return self.grid == other.grid and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class NoiseIncrements:
    """Brownian increments, one per grid interval (variance ``dt`` each under the standard law)."""

    grid: TimeGrid
    increments: np.ndarray

    def __post_init__(self):
        inc = _readonly(self.increments)
        if inc.shape != (len(self.grid) - 1,):
            raise ValueError("one increment per grid interval required")
        object.__setattr__(self, "increments", inc)

    def to_path(self, origin: float = 0.0) -> DiffusionPath:
        return DiffusionPath(self.grid, origin + np.concatenate(([0.0], np.cumsum(self.increments))))

    @classmethod
    def from_path(cls, path: DiffusionPath) -> "NoiseIncrements":
        return cls(path.grid, np.diff(path.values))


def sample_noise(grid: TimeGrid, rng: np.random.Generator) -> NoiseIncrements:
    return NoiseIncrements(grid, np.sqrt(grid.dt) * rng.standard_normal(len(grid) - 1))


def sample_brownian_path(grid: TimeGrid, sigma: float, origin: float, rng: np.random.Generator) -> DiffusionPath:
    """``origin + sigma * B`` on the grid."""
    if not sigma >= 0:
        raise ValueError("sigma must be non-negative")
    inc = sigma * np.sqrt(grid.dt) * rng.standard_normal(len(grid) - 1)
    return DiffusionPath(grid, origin + np.concatenate(([0.0], np.cumsum(inc))))


def sample_brownian_bridge(
    grid: TimeGrid, sigma: float, start_value: float, end_value: float, rng: np.random.Generator
) -> DiffusionPath:
    """Brownian bridge of ``sigma * B`` pinned at both ends of the grid.

    Interior nodes are drawn sequentially from their Gaussian conditionals
    given the previous node and the right endpoint.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.empty(len(grid))
    x[0], x[-1] = start_value, end_value
    z = rng.standard_normal(len(grid) - 2)
    kernels.bridge_fill(x, 0, len(grid) - 1, grid.nodes, float(sigma), z)
    return DiffusionPath(grid, x)


def _euler_python(x, start, dt, dw, sigma, fn):
    for k in range(start, x.shape[0] - 1):
        b = float(fn(np.array([x[k]]))[0])
        x[k + 1] = x[k] + b * dt[k] + sigma * dw[k]
        if not math.isfinite(x[k + 1]):
            return k + 1
    return -1


def euler_fill(x, start, dt, dw, sigma, bound) -> None:
    """In-place Euler recursion on a raw array; raises :class:`ExplosionError`."""
    kd = kernel_of(bound)
    if kd is not None:
        bad = kernels.euler_fill(x, start, dt, dw, float(sigma), kd.codes, kd.weights, kd.powers, kd.offset)
    else:
        bad = _euler_python(x, start, dt, dw, sigma, bound)
    if bad >= 0:
        raise ExplosionError(f"non-finite state at node {bad}: drift explodes at this discretisation")


def euler_maruyama_simulate(
    drift, theta, sigma: float, x0: float, grid: TimeGrid, noise: NoiseIncrements, z=None
) -> DiffusionPath:
    """``x[k+1] = x[k] + beta(x[k]) dt[k] + sigma dB[k]`` driven by ``noise``."""
    if noise.grid != grid:
        raise ValueError("noise must live on the simulation grid")
    if not sigma >= 0:
        raise ValueError("sigma must be non-negative")
    bound = bind(drift, theta, z)
    x = np.empty(len(grid))
    x[0] = x0
    euler_fill(x, 0, grid.dt, noise.increments, sigma, bound)
    return DiffusionPath(grid, x)


def girsanov_array(x, dt, lo, hi, sigma, bound) -> float:
    """Discrete Girsanov exponent on raw arrays over intervals ``lo .. hi-1``."""
    kd = kernel_of(bound)
    if kd is not None:
        return float(kernels.girsanov_sum(x, dt, lo, hi, float(sigma), kd.codes, kd.weights, kd.powers, kd.offset))
    if hi <= lo:
        return 0.0
    b = np.asarray(bound(x[lo:hi]), dtype=float)
    s2 = sigma * sigma
    return float(np.sum(b * np.diff(x[lo : hi + 1])) / s2 - 0.5 * np.sum(b * b * dt[lo:hi]) / s2)


def girsanov_logdensity(
    path: DiffusionPath, drift, theta, sigma: float, window: tuple[float, float] | None = None, z=None
) -> float:
    """Log density of the path law under ``drift`` w.r.t. ``sigma``-scaled Brownian motion.

    Restricted to ``window = (a, b)`` (grid nodes; defaults to the whole grid).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a, b = window if window is not None else (path.grid.start, path.grid.end)
    lo, hi = path.grid.index(a), path.grid.index(b)
    if hi < lo:
        raise ValueError("window must satisfy a <= b")
    return girsanov_array(path.values, path.grid.dt, lo, hi, sigma, bind(drift, theta, z))


# --- unit diffusion coefficient transform -------------------------------------------------


@dataclass(frozen=True)
class DiffusionCoefficient:
    """State-dependent diffusion coefficient ``sigma(x; params)`` and its x-derivative.

    ``antiderivative``/``inverse`` are optional closed forms of
    ``eta(x) = int^x 1/sigma`` and its inverse; numerical quadrature and root
    finding are used otherwise (anchored at ``reference``).
    """

    fn: Callable[[np.ndarray, dict], np.ndarray]
    derivative: Callable[[np.ndarray, dict], np.ndarray]
    domain: tuple[float, float] = (-math.inf, math.inf)
    antiderivative: Callable | None = None
    inverse: Callable | None = None
    reference: float = 0.0
    param_names: tuple[str, ...] = field(default=())


def constant_coefficient(sigma: float) -> DiffusionCoefficient:
    return DiffusionCoefficient(
        fn=lambda x, p: np.full_like(np.asarray(x, dtype=float), sigma),
        derivative=lambda x, p: np.zeros_like(np.asarray(x, dtype=float)),
        antiderivative=lambda x, p: np.asarray(x, dtype=float) / sigma,
        inverse=lambda y, p: np.asarray(y, dtype=float) * sigma,
    )


def linear_coefficient(sigma: float) -> DiffusionCoefficient:
    """``sigma * x`` on the positive half-line."""
    return DiffusionCoefficient(
        fn=lambda x, p: sigma * np.asarray(x, dtype=float),
        derivative=lambda x, p: np.full_like(np.asarray(x, dtype=float), sigma),
        domain=(0.0, math.inf),
        antiderivative=lambda x, p: np.log(x) / sigma,
        inverse=lambda y, p: np.exp(sigma * np.asarray(y, dtype=float)),
        reference=1.0,
    )


@dataclass(frozen=True)
class LampertiMap:
    forward: Callable
    inverse: Callable
    drift: DriftSpec


def lamperti_transform(coef: DiffusionCoefficient, drift, theta=None) -> LampertiMap:
    """Maps ``dX = beta dt + sigma(X) dB`` to a unit-coefficient SDE for ``Y = eta(X)``.

    The transformed drift is ``beta(x)/sigma(x) - sigma'(x)/2`` evaluated at
    ``x = eta^{-1}(y)``.
    """
    params = dict(theta) if isinstance(theta, dict) else {}
    bound = bind(drift, theta)
    lo, hi = coef.domain

    def _check(x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= lo) or np.any(x >= hi):
            raise ValueError("state outside the domain of the diffusion coefficient")
        s = np.asarray(coef.fn(x, params), dtype=float)
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise ValueError("diffusion coefficient vanishes or is not positive here")
        return x

    if coef.antiderivative is not None:

        def forward(x):
            return coef.antiderivative(_check(x), params)

    else:

        def _eta(x):
            val, _ = integrate.quad(lambda z: 1.0 / float(coef.fn(np.array(z), params)), coef.reference, x,
                                    epsabs=1e-13, epsrel=1e-13, limit=200)
            return val

        def forward(x):
            x = _check(x)
            return np.vectorize(_eta)(x) if x.ndim else np.float64(_eta(float(x)))

    if coef.inverse is not None:

        def inverse(y):
            return coef.inverse(y, params)

    else:

        def _inv(y):
            a = coef.reference - 1.0 if math.isinf(lo) else lo + (coef.reference - lo) * 0.5
            b = coef.reference + 1.0 if math.isinf(hi) else hi - (hi - coef.reference) * 0.5
            fa, fb = float(forward(a)) - y, float(forward(b)) - y
            while fa * fb > 0:
                a = a - 2 * (coef.reference - a) if math.isinf(lo) else lo + (a - lo) * 0.5
                b = b + 2 * (b - coef.reference) if math.isinf(hi) else hi - (hi - b) * 0.5
                fa, fb = float(forward(a)) - y, float(forward(b)) - y
            return optimize.brentq(lambda v: float(forward(v)) - y, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)

        def inverse(y):
            y = np.asarray(y, dtype=float)
            return np.vectorize(_inv)(y) if y.ndim else np.float64(_inv(float(y)))

    def g(y, _p=None):
        x = np.asarray(inverse(y), dtype=float)
        s = np.asarray(coef.fn(x, params), dtype=float)
        return bound(x) / s - 0.5 * np.asarray(coef.derivative(x, params), dtype=float)

    return LampertiMap(forward, inverse, CallableDrift(g))
