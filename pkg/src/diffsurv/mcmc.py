"""Hastings-within-Gibbs sampling of drift parameters and latent paths.

Latent representation
---------------------
Each group (or, for covariate models, the single shared noise) is a *strand*
on its own time grid. The latent object of a strand is a unit-scale driving
path ``U`` split at the window end ``y`` (the largest observation time of the
strand; the horizon ``T`` under the centered parametrization):

* ``head`` -- ``U`` on ``[origin, y]`` with ``U(origin) = 0``;
* ``tail`` -- an independent unit Brownian path on ``[y, T]`` starting at 0.

Paths are reconstructed as

* centered / partially non-centered: ``X = x0 + sigma * U`` on the head
  (``U`` is the ``(X - X0)/sigma`` path, so ``X~ = X`` on the window);
* fully non-centered: Euler recursion from ``x0`` driven by ``sigma * dU``;
* tail (both non-centered forms): Euler recursion from ``X(y)`` driven by
  ``sigma * d(tail)``.

Keeping ``U`` at unit scale makes the unknown-sigma move a plain update of a
scalar, and keeping the tail separate (with its own random stream) makes the
parameter updates functions of ``[origin, y]`` only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import linalg

from . import kernels
from .drift import LinearBasisDrift, bind
from .models import ModelInstance, Proposal, StartMap, log_prior
from .paths import DiffusionPath, ExplosionError, TimeGrid, euler_fill, girsanov_array, make_grid, uniform_subgrid
from .survival import SurvivalDataset, likelihood_weights

PARAMETRIZATIONS = ("centered", "pnc", "ncp")


@dataclass
class SamplerConfig:
    """Run settings.

    ``horizon`` is ``T`` per group: a number (all groups), a mapping from
    group label to number, or ``None`` for ``T = y_max`` of each group.
    ``proposals`` maps parameter names to :class:`Proposal` objects (or their
    string forms) for parameters not updated by the conjugate step.
    """

    iterations: int = 20000
    burn_in: int = 2000
    thin: int = 1
    dt: float = 0.01
    block_length: float = 0.2
    horizon: float | Mapping | None = None
    parametrization: str = "pnc"
    seed: int = 0
    sigma_step: float = 0.1
    rw_step: float = 0.2
    proposals: Mapping[str, Proposal | str] = field(default_factory=dict)
    initial_theta: Mapping[str, float] | None = None
    output_nodes: int = 100
    record_curves: bool = True

    def validate(self) -> None:
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"parametrization must be one of {PARAMETRIZATIONS}, got {self.parametrization!r}")
        if self.iterations < 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("iterations and burn_in must be >= 0 and thin >= 1")
        if self.burn_in > self.iterations:
            raise ValueError("burn_in must not exceed iterations")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive")
        if not self.block_length >= 2 * self.dt:
            raise ValueError("block_length must be at least 2*dt")
        if not self.sigma_step > 0 or not self.rw_step > 0:
            raise ValueError("random-walk steps must be positive")
        if self.output_nodes < 2:
            raise ValueError("output_nodes must be >= 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def retained(self) -> int:
        return -(-(self.iterations - self.burn_in) // self.thin)


# --- blocking --------------------------------------------------------------------------------


def block_knots(start: float, end: float, block_length: float) -> np.ndarray:
    """``start + k*block_length`` below ``end``, then ``end``."""
    tol = 1e-9 * max(1.0, abs(start), abs(end))
    if end <= start + tol:
        return np.array([start])
    n = int(math.floor((end - start) / block_length + 1e-9))
    knots = start + block_length * np.arange(n + 1)
    knots = knots[knots < end - tol]
    return np.append(knots, end)


def blocks_from_knots(knots) -> list[tuple[float, float, bool]]:
    """Overlapping blocks ``[k_i, k_{i+2}]`` for ``i < m-3`` then the free-end block ``[k_{m-3}, k_{m-1}]``.

    ``m`` is the number of knots. With three knots or fewer there is a
    single free-end block over the whole span.
    """
    knots = list(np.asarray(knots, dtype=float))
    m = len(knots)
    if m < 2:
        return []
    out = [(knots[i], knots[i + 2], False) for i in range(m - 3)]
    out.append((knots[max(m - 3, 0)], knots[-1], True))
    return out


# --- problem layout --------------------------------------------------------------------------


@dataclass
class Cell:
    label: str
    z: dict
    times: np.ndarray
    events: np.ndarray
    counts: np.ndarray
    weights: np.ndarray


@dataclass
class Strand:
    """One independently driven latent path and the cells (covariate patterns) it drives."""

    label: object
    grid: TimeGrid
    iw: int
    y_max: float
    blocks: list[tuple[int, int, bool]]
    cells: list[Cell]
    out_idx: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def n(self) -> int:
        return len(self.grid)


def _horizon_for(config: SamplerConfig, label, y_max: float) -> float:
    h = config.horizon
    if isinstance(h, Mapping):
        h = h.get(label, h.get(str(label)))
    if h is None:
        return y_max
    h = float(h)
    if h < y_max - 1e-9 * max(1.0, y_max):
        raise ValueError(f"horizon {h} for group {label!r} is below its largest observation time {y_max}")
    return h


def build_strands(model: ModelInstance, data: SurvivalDataset | None, config: SamplerConfig) -> list[Strand]:
    """Lay out grids, windows, blocks and likelihood weights for every group or covariate cell."""
    origin = model.origin
    if data is not None and np.any(data.times <= origin):
        raise ValueError(f"observation times must exceed the model's time origin {origin}")
    if model.covariates is not None:
        if config.parametrization != "ncp":
            raise ValueError("covariate models share one noise path and need the ncp parametrization")
        if data is None:
            raise ValueError("covariate models need data to define their cells")
        spec = model.covariates
        groups = {None: data}
        cell_index = [spec.cell_of(o.covariates) for o in data.observations]
    else:
        if isinstance(model.x0, StartMap):
            raise ValueError("a covariate start map needs a covariate spec")
        if data is None:
            groups = {None: None}
        elif model.pool_groups:
            groups = {None: data.pooled()}
        else:
            groups = data.by_group()
    strands = []
    for label, sub in groups.items():
        y_max = sub.y_max if sub is not None else origin
        T = _horizon_for(config, label, y_max)
        if T <= origin:
            raise ValueError("a horizon beyond the time origin is required when a group has no observations")
        y_win = T if config.parametrization == "centered" else y_max
        knots = block_knots(origin, y_win, config.block_length)
        extra = list(knots) + ([] if sub is None else sub.times.tolist())
        grid = make_grid(origin, T, config.dt, extra)
        iw = grid.index(y_win)
        blocks = [(grid.index(a), grid.index(b), free) for a, b, free in blocks_from_knots(knots)]
        cells = []
        if model.covariates is not None:
            for k in range(len(spec.cells)):
                mask = np.array([ci == k for ci in cell_index])
                times, events = sub.times[mask], sub.events[mask]
                counts, weights = likelihood_weights(grid, times, events)
                cells.append(Cell(spec.cell_label(k), spec.cell_dict(k), times, events, counts, weights))
        else:
            times = np.empty(0) if sub is None else sub.times
            events = np.empty(0, dtype=bool) if sub is None else sub.events
            counts, weights = likelihood_weights(grid, times, events)
            cells.append(Cell("all" if label is None else str(label), {}, times, events, counts, weights))
        out_idx = uniform_subgrid(grid, origin, config.dt, config.output_nodes)
        strands.append(Strand(label, grid, iw, y_max, blocks, cells, out_idx))
    return strands


# --- state -----------------------------------------------------------------------------------


@dataclass
class StrandState:
    head: np.ndarray
    tail: np.ndarray
    paths: list[np.ndarray]

    def copy(self) -> "StrandState":
        return StrandState(self.head.copy(), self.tail.copy(), [p.copy() for p in self.paths])


@dataclass
class ChainState:
    theta: np.ndarray
    sigma: float
    strands: list[StrandState]

    def copy(self) -> "ChainState":
        return ChainState(self.theta.copy(), self.sigma, [s.copy() for s in self.strands])


# --- generic MH steps ------------------------------------------------------------------------


def independence_update(current: float, proposal, log_target: Callable[[float], float], rng, log_target_current=None):
    """One independence-sampler step; returns ``(value, accepted)``."""
    lq_cur = proposal.logpdf(current)
    if lq_cur == -math.inf:
        raise ValueError(f"proposal density vanishes at the current value {current}")
    lt_cur = log_target(current) if log_target_current is None else log_target_current
    cand = float(proposal.sample(rng))
    log_u = math.log(rng.random() or 1e-300)
    lt_cand = log_target(cand)
    if lt_cand == -math.inf:
        return current, False
    ratio = lt_cand - lt_cur + lq_cur - proposal.logpdf(cand)
    if log_u < ratio:
        return cand, True
    return current, False


def random_walk_update(current: float, step: float, log_target, rng, log_target_current=None):
    """Gaussian random-walk Metropolis step; returns ``(value, accepted)``."""
    lt_cur = log_target(current) if log_target_current is None else log_target_current
    cand = current + step * rng.standard_normal()
    log_u = math.log(rng.random() or 1e-300)
    lt_cand = log_target(cand)
    if lt_cand == -math.inf:
        return current, False
    if log_u < lt_cand - lt_cur:
        return cand, True
    return current, False


def conjugate_posterior(F_list, dx_list, dt_list, sigma: float, mu, precision, offset: float = 0.0):
    """Mean and covariance of the Gaussian full conditional of linear drift coefficients.

    ``F_list[k]`` holds the (scaled) basis at the left end of each interval
    of window ``k``, ``dx_list[k]`` the path increments and ``dt_list[k]``
    the interval lengths.
    """
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(precision, dtype=float)
    S = lam @ mu
    L = lam.copy()
    s2 = sigma * sigma
    for F, dx, dt in zip(F_list, dx_list, dt_list):
        S = S + F.T @ (dx - offset * dt) / s2
        L = L + F.T @ (F * dt[:, None]) / s2
    try:
        chol = linalg.cholesky(L, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("conditional precision is not positive definite (degenerate basis on the window)") from exc
    mean = linalg.cho_solve((chol, True), S)
    cov = linalg.cho_solve((chol, True), np.eye(L.shape[0]))
    return mean, cov, chol


def conjugate_theta_update(drift: LinearBasisDrift, theta, windows, sigma: float, mu, precision, rng) -> np.ndarray:
    """Draw the linear coefficients from their Gaussian full conditional.

    ``windows`` is a list of ``(values, dt)`` arrays, one per group, each
    covering that group's window from the time origin.
    """
    F_list, dx_list, dt_list = [], [], []
    for values, dt in windows:
        values = np.asarray(values, dtype=float)
        n = values.shape[0] - 1
        F_list.append(drift.basis_matrix(values[:n], theta))
        dx_list.append(np.diff(values))
        dt_list.append(np.asarray(dt, dtype=float)[:n])
    mean, _, chol = conjugate_posterior(F_list, dx_list, dt_list, sigma, mu, precision, drift.offset)
    z = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(chol.T, z, lower=False)


def reconstruct_path(parametrization: str, drift, theta, sigma: float, latent, x0: float, y_max: float, z=None) -> DiffusionPath:
    """Map a latent object to the diffusion path.

    * centered: ``latent`` is the path itself.
    * pnc: ``latent`` is a path equal to ``X`` up to ``y_max``; beyond it
      ``dX = beta dt + sigma dlatent``.
    * ncp: ``latent`` is :class:`NoiseIncrements`; full Euler recursion from ``x0``.
    """
    if parametrization == "centered":
        return latent
    grid = latent.grid
    bound = bind(drift, theta, z)
    x = np.empty(len(grid))
    if parametrization == "pnc":
        k = grid.index(y_max)
        x[: k + 1] = latent.values[: k + 1]
        dw = np.diff(latent.values)
        euler_fill(x, k, grid.dt, dw, sigma, bound)
    elif parametrization == "ncp":
        x[0] = x0
        euler_fill(x, 0, grid.dt, np.asarray(latent.increments), sigma, bound)
    else:
        raise ValueError(f"unknown parametrization {parametrization!r}")
    return DiffusionPath(grid, x)


# --- sampler ---------------------------------------------------------------------------------


def _unit_bm(dt: np.ndarray, rng) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(np.sqrt(dt) * rng.standard_normal(dt.shape[0]))))


class GibbsSampler:
    """Holds the fixed problem layout; all randomness and state are passed in."""

    def __init__(self, model: ModelInstance, data: SurvivalDataset | None, config: SamplerConfig):
        config.validate()
        if not model.inference_ok:
            raise ValueError(f"model {model.name!r} has an explosive solution and cannot be fitted")
        self.model, self.data, self.config = model, data, config
        self.param = config.parametrization
        if self.param != "ncp" and isinstance(model.x0, StartMap):
            raise ValueError("a parameter-dependent start point needs the ncp parametrization")
        self.strands = build_strands(model, data, config)
        self.conjugate = tuple(model.conjugate) if self.param != "ncp" else ()
        self.mh_params = tuple(p for p in model.param_names if p not in self.conjugate)
        self.proposals = {p: self._proposal_for(p) for p in self.mh_params}
        if self.conjugate:
            self._mu, self._lam = model.conjugate_prior()
            self._conj_idx = [model.param_names.index(n) for n in self.conjugate]
        self.hcode, self.hpar = model.hazard.code, float(model.hazard.rate)
        self.counters = {"path": [0, 0]}
        for p in self.mh_params:
            self.counters[p] = [0, 0]
        if self.conjugate:
            self.counters["theta.conjugate"] = [0, 0]
        if not model.sigma_known:
            self.counters["sigma"] = [0, 0]

    # -- configuration helpers --

    def _proposal_for(self, name: str) -> Proposal:
        prop = self.config.proposals.get(name) or self.model.proposals.get(name)
        if prop is None:
            return Proposal("rw", step=self.config.rw_step)
        if isinstance(prop, str):
            prop = Proposal.parse(prop)
        if prop.kind == "prior":
            blk = self.model.block_of(name)
            if len(blk.names) != 1:
                raise ValueError(f"prior proposal for {name} needs a one-dimensional prior block")
            prop = Proposal("independence", blk.dist)
        return prop

    def _params(self, theta) -> dict[str, float]:
        return self.model.params(theta)

    def _bounds(self, params) -> list[list]:
        return [[bind(self.model.drift, params, c.z) for c in s.cells] for s in self.strands]

    def _x0s(self, params) -> list[list[float]]:
        return [[self.model.x0_for(params, c.z) for c in s.cells] for s in self.strands]

    # -- reconstruction --

    def _head_paths(self, strand: Strand, head: np.ndarray, sigma: float, bounds, x0s) -> list[np.ndarray]:
        """Path values on nodes ``0..iw`` for every cell of the strand."""
        out = []
        for c in range(len(strand.cells)):
            if self.param == "ncp":
                x = np.empty(strand.iw + 1)
                x[0] = x0s[c]
                euler_fill(x, 0, strand.grid.dt, np.diff(head), sigma, bounds[c])
            else:
                x = x0s[c] + sigma * head
            out.append(x)
        return out

    def _fill_tail(self, strand: Strand, st: StrandState, sigma: float, bounds) -> None:
        if strand.iw == strand.n - 1:
            return
        dw = np.diff(st.tail)
        dt = strand.grid.dt[strand.iw :]
        for c, x in enumerate(st.paths):
            euler_fill(x[strand.iw :], 0, dt, dw, sigma, bounds[c])

    def reconstruct(self, state: ChainState) -> None:
        """Recompute every cached path from ``(theta, sigma, latent)``."""
        params = self._params(state.theta)
        bounds, x0s = self._bounds(params), self._x0s(params)
        for s, (strand, st) in enumerate(zip(self.strands, state.strands)):
            heads = self._head_paths(strand, st.head, state.sigma, bounds[s], x0s[s])
            for x, h in zip(st.paths, heads):
                x[: strand.iw + 1] = h
            self._fill_tail(strand, st, state.sigma, bounds[s])

    def initial_state(self, rng, tail_rng) -> ChainState:
        m = self.model
        if self.config.initial_theta is not None:
            p = dict(zip(m.param_names, m.prior_mean().tolist()))
            p.update({k: float(v) for k, v in self.config.initial_theta.items()})
            theta = m.vector(p)
        else:
            theta = m.prior_mean()
        sigma = m.sigma if m.sigma_known else float(m.sigma_prior.mean[0])
        strands = []
        for strand in self.strands:
            dt = strand.grid.dt
            head = _unit_bm(dt[: strand.iw], rng)
            tail = _unit_bm(dt[strand.iw :], tail_rng)
            strands.append(StrandState(head, tail, [np.empty(strand.n) for _ in strand.cells]))
        state = ChainState(theta, float(sigma), strands)
        try:
            self.reconstruct(state)
        except ExplosionError as exc:
            raise ValueError(f"initial path explodes: {exc}") from exc
        return state

    # -- likelihood pieces --

    def _cell_loglik(self, strand: Strand, c: int, x: np.ndarray, lo: int, hi: int) -> float:
        cell = strand.cells[c]
        return kernels.loglik_nodes(x, lo, hi, cell.counts, cell.weights, self.hcode, self.hpar)

    def log_likelihood(self, state: ChainState) -> float:
        total = 0.0
        for strand, st in zip(self.strands, state.strands):
            for c, x in enumerate(st.paths):
                total += self._cell_loglik(strand, c, x, 0, strand.iw + 1)
        return total

    def _girsanov_total(self, state: ChainState, bounds, sigma: float) -> float:
        total = 0.0
        for s, (strand, st) in enumerate(zip(self.strands, state.strands)):
            total += girsanov_array(st.paths[0], strand.grid.dt, 0, strand.iw, sigma, bounds[s][0])
        return total

    # -- parameter updates --

    def theta_update(self, state: ChainState, rng) -> None:
        m = self.model
        if self.conjugate:
            windows = [(st.paths[0][: strand.iw + 1], strand.grid.dt) for strand, st in zip(self.strands, state.strands)]
            draw = conjugate_theta_update(m.drift, state.theta, windows, state.sigma, self._mu, self._lam, rng)
            state.theta[self._conj_idx] = draw
            self.counters["theta.conjugate"][0] += 1
            self.counters["theta.conjugate"][1] += 1
        for name in self.mh_params:
            j = m.param_names.index(name)
            cache = {}

            def target(v, j=j, cache=cache):
                th = state.theta.copy()
                th[j] = v
                lp = log_prior(m, th, None if m.sigma_known else state.sigma)
                if lp == -math.inf:
                    return lp
                val, payload = self._param_target(state, th)
                cache[v] = payload
                return lp + val

            prop = self.proposals[name]
            cur = float(state.theta[j])
            if prop.kind == "rw":
                new, acc = random_walk_update(cur, prop.step, target, rng)
            else:
                new, acc = independence_update(cur, prop.dist, target, rng)
            self.counters[name][1] += 1
            if acc:
                self.counters[name][0] += 1
                state.theta[j] = new
                payload = cache[new]
                if payload is not None:
                    self._install_heads(state, payload)

    def _param_target(self, state: ChainState, theta):
        """Parameter-dependent part of the log posterior with the latent object held fixed."""
        params = self._params(theta)
        bounds = self._bounds(params)
        if self.param != "ncp":
            return self._girsanov_total(state, bounds, state.sigma), None
        return self._ncp_heads(state, params, bounds, state.sigma)

    def _ncp_heads(self, state: ChainState, params, bounds, sigma: float):
        x0s = self._x0s(params)
        heads, total = [], 0.0
        for s, (strand, st) in enumerate(zip(self.strands, state.strands)):
            try:
                hs = self._head_paths(strand, st.head, sigma, bounds[s], x0s[s])
            except ExplosionError:
                return -math.inf, None
            for c, x in enumerate(hs):
                total += self._cell_loglik(strand, c, x, 0, strand.iw + 1)
            heads.append(hs)
        return total, heads

    def _install_heads(self, state: ChainState, heads) -> None:
        for strand, st, hs in zip(self.strands, state.strands, heads):
            for x, h in zip(st.paths, hs):
                x[: strand.iw + 1] = h

    def sigma_update(self, state: ChainState, rng) -> None:
        """Random walk on ``log sigma`` with the driving paths ``U`` held fixed."""
        m = self.model
        if m.sigma_known:
            raise ValueError("sigma_update called on a model with fixed sigma")
        params = self._params(state.theta)
        bounds, x0s = self._bounds(params), self._x0s(params)
        cache = {}

        def target(log_s):
            sigma = math.exp(log_s)
            lp = m.sigma_prior.logpdf(sigma)
            if lp == -math.inf:
                return lp
            total, heads = lp + log_s, []
            for s, (strand, st) in enumerate(zip(self.strands, state.strands)):
                try:
                    hs = self._head_paths(strand, st.head, sigma, bounds[s], x0s[s])
                except ExplosionError:
                    return -math.inf
                for c, x in enumerate(hs):
                    total += self._cell_loglik(strand, c, x, 0, strand.iw + 1)
                if self.param != "ncp":
                    total += girsanov_array(hs[0], strand.grid.dt, 0, strand.iw, sigma, bounds[s][0])
                heads.append(hs)
            cache[log_s] = heads
            return total

        cur = math.log(state.sigma)
        new, acc = random_walk_update(cur, self.config.sigma_step, target, rng)
        self.counters["sigma"][1] += 1
        if acc:
            self.counters["sigma"][0] += 1
            state.sigma = math.exp(new)
            self._install_heads(state, cache[new])

    # -- path updates --

    def propose_segment(self, strand: Strand, st: StrandState, block, rng) -> np.ndarray:
        """Unit-scale proposal on the block: a bridge pinned at both ends, or free at the right end."""
        lo, hi, free = block
        L = hi - lo
        seg = np.empty(L + 1)
        seg[0] = st.head[lo]
        dt = strand.grid.dt
        if free:
            seg[1:] = seg[0] + np.cumsum(np.sqrt(dt[lo:hi]) * rng.standard_normal(L))
        else:
            seg[-1] = st.head[hi]
            kernels.bridge_fill(seg, 0, L, strand.t[lo : hi + 1], 1.0, rng.standard_normal(L - 1))
        return seg

    def segment_log_ratio(self, state: ChainState, s: int, block, seg: np.ndarray, bounds=None, x0s=None):
        """Log acceptance ratio for replacing the block's latent values by ``seg``.

        Returns ``(log_ratio, new_values)`` where ``new_values`` are the
        per-cell path values to install from the block's left node onward.
        """
        strand, st = self.strands[s], state.strands[s]
        lo, hi, free = block
        L = hi - lo
        sigma = state.sigma
        if bounds is None:
            params = self._params(state.theta)
            bounds, x0s = self._bounds(params)[s], self._x0s(params)[s]
        dt = strand.grid.dt
        cells = range(len(strand.cells))
        if self.param != "ncp":
            x_old = st.paths[0][lo : hi + 1]
            x_new = x0s[0] + sigma * seg
            end = L + 1 if free else L
            dts = dt[lo:hi]
            lr = girsanov_array(x_new, dts, 0, L, sigma, bounds[0]) - girsanov_array(x_old, dts, 0, L, sigma, bounds[0])
            cell = strand.cells[0]
            lr += kernels.loglik_nodes(x_new, 1, end, cell.counts[lo:], cell.weights[lo:], self.hcode, self.hpar)
            lr -= kernels.loglik_nodes(x_old, 1, end, cell.counts[lo:], cell.weights[lo:], self.hcode, self.hpar)
            return lr, [x_new]
        head = st.head[lo : strand.iw + 1].copy()
        head[: L + 1] = seg
        dw = np.diff(head)
        lr, new = 0.0, []
        for c in cells:
            x_old = st.paths[c][lo : strand.iw + 1]
            x_new = np.empty_like(x_old)
            x_new[0] = x_old[0]
            try:
                euler_fill(x_new, 0, dt[lo:], dw, sigma, bounds[c])
            except ExplosionError:
                return -math.inf, None
            cell = strand.cells[c]
            n = x_new.shape[0]
            lr += kernels.loglik_nodes(x_new, 1, n, cell.counts[lo:], cell.weights[lo:], self.hcode, self.hpar)
            lr -= kernels.loglik_nodes(x_old, 1, n, cell.counts[lo:], cell.weights[lo:], self.hcode, self.hpar)
            new.append(x_new)
        return lr, new

    def apply_segment(self, state: ChainState, s: int, block, seg: np.ndarray, new_values) -> None:
        st = state.strands[s]
        lo, hi, _ = block
        st.head[lo : hi + 1] = seg
        for x, v in zip(st.paths, new_values):
            x[lo : lo + v.shape[0]] = v

    def block_update(self, state: ChainState, s: int, block, rng, bounds=None, x0s=None) -> bool:
        seg = self.propose_segment(self.strands[s], state.strands[s], block, rng)
        log_u = math.log(rng.random() or 1e-300)
        lr, new = self.segment_log_ratio(state, s, block, seg, bounds, x0s)
        self.counters["path"][1] += 1
        if log_u < lr:
            self.apply_segment(state, s, block, seg, new)
            self.counters["path"][0] += 1
            return True
        return False

    def sweep(self, state: ChainState, rng) -> int:
        params = self._params(state.theta)
        bounds, x0s = self._bounds(params), self._x0s(params)
        accepted = 0
        for s, strand in enumerate(self.strands):
            for block in strand.blocks:
                accepted += self.block_update(state, s, block, rng, bounds[s], x0s[s])
        return accepted

    def tail_update(self, state: ChainState, tail_rng) -> None:
        """Exact draw of the tail driving paths (the posterior there is the prior)."""
        params = self._params(state.theta)
        bounds = self._bounds(params)
        for s, (strand, st) in enumerate(zip(self.strands, state.strands)):
            if strand.iw < strand.n - 1:
                st.tail = _unit_bm(strand.grid.dt[strand.iw :], tail_rng)
            try:
                self._fill_tail(strand, st, state.sigma, bounds[s])
            except ExplosionError:
                st.paths = [np.where(np.isfinite(x), x, np.nan) for x in st.paths]

    # -- public views --

    def paths(self, state: ChainState) -> dict[str, DiffusionPath]:
        out = {}
        for strand, st in zip(self.strands, state.strands):
            for cell, x in zip(strand.cells, st.paths):
                out[cell.label] = DiffusionPath(strand.grid, x)
        return out

    def curve_labels(self) -> list[str]:
        return [c.label for s in self.strands for c in s.cells]

    def curve_times(self) -> dict[str, np.ndarray]:
        return {c.label: s.grid.nodes[s.out_idx] for s in self.strands for c in s.cells}

    def curves(self, state: ChainState) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Survival, hazard and density on the output nodes of every cell."""
        out = {}
        for strand, st in zip(self.strands, state.strands):
            dt = strand.grid.dt
            for cell, x in zip(strand.cells, st.paths):
                h = kernels.hazard_eval(self.hcode, self.hpar, x)
                lam = np.concatenate(([0.0], np.cumsum(h[:-1] * dt)))
                surv = np.exp(-lam)
                idx = strand.out_idx
                out[cell.label] = (surv[idx], h[idx], h[idx] * surv[idx])
        return out


FUNCTIONALS = ("survival", "hazard", "density")


@dataclass
class Trace:
    param_names: tuple[str, ...]
    iterations: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray | None
    loglik: np.ndarray
    curve_times: dict[str, np.ndarray]
    curves: dict[str, dict[str, np.ndarray]]
    acceptance: dict[str, tuple[int, int]]
    final_state: ChainState | None = None
    seed: int = 0

    def __len__(self):
        return self.theta.shape[0]

    def column(self, name: str) -> np.ndarray:
        if name == "sigma":
            if self.sigma is None:
                raise KeyError("sigma is fixed in this model")
            return self.sigma
        return self.theta[:, self.param_names.index(name)]

    def acceptance_rates(self) -> dict[str, float]:
        return {k: (a / n if n else math.nan) for k, (a, n) in self.acceptance.items()}


def run_chain(
    model: ModelInstance,
    data: SurvivalDataset | None,
    config: SamplerConfig,
    callback: Callable[[int, GibbsSampler, ChainState], None] | None = None,
) -> Trace:
    """Run the Gibbs sampler; fully determined by ``config.seed``.

    Each iteration updates the drift parameters (conjugate block, then
    Metropolis-Hastings steps), sigma if unknown, sweeps the path blocks of
    every strand and redraws the tails beyond the data windows. ``callback``
    is invoked after every iteration with ``(iteration, sampler, state)``.
    """
    sampler = GibbsSampler(model, data, config)
    main_ss, tail_ss = np.random.SeedSequence(int(config.seed)).spawn(2)
    rng, tail_rng = np.random.default_rng(main_ss), np.random.default_rng(tail_ss)
    state = sampler.initial_state(rng, tail_rng)

    n_keep = config.retained
    theta = np.empty((n_keep, model.d))
    sigma = None if model.sigma_known else np.empty(n_keep)
    loglik = np.empty(n_keep)
    iters = np.empty(n_keep, dtype=np.int64)
    labels = sampler.curve_labels()
    times = sampler.curve_times()
    curves = {
        lab: {f: np.empty((n_keep if config.record_curves else 0, times[lab].shape[0])) for f in FUNCTIONALS}
        for lab in labels
    }
    k = 0
    for it in range(config.iterations):
        sampler.theta_update(state, rng)
        if not model.sigma_known:
            sampler.sigma_update(state, rng)
        sampler.sweep(state, rng)
        sampler.tail_update(state, tail_rng)
        if callback is not None:
            callback(it, sampler, state)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            theta[k] = state.theta
            if sigma is not None:
                sigma[k] = state.sigma
            loglik[k] = sampler.log_likelihood(state)
            iters[k] = it
            if config.record_curves:
                for lab, vals in sampler.curves(state).items():
                    for f, v in zip(FUNCTIONALS, vals):
                        curves[lab][f][k] = v
            k += 1
    return Trace(
        param_names=model.param_names,
        iterations=iters,
        theta=theta,
        sigma=sigma,
        loglik=loglik,
        curve_times=times,
        curves=curves,
        acceptance={k_: tuple(v) for k_, v in sampler.counters.items()},
        final_state=state,
        seed=int(config.seed),
    )
