"""Hazards of a latent path, censored likelihoods, survival curves, event simulation, Kaplan-Meier."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .paths import DiffusionPath, TimeGrid

HAZARD_CODES = {
    "abs": kernels.H_ABS,
    "square": kernels.H_SQUARE,
    "identity": kernels.H_POSITIVE,
    "exp": kernels.H_EXP,
}


@dataclass(frozen=True)
class HazardSpec:
    """Hazard function ``h(u) >= 0`` applied to the latent state.

    ``identity`` is the positive part ``max(u, 0)``; it coincides with the
    identity on the positive half-line where it is meant to be used. ``exp``
    is ``exp(rate * u)``.
    """

    kind: str
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in HAZARD_CODES:
            raise ValueError(f"unknown hazard kind {self.kind!r}")

    @property
    def code(self) -> int:
        return HAZARD_CODES[self.kind]

    def __call__(self, u):
        return kernels.hazard_eval(self.code, float(self.rate), np.asarray(u, dtype=float))


ABS = HazardSpec("abs")
SQUARE = HazardSpec("square")
IDENTITY = HazardSpec("identity")


@dataclass(frozen=True)
class Observation:
    time: float
    event: bool
    group: str | None = None
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time > 0):
            raise ValueError(f"observation time must be positive and finite, got {self.time!r}")


@dataclass(frozen=True)
class SurvivalDataset:
    observations: tuple[Observation, ...]
    time_unit: str = ""

    def __post_init__(self):
        obs = tuple(self.observations)
        if not obs:
            raise ValueError("a dataset needs at least one observation")
        object.__setattr__(self, "observations", obs)

    @classmethod
    def from_arrays(cls, times, events, groups=None, covariates=None, time_unit=""):
        times = np.asarray(times, dtype=float)
        events = np.asarray(events, dtype=bool)
        n = times.shape[0]
        groups = [None] * n if groups is None else list(groups)
        covs = [{} for _ in range(n)] if covariates is None else list(covariates)
        return cls(
            tuple(Observation(float(t), bool(e), g, dict(c)) for t, e, g, c in zip(times, events, groups, covs)),
            time_unit,
        )

    def __len__(self):
        return len(self.observations)

    @property
    def times(self) -> np.ndarray:
        return np.array([o.time for o in self.observations])

    @property
    def events(self) -> np.ndarray:
        return np.array([o.event for o in self.observations], dtype=bool)

    @property
    def y_max(self) -> float:
        return float(self.times.max())

    @property
    def group_labels(self) -> list:
        seen = []
        for o in self.observations:
            if o.group not in seen:
                seen.append(o.group)
        return seen

    @property
    def covariate_names(self) -> list[str]:
        names: list[str] = []
        for o in self.observations:
            for k in o.covariates:
                if k not in names:
                    names.append(k)
        return names

    def by_group(self) -> dict:
        return {g: self.subset(lambda o, g=g: o.group == g) for g in self.group_labels}

    def subset(self, pred) -> "SurvivalDataset":
        return SurvivalDataset(tuple(o for o in self.observations if pred(o)), self.time_unit)

    def pooled(self) -> "SurvivalDataset":
        """Same observations with group labels dropped."""
        return SurvivalDataset(
            tuple(Observation(o.time, o.event, None, o.covariates) for o in self.observations), self.time_unit
        )

    def rescaled(self, divisor: float, time_unit: str = "") -> "SurvivalDataset":
        return SurvivalDataset(
            tuple(Observation(o.time / divisor, o.event, o.group, o.covariates) for o in self.observations),
            time_unit or self.time_unit,
        )


# --- path functionals ------------------------------------------------------------------------


def cumulative_hazard_values(values: np.ndarray, dt: np.ndarray, h: HazardSpec) -> np.ndarray:
    """Left-Riemann cumulative hazard at every node (0 at the first node)."""
    inc = h(values[:-1]) * dt
    return np.concatenate(([0.0], np.cumsum(inc)))


def cumulative_hazard(path: DiffusionPath, h: HazardSpec, t: float) -> float:
    k = path.grid.index(t)
    return float(np.sum(h(path.values[:k]) * path.grid.dt[:k]))


def _check_span(data: SurvivalDataset, path: DiffusionPath):
    if path.grid.end < data.y_max - path.grid._tol():
        raise ValueError("path does not cover the largest observation time")


def log_likelihood(data: SurvivalDataset, path: DiffusionPath, h: HazardSpec) -> float:
    """``sum_events log h(x_y) - sum_all Lambda(y)``; ``-inf`` if ``h`` vanishes at an event."""
    _check_span(data, path)
    lam = cumulative_hazard_values(path.values, path.grid.dt, h)
    idx = path.grid.indices(data.times)
    ev = data.events
    hv = h(path.values[idx[ev]])
    if np.any(hv <= 0):
        return -math.inf
    return float(np.sum(np.log(hv)) - np.sum(lam[idx]))


def likelihood_weights(grid: TimeGrid, times, events) -> tuple[np.ndarray, np.ndarray]:
    """Per-node event counts and interval weights ``dt_k * #{y >= t_{k+1}}``.

    With these, ``log L = sum_n E_n log h(x_n) - sum_n w_n h(x_n)``, which is
    the censored likelihood in a form whose change under a local path edit
    only involves the edited nodes.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    n = len(grid)
    counts = np.zeros(n, dtype=np.int_)
    weights = np.zeros(n)
    if times.size == 0:
        return counts, weights
    idx = grid.indices(times)
    np.add.at(counts, idx[events], 1)
    per_node = np.bincount(idx, minlength=n)
    # number of observations at or beyond node k+1
    beyond = np.cumsum(per_node[::-1])[::-1]
    weights[:-1] = grid.dt * beyond[1:]
    return counts, weights


@dataclass(frozen=True)
class Curve:
    times: np.ndarray
    values: np.ndarray


def _curve_nodes(path: DiffusionPath, grid: TimeGrid | None) -> np.ndarray:
    if grid is None:
        return np.arange(len(path.grid))
    return path.grid.indices(grid.nodes)


def survival_curve(path: DiffusionPath, h: HazardSpec, grid: TimeGrid | None = None) -> Curve:
    idx = _curve_nodes(path, grid)
    lam = cumulative_hazard_values(path.values, path.grid.dt, h)
    return Curve(path.grid.nodes[idx], np.exp(-lam[idx]))


def hazard_curve(path: DiffusionPath, h: HazardSpec, grid: TimeGrid | None = None) -> Curve:
    idx = _curve_nodes(path, grid)
    return Curve(path.grid.nodes[idx], h(path.values[idx]))


def density_curve(path: DiffusionPath, h: HazardSpec, grid: TimeGrid | None = None) -> Curve:
    s = survival_curve(path, h, grid)
    hz = hazard_curve(path, h, grid)
    return Curve(s.times, hz.values * s.values)


@dataclass(frozen=True)
class EventDraw:
    time: float
    event: bool


def sample_event_time(
    path: DiffusionPath, h: HazardSpec, horizon: float, rng: np.random.Generator | None = None, barrier: float | None = None
) -> EventDraw:
    """First time the cumulative hazard exceeds an Exp(1) barrier; censored at ``horizon``.

    Inside the crossing interval the (piecewise-linear) cumulative hazard is
    inverted exactly.
    """
    k_end = path.grid.index(horizon)
    if barrier is None:
        barrier = rng.exponential(1.0)
    lam = cumulative_hazard_values(path.values[: k_end + 1], path.grid.dt[:k_end], h)
    if lam[-1] < barrier:
        return EventDraw(float(path.grid.nodes[k_end]), False)
    k = int(np.searchsorted(lam, barrier, side="left"))
    if k == 0:
        return EventDraw(float(path.grid.nodes[0]), True)
    t0, t1 = path.grid.nodes[k - 1], path.grid.nodes[k]
    frac = (barrier - lam[k - 1]) / (lam[k] - lam[k - 1])
    return EventDraw(float(t0 + frac * (t1 - t0)), True)


def simulate_survival_times(
    path: DiffusionPath, h: HazardSpec, n: int, censor: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """``n`` i.i.d. event times from the path's random distribution, censored at ``censor``."""
    draws = [sample_event_time(path, h, censor, rng) for _ in range(n)]
    return np.array([d.time for d in draws]), np.array([d.event for d in draws], dtype=bool)


# --- Kaplan-Meier --------------------------------------------------------------------------


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function: ``survival[i]`` holds on ``[times[i], times[i+1])``."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    deaths: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.times, t, side="right") - 1
        s = np.where(i >= 0, self.survival[np.clip(i, 0, None)], 1.0)
        return s if s.ndim else float(s)


def kaplan_meier(data: SurvivalDataset | tuple) -> StepCurve:
    """Product-limit estimator. Deaths are counted before censorings at tied times."""
    if isinstance(data, SurvivalDataset):
        times, events = data.times, data.events
    else:
        times, events = (np.asarray(a) for a in data)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if times.size == 0:
        raise ValueError("Kaplan-Meier needs at least one observation")
    death_times = np.unique(times[events])
    at_risk = np.array([np.sum(times >= t) for t in death_times])
    deaths = np.array([np.sum((times == t) & events) for t in death_times])
    surv = np.cumprod(1.0 - deaths / at_risk)
    return StepCurve(
        np.concatenate(([0.0], death_times)),
        np.concatenate(([1.0], surv)),
        np.concatenate(([times.size], at_risk)),
        np.concatenate(([0], deaths)),
    )
