"""Posterior curve summaries, chain diagnostics and prior Monte Carlo Bayes factors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .drift import BASIS_CODES, CovariateScaledDrift, LinearBasisDrift
from .mcmc import SamplerConfig, build_strands
from .models import ModelInstance
from .survival import SurvivalDataset


def pointwise_hpd_band(draws, level: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    """Shortest window of ``ceil(level*N)`` sorted draws at each node.

    ``draws`` has one row per draw and one column per node (a 1-D array is
    one node). Ties go to the lowest starting index.
    """
    a = np.asarray(draws, dtype=float)
    one = a.ndim == 1
    if one:
        a = a[:, None]
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    n = a.shape[0]
    if n < 20:
        raise ValueError(f"need at least 20 draws per node, got {n}")
    k = int(math.ceil(level * n - 1e-12))
    s = np.sort(a, axis=0)
    widths = s[k - 1 :] - s[: n - k + 1]
    start = np.argmin(widths, axis=0)  # first minimum
    cols = np.arange(a.shape[1])
    lo, hi = s[start, cols], s[start + k - 1, cols]
    return (lo[0], hi[0]) if one else (lo, hi)


@dataclass(frozen=True)
class Diagnostics:
    acf: np.ndarray
    ess: float
    iat: float
    n: int
    constant: bool = False
    acceptance: dict = field(default_factory=dict)


def autocorrelation(x, max_lag: int | None = None) -> np.ndarray:
    """Sample ACF (biased normalisation) via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    max_lag = n - 1 if max_lag is None else max_lag
    d = x - x.mean()
    f = np.fft.rfft(d, n=2 * n)
    acov = np.fft.irfft(f * np.conjugate(f))[: max_lag + 1] / n
    return acov / acov[0]


def acf_ess(series, max_lag: int = 100) -> Diagnostics:
    """ACF up to ``max_lag``, Geyer initial-positive-sequence ESS, and IAT = N/ESS."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n <= max_lag:
        raise ValueError(f"series length {n} must exceed max_lag {max_lag}")
    if np.ptp(x) == 0:
        acf = np.full(max_lag + 1, np.nan)
        acf[0] = 1.0
        return Diagnostics(acf, float(n), 1.0, n, constant=True)
    rho = autocorrelation(x)
    # Geyer: sum consecutive pairs while positive
    total = 0.0
    for m in range(0, (n - 1) // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        total += pair
    tau = max(2.0 * float(total) - 1.0, 1.0 / n)
    ess = min(n / tau, float(n))
    return Diagnostics(rho[: max_lag + 1], ess, n / ess, n)


@dataclass(frozen=True)
class CurveEstimate:
    times: np.ndarray
    mean: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    level: float = 0.9


def curve_posterior_mean(draws, times=None, level: float = 0.9) -> CurveEstimate:
    """Nodewise mean and HPD band of curve draws (rows are draws).

    With fewer than 20 draws the band falls back to the draw range.
    """
    if isinstance(draws, (list, tuple)):
        lengths = {len(d) for d in draws}
        if len(lengths) > 1:
            raise ValueError("curve draws live on different grids")
    a = np.asarray(draws, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[0] == 0:
        raise ValueError("no curve draws")
    if times is not None and len(times) != a.shape[1]:
        raise ValueError("times do not match the curve grid")
    mean = a.mean(axis=0)
    if a.shape[0] >= 20:
        lo, hi = pointwise_hpd_band(a, level)
    else:
        lo, hi = a.min(axis=0), a.max(axis=0)
    t = np.arange(a.shape[1], dtype=float) if times is None else np.asarray(times, dtype=float)
    return CurveEstimate(t, mean, lo, hi, level)


# --- Bayes factors ---------------------------------------------------------------------------


def _batch_basis(kind: str, x: np.ndarray, p) -> np.ndarray:
    code = BASIS_CODES[kind]
    if kind == "const":
        return np.ones_like(x)
    if kind == "identity":
        return x
    if kind == "sin":
        return np.sin(x)
    if kind == "signpow":
        return np.sign(x) * np.abs(x) ** p
    if kind == "exp":
        return np.exp(p * x)
    if kind == "square":
        return x * x
    raise ValueError(f"unsupported basis code {code}")


class _BatchDrift:
    """Drift evaluated for many parameter draws at once (one per row)."""

    def __init__(self, model: ModelInstance, theta: np.ndarray, z):
        p = {n: theta[:, j] for j, n in enumerate(model.param_names)}
        drift = model.drift
        self.terms = []
        if isinstance(drift, LinearBasisDrift):
            self.offset = drift.offset
            for t, name in zip(drift.terms, drift.linear_names):
                power = p[t.power] if isinstance(t.power, str) else t.power
                self.terms.append((t.kind, t.scale * p[name], power))
        elif isinstance(drift, CovariateScaledDrift):
            self.offset = 0.0
            eta = p[drift.intercept].copy()
            for cov, name in drift.slopes.items():
                eta += p[name] * (float((z or {}).get(cov, 0.0)) - drift.centres[cov])
            t = drift.term
            power = p[t.power] if isinstance(t.power, str) else t.power
            self.terms.append((t.kind, t.scale * np.exp(eta), power))
        else:
            raise ValueError("prior Monte Carlo needs a basis or covariate drift")

    def __call__(self, x):
        out = np.full_like(x, self.offset)
        for kind, w, p in self.terms:
            out += w * _batch_basis(kind, x, p)
        return out


def _batch_x0(model: ModelInstance, theta: np.ndarray, z) -> np.ndarray:
    if isinstance(model.x0, (int, float)):
        return np.full(theta.shape[0], float(model.x0))
    return np.array([model.x0_for(model.params(row), z) for row in theta])


def _batch_hazard(model: ModelInstance, x: np.ndarray) -> np.ndarray:
    kind, rate = model.hazard.kind, model.hazard.rate
    if kind == "abs":
        return np.abs(x)
    if kind == "square":
        return x * x
    if kind == "identity":
        return np.maximum(x, 0.0)
    return np.exp(rate * x)


def prior_loglik_samples(model: ModelInstance, data: SurvivalDataset, n_samples: int, rng, dt: float = 0.01, batch: int = 2000) -> np.ndarray:
    """Data log-likelihood under ``n_samples`` joint prior draws of (parameters, sigma, paths).

    Paths are simulated by vectorised Euler-Maruyama over the grid used by
    the sampler (up to each group's largest observation time). Draws whose
    path leaves the reals get likelihood 0.
    """
    cfg = SamplerConfig(iterations=0, burn_in=0, dt=dt, block_length=2 * dt, parametrization="ncp" if model.covariates else "pnc")
    strands = build_strands(model, data, cfg)
    out = np.empty(n_samples)
    done = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while done < n_samples:
            b = min(batch, n_samples - done)
            theta = model.sample_prior(rng, b)
            sigma = np.full(b, model.sigma) if model.sigma_known else model.sigma_prior.sample(rng, b)
            ll = np.zeros(b)
            for strand in strands:
                dts = strand.grid.dt[: strand.iw]
                noise = rng.standard_normal((b, strand.iw)) * np.sqrt(dts)
                for cell in strand.cells:
                    drift = _BatchDrift(model, theta, cell.z)
                    x = _batch_x0(model, theta, cell.z)
                    acc = np.zeros(b)
                    for k in range(strand.iw + 1):
                        if cell.counts[k] or cell.weights[k]:
                            h = _batch_hazard(model, x)
                            acc -= cell.weights[k] * h
                            if cell.counts[k]:
                                acc += cell.counts[k] * np.log(h)
                        if k < strand.iw:
                            x = x + drift(x) * dts[k] + sigma * noise[:, k]
                    ll += acc
            ll[~np.isfinite(ll)] = -np.inf
            out[done : done + b] = ll
            done += b
    return out


@dataclass(frozen=True)
class MarginalEstimate:
    log_z: float
    se: float
    n: int
    n_finite: int
    weight_ess: float


def _log_mean_exp(ll: np.ndarray) -> MarginalEstimate:
    n = ll.shape[0]
    finite = np.isfinite(ll)
    if not finite.any():
        return MarginalEstimate(-math.inf, math.inf, n, 0, 0.0)
    log_z = float(special.logsumexp(ll) - math.log(n))
    w = np.exp(ll - ll[finite].max())
    # delta method: var(log mean w) ~ var(w) / (n mean(w)^2)
    se = float(np.std(w, ddof=1) / (math.sqrt(n) * w.mean())) if n > 1 else math.inf
    ess = float(w.sum() ** 2 / np.sum(w * w))
    return MarginalEstimate(log_z, se, n, int(finite.sum()), ess)


@dataclass(frozen=True)
class BayesFactor:
    bf: float
    log_bf: float
    se_log_bf: float
    model_1: MarginalEstimate
    model_2: MarginalEstimate
    ok: bool = True
    message: str = ""


def bayes_factor_prior_mc(
    model_1: ModelInstance, model_2: ModelInstance, data: SurvivalDataset, n_samples: int, seed=0, dt: float = 0.01
) -> BayesFactor:
    """``p(data | M1) / p(data | M2)`` by plain Monte Carlo over each model's prior.

    Both marginal likelihoods are estimated from generators built from the
    same ``seed`` so that identical models give a Bayes factor of exactly 1.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 prior samples")
    est = []
    for m in (model_1, model_2):
        rng = np.random.default_rng(seed)
        est.append(_log_mean_exp(prior_loglik_samples(m, data, n_samples, rng, dt)))
    e1, e2 = est
    if e1.n_finite == 0 or e2.n_finite == 0:
        bad = [i + 1 for i, e in enumerate(est) if e.n_finite == 0]
        return BayesFactor(math.nan, math.nan, math.nan, e1, e2, ok=False,
                           message=f"every prior draw gave zero likelihood under model(s) {bad}")
    log_bf = e1.log_z - e2.log_z
    return BayesFactor(math.exp(log_bf), log_bf, math.hypot(e1.se, e2.se), e1, e2)
