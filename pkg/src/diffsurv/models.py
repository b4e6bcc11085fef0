"""Priors, model instances and the built-in latent diffusion survival models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .drift import BasisTerm, CovariateScaledDrift, DriftSpec, LinearBasisDrift
from .survival import ABS, HazardSpec, IDENTITY, SQUARE, SurvivalDataset

# --- distributions ---------------------------------------------------------------------------

_LOG2PI = math.log(2.0 * math.pi)


class Gaussian:
    """Multivariate normal parametrised by mean vector and precision matrix."""

    def __init__(self, mean, precision):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.precision = np.atleast_2d(np.asarray(precision, dtype=float))
        d = self.mean.shape[0]
        if self.precision.shape != (d, d):
            raise ValueError("precision must be d x d")
        if not np.allclose(self.precision, self.precision.T):
            raise ValueError("precision must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.precision)
        except np.linalg.LinAlgError as exc:
            raise ValueError("precision must be positive definite") from exc
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    @classmethod
    def from_variance(cls, mean, variance):
        """Independent components with the given variances."""
        var = np.atleast_1d(np.asarray(variance, dtype=float))
        mean = np.broadcast_to(np.atleast_1d(np.asarray(mean, dtype=float)), var.shape)
        return cls(mean, np.diag(1.0 / var))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> float:
        r = np.atleast_1d(np.asarray(x, dtype=float)) - self.mean
        return float(0.5 * self._logdet - 0.5 * self.dim * _LOG2PI - 0.5 * r @ self.precision @ r)

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        z = rng.standard_normal((n, self.dim))
        # precision = L L^T  =>  x = mean + L^{-T} z
        x = self.mean + np.linalg.solve(self._chol.T, z.T).T
        return x[0] if size is None else x


class Uniform:
    def __init__(self, a: float, b: float):
        if not a < b:
            raise ValueError("uniform needs a < b")
        self.a, self.b = float(a), float(b)
        self.dim = 1
        self.mean = np.array([(self.a + self.b) / 2])

    def logpdf(self, x) -> float:
        x = float(np.asarray(x).reshape(-1)[0])
        return -math.log(self.b - self.a) if self.a <= x <= self.b else -math.inf

    def sample(self, rng, size=None):
        return rng.uniform(self.a, self.b, size=size)

    @property
    def support(self):
        return (self.a, self.b)


class Exponential:
    def __init__(self, mean: float):
        if not mean > 0:
            raise ValueError("exponential mean must be positive")
        self.scale = float(mean)
        self.dim = 1
        self.mean = np.array([self.scale])

    def logpdf(self, x) -> float:
        x = float(np.asarray(x).reshape(-1)[0])
        return -math.log(self.scale) - x / self.scale if x >= 0 else -math.inf

    def sample(self, rng, size=None):
        return rng.exponential(self.scale, size=size)


class Beta:
    def __init__(self, a: float, b: float):
        if not (a > 0 and b > 0):
            raise ValueError("beta parameters must be positive")
        self.a, self.b = float(a), float(b)
        self.dim = 1
        self.mean = np.array([self.a / (self.a + self.b)])
        self._lognorm = float(special.betaln(self.a, self.b))

    def logpdf(self, x) -> float:
        x = float(np.asarray(x).reshape(-1)[0])
        if not 0.0 < x < 1.0:
            return -math.inf
        return (self.a - 1) * math.log(x) + (self.b - 1) * math.log1p(-x) - self._lognorm

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size=size)


@dataclass(frozen=True)
class PriorBlock:
    """A prior over one or more named parameters."""

    names: tuple[str, ...]
    dist: object

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != self.dist.dim:
            raise ValueError(f"prior over {self.names} has dimension {self.dist.dim}")


@dataclass(frozen=True)
class Proposal:
    """Metropolis-Hastings proposal for one scalar parameter.

    ``kind`` is ``"independence"`` (draw from ``dist``), ``"prior"``
    (independence sampler using the parameter's prior) or ``"rw"`` (Gaussian
    random walk with standard deviation ``step``).
    """

    kind: str
    dist: object = None
    step: float = 0.1

    @classmethod
    def parse(cls, text: str) -> "Proposal":
        """``"beta:0.5,0.5"``, ``"prior"`` or ``"rw:0.2"``."""
        kind, _, args = text.strip().partition(":")
        kind = kind.lower()
        if kind == "prior":
            return cls("prior")
        if kind == "rw":
            return cls("rw", step=float(args) if args else 0.1)
        if kind == "beta":
            a, b = (float(v) for v in args.split(","))
            return cls("independence", dist=Beta(a, b))
        if kind == "uniform":
            a, b = (float(v) for v in args.split(","))
            return cls("independence", dist=Uniform(a, b))
        raise ValueError(f"unknown proposal {text!r}")


# --- covariates ------------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateModelSpec:
    """Covariate cells and the centring shares used by the intercept reparametrisation.

    ``start`` covariates act on the log starting point, ``drift`` covariates
    on the log drift scale. ``centres`` holds the sample mean of each
    covariate (for 0/1 covariates: the share of ones).
    """

    names: tuple[str, ...]
    start: tuple[str, ...]
    drift: tuple[str, ...]
    centres: Mapping[str, float]
    cells: tuple[tuple[float, ...], ...]

    @classmethod
    def from_dataset(cls, data: SurvivalDataset, start: Sequence[str], drift: Sequence[str]) -> "CovariateModelSpec":
        names = tuple(dict.fromkeys([*start, *drift]))
        for o in data.observations:
            missing = [c for c in names if c not in o.covariates]
            if missing:
                raise ValueError(f"observation at time {o.time} lacks covariates {missing}")
        z = np.array([[o.covariates[c] for c in names] for o in data.observations], dtype=float)
        centres = {c: float(z[:, j].mean()) for j, c in enumerate(names)}
        cells = tuple(sorted({tuple(row) for row in z.tolist()}))
        return cls(names, tuple(start), tuple(drift), centres, cells)

    def cell_of(self, covariates: Mapping[str, float]) -> int:
        key = tuple(float(covariates[c]) for c in self.names)
        try:
            return self.cells.index(key)
        except ValueError:
            raise ValueError(f"covariates {dict(covariates)} match no cell") from None

    def cell_dict(self, k: int) -> dict[str, float]:
        return dict(zip(self.names, self.cells[k]))

    def cell_label(self, k: int) -> str:
        return ",".join(f"{c}={v:g}" for c, v in zip(self.names, self.cells[k]))


@dataclass(frozen=True)
class StartMap:
    """``x0(z) = exp(intercept + sum_c slope_c (z_c - centre_c))``."""

    intercept: str
    slopes: Mapping[str, str]
    centres: Mapping[str, float]

    def __call__(self, params: Mapping[str, float], z: Mapping[str, float] | None) -> float:
        z = z or {}
        eta = params[self.intercept]
        for cov, name in self.slopes.items():
            eta += params[name] * (float(z.get(cov, 0.0)) - self.centres[cov])
        return math.exp(eta)


# --- model instance --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelInstance:
    """A fully specified latent diffusion survival model."""

    name: str
    drift: DriftSpec
    hazard: HazardSpec
    param_names: tuple[str, ...]
    priors: tuple[PriorBlock, ...]
    sigma: float | None = 1.0
    sigma_prior: object = None
    x0: float | StartMap = 0.0
    origin: float = 0.0
    conjugate: tuple[str, ...] = ()
    proposals: Mapping[str, Proposal] = field(default_factory=dict)
    covariates: CovariateModelSpec | None = None
    pool_groups: bool = False
    inference_ok: bool = True

    def __post_init__(self):
        covered = [n for b in self.priors for n in b.names]
        if sorted(covered) != sorted(self.param_names):
            raise ValueError(f"priors cover {covered}, parameters are {self.param_names}")
        if self.sigma is None and self.sigma_prior is None:
            raise ValueError("unknown sigma needs a prior")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.conjugate:
            if not isinstance(self.drift, LinearBasisDrift) or tuple(self.conjugate) != self.drift.linear_names:
                raise ValueError("conjugate block must be the linear drift coefficients")
            for n in self.conjugate:
                blk = self.block_of(n)
                if not isinstance(blk.dist, Gaussian) or not set(blk.names) <= set(self.conjugate):
                    raise ValueError(f"conjugate parameter {n} needs a Gaussian prior over linear coefficients only")

    @property
    def d(self) -> int:
        return len(self.param_names)

    @property
    def sigma_known(self) -> bool:
        return self.sigma is not None

    def block_of(self, name: str) -> PriorBlock:
        for b in self.priors:
            if name in b.names:
                return b
        raise KeyError(name)

    def params(self, theta) -> dict[str, float]:
        if isinstance(theta, Mapping):
            return {n: float(theta[n]) for n in self.param_names}
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape[0] != self.d:
            raise ValueError(f"expected {self.d} parameters, got {theta.shape[0]}")
        return dict(zip(self.param_names, theta.tolist()))

    def vector(self, params: Mapping[str, float]) -> np.ndarray:
        return np.array([float(params[n]) for n in self.param_names])

    def x0_for(self, params: Mapping[str, float], z=None) -> float:
        if isinstance(self.x0, StartMap):
            return self.x0(params, z)
        return float(self.x0)

    def prior_mean(self) -> np.ndarray:
        p = {}
        for b in self.priors:
            p.update(zip(b.names, np.atleast_1d(b.dist.mean).tolist()))
        return self.vector(p)

    def sample_prior(self, rng, size: int) -> np.ndarray:
        out = np.empty((size, self.d))
        for b in self.priors:
            draw = np.asarray(b.dist.sample(rng, size), dtype=float).reshape(size, -1)
            for j, n in enumerate(b.names):
                out[:, self.param_names.index(n)] = draw[:, j]
        return out

    def conjugate_prior(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and precision of the Gaussian prior over the conjugate block (block-diagonal assembly)."""
        idx = {n: i for i, n in enumerate(self.conjugate)}
        d = len(self.conjugate)
        mu, lam = np.zeros(d), np.zeros((d, d))
        seen = set()
        for n in self.conjugate:
            b = self.block_of(n)
            if b.names in seen:
                continue
            seen.add(b.names)
            ix = [idx[m] for m in b.names]
            mu[ix] = b.dist.mean
            lam[np.ix_(ix, ix)] = b.dist.precision
        return mu, lam


def log_prior(model: ModelInstance, theta, sigma_value: float | None = None) -> float:
    """Sum of block log-densities (and the sigma prior when sigma is unknown)."""
    p = model.params(theta)
    total = 0.0
    for b in model.priors:
        total += b.dist.logpdf([p[n] for n in b.names])
        if total == -math.inf:
            return total
    if not model.sigma_known:
        if sigma_value is None:
            raise ValueError("model has unknown sigma; pass sigma_value")
        total += model.sigma_prior.logpdf(sigma_value)
    return total


def _gauss(prior, default_var=5.0, mean=0.0) -> Gaussian:
    if prior is None:
        return Gaussian.from_variance([mean], [default_var])
    if isinstance(prior, Gaussian):
        return prior
    m, v = prior
    return Gaussian.from_variance([m], [v])


# --- built-in models -------------------------------------------------------------------------


def gompertz_perturbation(theta_prior=None, sigma: float = 1.0, x0: float = 1.0) -> ModelInstance:
    """``dX = theta X dt + sigma dB``, ``h(u) = |u|``: a perturbed Gompertz hazard."""
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    return ModelInstance(
        name="gompertz",
        drift=LinearBasisDrift([BasisTerm("identity")], ["theta"]),
        hazard=ABS,
        param_names=("theta",),
        priors=(PriorBlock(("theta",), _gauss(theta_prior)),),
        sigma=sigma,
        x0=float(x0),
        conjugate=("theta",),
    )


def weibull_perturbation(
    theta1_prior=None, theta2_prior=None, sigma: float = 8.0, x0: float = 0.8, pool_groups: bool = False
) -> ModelInstance:
    """``dX = theta1 sign(X)|X|^theta2 dt + sigma dB``, ``h(u) = |u|``: a perturbed Weibull hazard."""
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    theta2_prior = theta2_prior or Uniform(0.0, 1.0)
    if isinstance(theta2_prior, Uniform):
        lo, hi = theta2_prior.support
    elif isinstance(theta2_prior, Beta):
        lo, hi = 0.0, 1.0
    else:
        raise ValueError("theta2 prior must be Uniform or Beta on a subset of [0, 1]")
    if lo < 0.0 or hi > 1.0:
        raise ValueError("theta2 support must lie in [0, 1] for a non-explosive solution")
    return ModelInstance(
        name="weibull",
        drift=LinearBasisDrift([BasisTerm("signpow", power="theta2")], ["theta1", "theta2"]),
        hazard=ABS,
        param_names=("theta1", "theta2"),
        priors=(PriorBlock(("theta1",), _gauss(theta1_prior)), PriorBlock(("theta2",), theta2_prior)),
        sigma=sigma,
        x0=float(x0),
        conjugate=("theta1",),
        proposals={"theta2": Proposal("independence", Beta(0.5, 0.5))},
        pool_groups=pool_groups,
    )


def pareto_perturbation(theta_prior=None, sigma: float = 0.5, x_lambda: float = 1.0, lam: float = 1.0) -> ModelInstance:
    """Perturbed Pareto hazard ``dX = -theta X^2 dt + sigma X dB`` from time ``lam``.

    Expressed in unit-coefficient coordinates ``y = log(x)/sigma``, where the
    drift is ``-(theta/sigma) e^{sigma y} - sigma/2`` and the hazard (the
    identity on the original scale) is ``e^{sigma y}``.
    """
    if not (sigma > 0 and x_lambda > 0 and lam > 0):
        raise ValueError("sigma, x_lambda and lambda must be positive")
    return ModelInstance(
        name="pareto",
        drift=LinearBasisDrift([BasisTerm("exp", scale=-1.0 / sigma, power=sigma)], ["theta"], offset=-sigma / 2.0),
        hazard=HazardSpec("exp", rate=sigma),
        param_names=("theta",),
        priors=(PriorBlock(("theta",), _gauss(theta_prior)),),
        sigma=1.0,
        x0=math.log(x_lambda) / sigma,
        origin=float(lam),
        conjugate=("theta",),
    )


def pareto_explosive(theta_prior=None, sigma: float = 0.5, x_lambda: float = 1.0, lam: float = 1.0) -> ModelInstance:
    """``dX = -theta X^2 dt + sigma dB``. Explodes in finite time; simulation only."""
    if not (sigma > 0 and x_lambda > 0 and lam > 0):
        raise ValueError("sigma, x_lambda and lambda must be positive")
    return ModelInstance(
        name="pareto-explosive",
        drift=LinearBasisDrift([BasisTerm("square", scale=-1.0)], ["theta"]),
        hazard=IDENTITY,
        param_names=("theta",),
        priors=(PriorBlock(("theta",), _gauss(theta_prior)),),
        sigma=sigma,
        x0=float(x_lambda),
        origin=float(lam),
        conjugate=("theta",),
        inference_ok=False,
    )


TOY_TRUTH = {"theta1": -1.4, "theta2": -1.0}
TOY_CENSOR = 0.9


def toy_model(sigma: float | None = 1.0, sigma_prior_mean: float = 1.0) -> ModelInstance:
    """``dX = (theta1 sin X + theta2) dt + sigma dB``, ``X0 = 2``, ``h(u) = u^2``.

    Prior: independent normals with means (-1.4, -1) and precisions 1/5.
    ``sigma=None`` makes the diffusion coefficient unknown with an
    exponential prior.
    """
    return ModelInstance(
        name="toy",
        drift=LinearBasisDrift([BasisTerm("sin"), BasisTerm("const")], ["theta1", "theta2"]),
        hazard=SQUARE,
        param_names=("theta1", "theta2"),
        priors=(PriorBlock(("theta1", "theta2"), Gaussian([-1.4, -1.0], np.diag([0.2, 0.2]))),),
        sigma=sigma,
        sigma_prior=None if sigma is not None else Exponential(sigma_prior_mean),
        x0=2.0,
        conjugate=("theta1", "theta2"),
    )


def build_covariate_model(
    spec: CovariateModelSpec,
    priors: Mapping[str, object] | None = None,
    sigma: float = 8.0,
    term: BasisTerm = BasisTerm("signpow", power="theta2"),
) -> ModelInstance:
    """Weibull-type model with covariates on the log start point and the log drift scale.

    Parameters: ``start_intercept``, ``start_<c>`` for start covariates,
    ``drift_intercept``, ``drift_<c>`` for drift covariates and ``theta2``.
    Intercepts are centred at the covariate shares in ``spec.centres``. All
    priors default to N(0, 5) except ``theta2 ~ U[0, 1]``.
    """
    priors = dict(priors or {})
    start_slopes = {c: f"start_{c}" for c in spec.start}
    drift_slopes = {c: f"drift_{c}" for c in spec.drift}
    names = ("start_intercept", *start_slopes.values(), "drift_intercept", *drift_slopes.values(), "theta2")
    blocks = []
    for n in names:
        p = priors.get(n)
        if n == "theta2":
            blocks.append(PriorBlock((n,), p or Uniform(0.0, 1.0)))
        else:
            blocks.append(PriorBlock((n,), _gauss(p)))
    drift = CovariateScaledDrift(term, "drift_intercept", drift_slopes, spec.centres, extra_params=("theta2",))
    return ModelInstance(
        name="covariate-weibull",
        drift=drift,
        hazard=ABS,
        param_names=names,
        priors=tuple(blocks),
        sigma=sigma,
        x0=StartMap("start_intercept", start_slopes, dict(spec.centres)),
        conjugate=(),
        proposals={"theta2": Proposal("independence", Beta(0.5, 0.5))},
        covariates=spec,
    )
