"""Run configuration: flat ``key = value`` files with dotted keys.

Syntax
------
One ``key = value`` per line; ``#`` starts a comment. Values are parsed as
JSON when possible (numbers, ``true``/``false``, ``null``, ``[lists]``,
``"strings"``) and taken as bare strings otherwise.

A bundled preset (``toy``, ``leukemia``, ``leukemia_pooled``) may be given
by name instead of a path.

Keys
----
``seed``                         64-bit integer seed
``model.type``                   toy | gompertz | weibull | pareto | covariate
``model.sigma``                  positive number, or ``unknown`` (toy only)
``model.sigma_prior_mean``       mean of the exponential prior when sigma is unknown
``model.x0``                     starting value (gompertz, weibull)
``model.x_lambda``, ``model.lambda``   pareto start value and start time
``model.pool_groups``            ignore group labels (single-group model)
``model.start_covariates``       covariate model: list of covariates on the start point
``model.drift_covariates``       covariate model: list of covariates on the drift scale
``prior.<param>.mean``/``.var``  Gaussian prior of a parameter
``prior.<param>.lower``/``.upper``  uniform prior of a parameter
``proposal.<param>``             ``prior``, ``rw:<step>``, ``beta:<a>,<b>`` or ``uniform:<a>,<b>``
``sampler.iterations``, ``sampler.burn_in``, ``sampler.thin``, ``sampler.dt``,
``sampler.block_length``, ``sampler.parametrization`` (centered | pnc | ncp),
``sampler.horizon`` (number or ``ymax``), ``sampler.sigma_step``, ``sampler.rw_step``
``data.source``                  ``leukemia`` or a CSV path
``data.time_divisor``            divide all times by this (e.g. 52 for weeks -> years)
``output.curve_nodes``           output-grid size for curve draws
``output.band_level``            HPD band level
``output.plot``                  write an SVG next to the curve CSVs
``simulate.n``, ``simulate.censor``, ``simulate.dt``, ``simulate.theta.<param>``
``bf.samples``                   prior draws per model for Bayes factors
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import models
from .data import embedded_leukemia, load_dataset_csv
from .mcmc import PARAMETRIZATIONS, SamplerConfig
from .survival import SurvivalDataset

DEFAULTS = {
    "seed": 0,
    "model.type": "toy",
    "model.sigma": None,
    "model.sigma_prior_mean": 1.0,
    "model.x0": None,
    "model.x_lambda": 1.0,
    "model.lambda": 1.0,
    "model.pool_groups": False,
    "model.start_covariates": [],
    "model.drift_covariates": [],
    "sampler.iterations": 20000,
    "sampler.burn_in": 2000,
    "sampler.thin": 1,
    "sampler.dt": 0.01,
    "sampler.block_length": 0.2,
    "sampler.parametrization": "pnc",
    "sampler.horizon": "ymax",
    "sampler.sigma_step": 0.1,
    "sampler.rw_step": 0.2,
    "data.source": None,
    "data.time_divisor": 1.0,
    "output.curve_nodes": 100,
    "output.band_level": 0.9,
    "output.plot": True,
    "simulate.n": 200,
    "simulate.censor": 0.9,
    "simulate.dt": 0.001,
    "bf.samples": 100000,
}
PRESET_DIR = Path(__file__).parent / "presets"
PRESETS = tuple(sorted(f.stem for f in PRESET_DIR.glob("*.cfg")))
_PATTERN_PREFIXES = ("prior.", "proposal.", "simulate.theta.")
MODEL_TYPES = ("toy", "gompertz", "weibull", "pareto", "covariate")


class ConfigError(ValueError):
    """Invalid run configuration."""


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip() if not line.lstrip().startswith("#") else ""
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        out[key] = _parse_value(val)
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        """Load a file, or a bundled preset by name (``toy``, ``leukemia``, ``leukemia_pooled``)."""
        p = Path(path)
        if not p.exists() and p.suffix == "" and p.name in PRESETS:
            p = PRESET_DIR / f"{p.name}.cfg"
        if not p.exists():
            raise ConfigError(f"config file {p} not found (presets: {', '.join(PRESETS)})")
        return cls.from_dict(parse_config_text(p.read_text(), str(p)))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        vals = dict(DEFAULTS)
        for k, v in d.items():
            if k not in DEFAULTS and not k.startswith(_PATTERN_PREFIXES):
                raise ConfigError(f"unknown config key {k!r}")
            vals[k] = v
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def override(self, **kv) -> "RunConfig":
        vals = dict(self.values)
        vals.update({k: v for k, v in kv.items() if v is not None})
        cfg = RunConfig(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    # -- validation --

    def validate(self) -> None:
        v = self.values
        if v["model.type"] not in MODEL_TYPES:
            raise ConfigError(f"model.type must be one of {MODEL_TYPES}")
        if v["sampler.parametrization"] not in PARAMETRIZATIONS:
            raise ConfigError(f"sampler.parametrization must be one of {PARAMETRIZATIONS}")
        if not isinstance(v["seed"], int) or not 0 <= v["seed"] < 2**64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        for k in ("sampler.iterations", "sampler.burn_in", "sampler.thin", "output.curve_nodes", "simulate.n", "bf.samples"):
            if not isinstance(v[k], int) or isinstance(v[k], bool) or v[k] < 0:
                raise ConfigError(f"{k} must be a non-negative integer")
        for k in ("sampler.dt", "sampler.block_length", "sampler.sigma_step", "sampler.rw_step", "data.time_divisor",
                  "simulate.censor", "simulate.dt", "model.sigma_prior_mean"):
            if not _positive(v[k]):
                raise ConfigError(f"{k} must be a positive number")
        if not 0 < _num(v["output.band_level"], "output.band_level") < 1:
            raise ConfigError("output.band_level must lie in (0, 1)")
        h = v["sampler.horizon"]
        if h != "ymax" and not _positive(h):
            raise ConfigError("sampler.horizon must be 'ymax' or a positive number")
        sig = v["model.sigma"]
        if sig is not None and sig != "unknown" and not _positive(sig):
            raise ConfigError("model.sigma must be positive or 'unknown'")
        if sig == "unknown" and v["model.type"] != "toy":
            raise ConfigError("unknown sigma is supported for the toy model only")
        if v["model.type"] == "covariate" and v["sampler.parametrization"] != "ncp":
            raise ConfigError("the covariate model needs sampler.parametrization = ncp")
        for k, val in v.items():
            if k.startswith("proposal."):
                try:
                    models.Proposal.parse(str(val))
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{k}: {exc}") from None
        self._priors()
        try:
            self.sampler_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- builders --

    def _priors(self) -> dict[str, object]:
        spec: dict[str, dict] = {}
        for k, val in self.values.items():
            if k.startswith("prior."):
                parts = k.split(".")
                if len(parts) != 3 or parts[2] not in ("mean", "var", "lower", "upper"):
                    raise ConfigError(f"bad prior key {k!r}")
                spec.setdefault(parts[1], {})[parts[2]] = _num(val, k)
        out = {}
        for name, s in spec.items():
            if {"lower", "upper"} & s.keys():
                out[name] = models.Uniform(s.get("lower", 0.0), s.get("upper", 1.0))
            else:
                out[name] = models.Gaussian.from_variance([s.get("mean", 0.0)], [s.get("var", 5.0)])
        return out

    def build_model(self, data: SurvivalDataset | None = None) -> models.ModelInstance:
        v = self.values
        pri = self._priors()
        t = v["model.type"]
        sig = v["model.sigma"]
        x0 = v["model.x0"]
        try:
            if t == "toy":
                m = models.toy_model(None if sig == "unknown" else (sig or 1.0), v["model.sigma_prior_mean"])
            elif t == "gompertz":
                m = models.gompertz_perturbation(pri.get("theta"), sig or 1.0, 1.0 if x0 is None else x0)
            elif t == "weibull":
                m = models.weibull_perturbation(pri.get("theta1"), pri.get("theta2"), sig or 8.0, 0.8 if x0 is None else x0,
                                                pool_groups=bool(v["model.pool_groups"]))
            elif t == "pareto":
                m = models.pareto_perturbation(pri.get("theta"), sig or 0.5, v["model.x_lambda"], v["model.lambda"])
            else:
                if data is None:
                    raise ConfigError("the covariate model needs a dataset")
                spec = models.CovariateModelSpec.from_dataset(data, v["model.start_covariates"], v["model.drift_covariates"])
                m = models.build_covariate_model(spec, pri, sig or 8.0)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"cannot build model: {exc}") from None
        unknown = set(pri) - set(m.param_names)
        if unknown:
            raise ConfigError(f"priors given for unknown parameters {sorted(unknown)}")
        if t == "toy" and pri:
            raise ConfigError("the toy model has a fixed prior")
        return m

    def proposals(self) -> dict[str, str]:
        return {k.split(".", 1)[1]: str(val) for k, val in self.values.items() if k.startswith("proposal.")}

    def sampler_config(self, seed: int | None = None) -> SamplerConfig:
        v = self.values
        h = v["sampler.horizon"]
        return SamplerConfig(
            iterations=v["sampler.iterations"],
            burn_in=v["sampler.burn_in"],
            thin=v["sampler.thin"],
            dt=float(v["sampler.dt"]),
            block_length=float(v["sampler.block_length"]),
            horizon=None if h == "ymax" else float(h),
            parametrization=v["sampler.parametrization"],
            seed=v["seed"] if seed is None else seed,
            sigma_step=float(v["sampler.sigma_step"]),
            rw_step=float(v["sampler.rw_step"]),
            proposals=self.proposals(),
            output_nodes=v["output.curve_nodes"],
        )

    def load_data(self, source=None) -> SurvivalDataset:
        src = source if source is not None else self.values["data.source"]
        div = float(self.values["data.time_divisor"])
        if src is None:
            raise ConfigError("no dataset given (data.source or --data)")
        if src == "leukemia":
            return embedded_leukemia("weeks").rescaled(div, "weeks" if div == 1 else f"weeks/{div:g}")
        return load_dataset_csv(src, div)

    def simulate_theta(self, model: models.ModelInstance) -> dict[str, float]:
        if model.name == "toy":
            theta = dict(models.TOY_TRUTH)
        else:
            theta = dict(zip(model.param_names, model.prior_mean().tolist()))
        for k, val in self.values.items():
            if k.startswith("simulate.theta."):
                name = k[len("simulate.theta."):]
                if name not in model.param_names:
                    raise ConfigError(f"{k}: model has no parameter {name!r}")
                theta[name] = _num(val, k)
        return theta


def _num(val, key) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key} must be a number, got {val!r}")
    return float(val)


def _positive(val) -> bool:
    return isinstance(val, (int, float)) and not isinstance(val, bool) and math.isfinite(val) and val > 0
