"""Bayesian survival analysis with latent diffusion hazards."""
__version__ = "0.1.0"

from .data import embedded_leukemia, load_dataset_csv
from .mcmc import SamplerConfig, Trace, run_chain
from .models import (
    build_covariate_model,
    gompertz_perturbation,
    log_prior,
    pareto_perturbation,
    toy_model,
    weibull_perturbation,
)
from .paths import TimeGrid, euler_maruyama_simulate, girsanov_logdensity, make_grid
from .summary import acf_ess, bayes_factor_prior_mc, curve_posterior_mean, pointwise_hpd_band
from .survival import HazardSpec, SurvivalDataset, kaplan_meier, log_likelihood, sample_event_time

__all__ = [
    "HazardSpec",
    "SamplerConfig",
    "SurvivalDataset",
    "TimeGrid",
    "Trace",
    "acf_ess",
    "bayes_factor_prior_mc",
    "build_covariate_model",
    "curve_posterior_mean",
    "embedded_leukemia",
    "euler_maruyama_simulate",
    "girsanov_logdensity",
    "gompertz_perturbation",
    "kaplan_meier",
    "load_dataset_csv",
    "log_likelihood",
    "log_prior",
    "make_grid",
    "pareto_perturbation",
    "pointwise_hpd_band",
    "run_chain",
    "sample_event_time",
    "toy_model",
    "weibull_perturbation",
]
