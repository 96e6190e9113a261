"""Bayesian state-space models of soil organic carbon.

Log-normal one-, two-, three- and five-pool carbon models driven by crop
inputs, fitted with correlated pseudo-marginal Metropolis-Hastings over a
Rao-Blackwellised particle filter, and compared by leave-future-out
cross-validation.
"""

__version__ = "0.1.0"

from .core import (
    ChainOutput,
    Dataset,
    FieldSeries,
    LatentTrajectory,
    ManagementSchedule,
    ModelSpec,
    ParameterVector,
    Pools,
    Site,
    Treatment,
    default_schedule,
    sampled_parameters,
    total_soc,
)
from .diagnostics import gelman_rubin, percentile_bands, soc_change
from .filters import (
    LinearGaussianSpec,
    RandomBank,
    bootstrap_pf,
    fixed_random_pf,
    kalman_filter,
    rbpf_loglik,
    systematic_resample,
)
from .mcmc import ChainConfig, CpmState, SoilCarbonContext, cpm_step, run_chain, run_chains
from .models import carbon_input, emitted_co2, obs_logdensity, step_carbon, step_crops
from .priors import PriorSet, ProposalSet, log_prior, propose
from .selection import LfoResult, elpd_lfo, log_predictive
from .simulator import SimConfig, example_theta, simulate

__all__ = [
    "ChainConfig", "ChainOutput", "CpmState", "Dataset", "FieldSeries", "LatentTrajectory",
    "LfoResult", "LinearGaussianSpec", "ManagementSchedule", "ModelSpec", "ParameterVector",
    "Pools", "PriorSet", "ProposalSet", "RandomBank", "SimConfig", "Site", "SoilCarbonContext",
    "Treatment", "bootstrap_pf", "carbon_input", "cpm_step", "default_schedule", "elpd_lfo",
    "emitted_co2", "example_theta", "fixed_random_pf", "gelman_rubin", "kalman_filter",
    "log_predictive", "log_prior", "obs_logdensity", "percentile_bands", "propose",
    "rbpf_loglik", "run_chain", "run_chains", "sampled_parameters", "simulate", "soc_change",
    "step_carbon", "step_crops", "systematic_resample", "total_soc",
]
