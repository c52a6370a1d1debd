"""Bayesian proportional-hazards survival analysis for two-arm trials.

Submodules:
  data         trial datasets, CSV I/O, simulation, stratified bootstrap
  frequentist  Kaplan-Meier, Cox partial likelihood, parametric MLE
  conjugate    closed-form normal analysis of the log hazard ratio
  mcmc         adaptive random-walk Metropolis / Metropolis-within-Gibbs
  diagnostics  split R-hat, effective sample size, convergence gate
  parametric   exponential and Weibull Bayesian PH models
  pem          piecewise exponential models with Gamma-Gibbs updates
  flexible     transformed Bernstein polynomial prior, spline log-hazard
  summary      posterior summaries of the log hazard ratio
  report       JSON/text tables, forest plot CSV + SVG
  run          TOML config, model presets, batch execution
  cli          command-line entry point
"""

from .conjugate import (
    NormalLikelihoodSummary,
    NormalPosterior,
    NormalPrior,
    conjugate_update,
    credible_interval,
    implicit_sample_size,
    prior_from_n0,
    prob_hr_below,
    prob_hr_exceeds,
)
from .data import (
    SimSpec,
    SurvivalRecord,
    TrialDataset,
    bootstrap_stratified,
    dataset_from_arrays,
    load_csv,
    simulate_trial,
    write_csv,
)
from .diagnostics import DiagnosticThresholds, Diagnostics, diagnose, ess_single_chain, split_rhat
from .errors import ConfigError, ConvergenceError, DataError, ModelError, SurvBayesError
from .flexible import (
    SplineHazardSpec,
    SplinePosterior,
    TbpPosterior,
    TbpSpec,
    TbpState,
    centering_mle,
    default_tbp_spec,
    fit_spline_hazard,
    fit_tbp,
    spline_cumulative_hazard,
    spline_knot_search,
    spline_log_hazard,
    spline_spec_for_data,
    tbp_log_density,
    tbp_log_likelihood,
    tbp_log_posterior,
    tbp_survival,
    weights_from_logits,
)
from .frequentist import (
    MleFit,
    StepSurvivalCurve,
    cox_fit,
    cox_partial_loglik,
    kaplan_meier,
    parametric_log_likelihood,
    parametric_mle,
)
from .mcmc import ChainSet, McmcConfig, gibbs_extend, sample
from .parametric import (
    PARAMETRIC_PRESETS,
    GammaPrior,
    ParametricPosterior,
    HalfNormalPrior,
    ParametricPriorSpec,
    fit_parametric,
    grad_log_posterior_parametric,
    log_posterior_parametric,
)
from .pem import (
    PemPosterior,
    PemPriorSpec,
    PiecewiseHazard,
    TimePartition,
    build_partition,
    exposure_matrix,
    fit_pem,
    grad_pem_log_likelihood,
    pem_log_likelihood,
    poisson_trick_loglik,
)
from .summary import PosteriorSummary, summarize_chains, summarize_conjugate

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
