"""Posterior summaries of the log hazard ratio, from Monte-Carlo draws or
from the closed-form conjugate posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conjugate import NormalPosterior, credible_interval, prob_hr_exceeds
from .diagnostics import Diagnostics, DiagnosticThresholds, diagnose
from .errors import ConfigError
from .mcmc import ChainSet

DEFAULT_HR_THRESHOLDS = (1.5,)


@dataclass(frozen=True)
class PosteriorSummary:
    """One model's view of the treatment effect.

    All statistics describe the posterior of log(HR); ``prob_hr`` maps a
    hazard-ratio threshold c to Pr(HR > c). ``rhat``/``ess_ratio`` are None
    for closed-form (no-MCMC) fits; ``converged`` is then True by
    construction. ``runtime_seconds`` is informational and excluded from
    deterministic artifacts.
    """

    label: str
    mean: float
    sd: float
    median: float
    ci_low: float
    ci_high: float
    prob_hr: dict[float, float]
    rhat: float | None
    ess_ratio: float | None
    converged: bool
    runtime_seconds: float | None = None

    def __post_init__(self) -> None:
        if not (self.ci_low <= self.median <= self.ci_high):
            raise ValueError(
                f"{self.label}: interval must bracket the median, got "
                f"({self.ci_low}, {self.median}, {self.ci_high})"
            )
        if not self.sd >= 0:
            raise ValueError(f"{self.label}: sd must be non-negative")
        for c, p in self.prob_hr.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{self.label}: Pr(HR>{c}) = {p} outside [0, 1]")


def summarize_chains(
    chains: ChainSet,
    label: str,
    hr_thresholds: tuple[float, ...] = DEFAULT_HR_THRESHOLDS,
    thresholds: DiagnosticThresholds | None = None,
    param: str = "log_hr",
    level: float = 0.95,
    diagnostics: Diagnostics | None = None,
    runtime_seconds: float | None = None,
) -> PosteriorSummary:
    """Summarize one parameter of a ChainSet; diagnostics cover all parameters.

    ``diagnostics`` may be passed in when the caller already ran diagnose;
    otherwise it is computed here with the given thresholds.
    """
    if param not in chains.parameter_names:
        raise ConfigError(f"parameter {param!r} not in chains {chains.parameter_names}")
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must be in (0, 1), got {level}")
    diag = diagnostics if diagnostics is not None else diagnose(chains, thresholds)
    draws = chains.pooled(param)
    lo, hi = np.quantile(draws, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    rhat, ess_ratio = diag.for_param(param)
    return PosteriorSummary(
        label=label,
        mean=float(draws.mean()),
        sd=float(draws.std(ddof=1)),
        median=float(np.median(draws)),
        ci_low=float(lo),
        ci_high=float(hi),
        prob_hr={float(c): float(np.mean(draws > math.log(c))) for c in hr_thresholds},
        rhat=None if math.isnan(rhat) else float(rhat),
        ess_ratio=float(ess_ratio),
        converged=diag.passed,
        runtime_seconds=runtime_seconds,
    )


def summarize_conjugate(
    posterior: NormalPosterior,
    label: str,
    hr_thresholds: tuple[float, ...] = DEFAULT_HR_THRESHOLDS,
    level: float = 0.95,
    runtime_seconds: float | None = None,
) -> PosteriorSummary:
    """Closed-form summary: the normal posterior needs no sampling, so the
    median equals the mean and convergence holds by construction."""
    lo, hi = credible_interval(posterior, level)
    return PosteriorSummary(
        label=label,
        mean=float(posterior.mean),
        sd=float(posterior.sd),
        median=float(posterior.mean),
        ci_low=float(lo),
        ci_high=float(hi),
        prob_hr={float(c): float(prob_hr_exceeds(posterior, c)) for c in hr_thresholds},
        rhat=None,
        ess_ratio=None,
        converged=True,
        runtime_seconds=runtime_seconds,
    )
