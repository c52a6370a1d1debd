"""Closed-form normal analysis of the log hazard ratio.

The treatment-effect estimate from a Cox or parametric fit is approximated
as y ~ N(theta, sd^2) and combined with a normal prior on theta = log(HR).
Priors are elicited either directly (mean, sd) or through an implicit prior
sample size n0 giving sd = sqrt(4 / n0), the variance of a log hazard ratio
estimated from n0 subjects with an event apiece under 1:1 randomization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import erfc, ndtri

from .errors import ConfigError

_SQRT2 = math.sqrt(2.0)


def _phi(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-x / _SQRT2)


@dataclass(frozen=True)
class NormalPrior:
    """N(mean, sd^2) prior on the log hazard ratio.

    ``implicit_n`` records the prior sample size when the prior was built
    from one; construction cross-checks sd^2 == 4 / implicit_n.
    """

    mean: float
    sd: float
    implicit_n: float | None = None

    def __post_init__(self) -> None:
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise ConfigError(f"prior sd must be positive and finite, got {self.sd!r}")
        if not math.isfinite(self.mean):
            raise ConfigError(f"prior mean must be finite, got {self.mean!r}")
        if self.implicit_n is not None:
            if not self.implicit_n > 0:
                raise ConfigError(f"implicit prior sample size must be positive, got {self.implicit_n!r}")
            if abs(self.sd**2 - 4.0 / self.implicit_n) > 1e-12:
                raise ConfigError(
                    f"inconsistent prior: sd^2 = {self.sd**2!r} but 4/implicit_n = "
                    f"{4.0 / self.implicit_n!r}"
                )

    @property
    def variance(self) -> float:
        return self.sd**2


def prior_from_n0(mean: float, n0: float) -> NormalPrior:
    """Prior centered at ``mean`` carrying the weight of ``n0`` events."""
    if not n0 > 0:
        raise ConfigError(f"prior sample size must be positive, got {n0!r}")
    return NormalPrior(mean=mean, sd=math.sqrt(4.0 / n0), implicit_n=n0)


def implicit_sample_size(
    alternative_log_hr: float,
    alpha: float = 0.05,
    power: float = 0.90,
    p: float = 0.5,
    tail_mass: float | None = None,
) -> float:
    """Event count at which a two-sided level-``alpha`` test attains ``power``
    against ``alternative_log_hr`` with allocation proportion ``p``.

    n0 = (z_power + z_{1-alpha/2})^2 / (p^2 * mu^2). Used to size skeptical
    and enthusiastic priors. ``tail_mass`` optionally overrides the handicap:
    it is the prior mass allowed beyond the alternative, i.e. z_power is
    replaced by ndtri(1 - tail_mass).
    """
    if alternative_log_hr == 0.0:
        raise ConfigError("alternative log hazard ratio must be nonzero")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha!r}")
    if not 0 < p < 1:
        raise ConfigError(f"allocation proportion must be in (0, 1), got {p!r}")
    if tail_mass is not None:
        z_hand = ndtri(1.0 - tail_mass)
    else:
        if not 0 < power < 1:
            raise ConfigError(f"power must be in (0, 1), got {power!r}")
        z_hand = ndtri(power)
    z_a = ndtri(1.0 - alpha / 2.0)
    return float((z_hand + z_a) ** 2 / (p**2 * alternative_log_hr**2))


@dataclass(frozen=True)
class NormalLikelihoodSummary:
    """Normal approximation to the data: point estimate of log(HR) and its sd."""

    estimate: float
    sd: float

    def __post_init__(self) -> None:
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise ConfigError(f"likelihood sd must be positive and finite, got {self.sd!r}")
        if not math.isfinite(self.estimate):
            raise ConfigError(f"estimate must be finite, got {self.estimate!r}")


@dataclass(frozen=True)
class NormalPosterior:
    """N(mean, sd^2) posterior for the log hazard ratio."""

    mean: float
    sd: float

    def __post_init__(self) -> None:
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise ConfigError(f"posterior sd must be positive, got {self.sd!r}")


def conjugate_update(prior: NormalPrior, likelihood: NormalLikelihoodSummary) -> NormalPosterior:
    """Precision-weighted normal update.

    mean = (mu * sd^2 + y * sd0^2) / (sd^2 + sd0^2), variance =
    sd0^2 sd^2 / (sd0^2 + sd^2); the posterior sd is strictly below both
    inputs' sds.
    """
    v0, v = prior.variance, likelihood.sd**2
    mean = (prior.mean * v + likelihood.estimate * v0) / (v + v0)
    sd = math.sqrt(v0 * v / (v0 + v))
    return NormalPosterior(mean=mean, sd=sd)


def credible_interval(posterior: NormalPosterior, level: float = 0.95) -> tuple[float, float]:
    """Central credible interval for the log hazard ratio."""
    if not 0 < level < 1:
        raise ConfigError(f"level must be in (0, 1), got {level!r}")
    z = ndtri(0.5 + level / 2.0)
    return (posterior.mean - z * posterior.sd, posterior.mean + z * posterior.sd)


def prob_hr_exceeds(posterior: NormalPosterior, threshold: float) -> float:
    """Posterior Pr(HR > threshold) = 1 - Phi((log threshold - mean) / sd)."""
    if not threshold > 0:
        raise ConfigError(f"hazard-ratio threshold must be positive, got {threshold!r}")
    z = (math.log(threshold) - posterior.mean) / posterior.sd
    return 1.0 - _phi(z)


def prob_hr_below(posterior: NormalPosterior, threshold: float) -> float:
    """Posterior Pr(HR < threshold)."""
    return 1.0 - prob_hr_exceeds(posterior, threshold)
