"""Piecewise exponential proportional-hazards models.

The baseline hazard is constant within each interval of a time partition
(left-open right-closed intervals, the last one extending to infinity).
Interval hazards are conjugate given beta: their full conditionals are
Gamma, so the sampler is Metropolis-within-Gibbs with a scalar Metropolis
update for beta and exact Gamma draws for the rates.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .conjugate import NormalPrior
from .data import TrialDataset
from .diagnostics import Diagnostics, DiagnosticThresholds, diagnose
from .errors import ConfigError
from .mcmc import ChainSet, McmcConfig, gibbs_extend
from .parametric import _normal_logpdf, warn_if_times_large
from .summary import DEFAULT_HR_THRESHOLDS, PosteriorSummary, summarize_chains


@dataclass(frozen=True)
class TimePartition:
    """Partition of the time axis: intervals (d_{k-1}, d_k], d_0 = 0 and the
    last interval open-ended. ``cutpoints`` holds d_1..d_{M-1}."""

    cutpoints: tuple[float, ...]
    method: str = "quantile"

    def __post_init__(self) -> None:
        cp = np.asarray(self.cutpoints, dtype=float)
        if cp.size and (np.any(cp <= 0) or np.any(np.diff(cp) <= 0)):
            raise ConfigError(f"cutpoints must be strictly increasing positive, got {self.cutpoints}")

    @property
    def m(self) -> int:
        return len(self.cutpoints) + 1

    def interval_index(self, t: np.ndarray) -> np.ndarray:
        """0-based interval containing each time; boundary times belong to
        the interval they close: t = d_k lands in interval k-1 (0-based)."""
        return np.searchsorted(np.asarray(self.cutpoints), np.asarray(t), side="left")


@dataclass(frozen=True)
class PiecewiseHazard:
    """Baseline hazard: ``rates[k]`` on interval k of ``partition``."""

    rates: tuple[float, ...]
    partition: TimePartition

    def __post_init__(self) -> None:
        if len(self.rates) != self.partition.m:
            raise ConfigError("need one rate per interval")
        if any(not r > 0 for r in self.rates):
            raise ConfigError("all rates must be positive")

    def hazard(self, t: np.ndarray) -> np.ndarray:
        return np.asarray(self.rates)[self.partition.interval_index(t)]

    def cumulative(self, t: np.ndarray) -> np.ndarray:
        expo, _ = _exposures(np.asarray(t, dtype=float), self.partition)
        return expo @ np.asarray(self.rates)


def _empirical_quantile(sorted_times: np.ndarray, k: int, m: int) -> float:
    """Order statistic at ceil(k*n/m), averaging adjacent order statistics
    when k*n/m is integral. 1-based order statistics; rule frozen so the
    derived cutpoints are stable across versions."""
    n = sorted_times.size
    pos = k * n / m
    if float(pos).is_integer():
        j = int(pos)
        if j >= n:
            return float(sorted_times[-1])
        return float(0.5 * (sorted_times[j - 1] + sorted_times[j]))
    j = math.ceil(pos)
    return float(sorted_times[j - 1])


def build_partition(data: TrialDataset, method: str = "quantile", m: int = 10) -> TimePartition:
    """Construct a partition from the data.

    quantile: cutpoints at the k/M empirical quantiles of observed times
    (k = 1..M-1); equal_width: equal spacing on [0, max event time];
    failure_times: a cutpoint at every distinct observed event time.
    Duplicate cutpoints are dropped with a warning (quantile ties), which
    reduces the interval count.
    """
    if method == "failure_times":
        cut = sorted(set(float(t) for t in data.times[data.events]))
        return TimePartition(cutpoints=tuple(cut), method=method)
    if m < 1:
        raise ConfigError(f"interval count must be >= 1, got {m}")
    if method == "quantile":
        st = np.sort(data.times)
        cut = [_empirical_quantile(st, k, m) for k in range(1, m)]
        dedup: list[float] = []
        for c in cut:
            if not dedup or c > dedup[-1]:
                dedup.append(c)
        if len(dedup) < len(cut):
            warnings.warn(
                f"quantile ties reduced the partition from {m} to {len(dedup) + 1} intervals",
                stacklevel=2,
            )
        return TimePartition(cutpoints=tuple(dedup), method=method)
    if method == "equal_width":
        tmax = float(data.times[data.events].max())
        cut = [k * tmax / m for k in range(1, m)]
        return TimePartition(cutpoints=tuple(cut), method=method)
    raise ConfigError(f"unknown partition method {method!r}")


def _exposures(times: np.ndarray, partition: TimePartition) -> tuple[np.ndarray, np.ndarray]:
    """(n, M) exposure matrix and 0-based event-interval index per subject.

    Subject with time t contributes min(t, d_k) - d_{k-1} (floored at 0) to
    interval k; sum over intervals equals t exactly.
    """
    edges = np.concatenate([[0.0], np.asarray(partition.cutpoints, dtype=float)])
    upper = np.concatenate([np.asarray(partition.cutpoints, dtype=float), [np.inf]])
    t = times[:, None]
    expo = np.clip(np.minimum(t, upper[None, :]) - edges[None, :], 0.0, None)
    return expo, partition.interval_index(times)


def exposure_matrix(data: TrialDataset, partition: TimePartition) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject per-interval exposures and per-subject per-interval event
    flags (a subject's event attaches to the interval containing its time)."""
    expo, idx = _exposures(data.times, partition)
    ev = np.zeros_like(expo)
    ev[np.arange(len(data)), idx] = data.events.astype(float)
    return expo, ev


@dataclass(frozen=True)
class PemPriorSpec:
    """Priors for the PEM fit.

    style "ml_centered": h_k ~ Gamma(r0 * h_hat, r0) with h_hat the pooled
    exponential MLE rate; style "diffuse": h_k ~ Gamma(0.1, 0.1).
    """

    style: str = "ml_centered"
    r0: float = 1.0
    diffuse_shape: float = 0.1
    diffuse_rate: float = 0.1
    beta_prior: NormalPrior = NormalPrior(0.0, math.sqrt(1e5))

    def __post_init__(self) -> None:
        if self.style not in ("ml_centered", "diffuse"):
            raise ConfigError(f"unknown prior style {self.style!r}")
        if not (self.r0 > 0 and self.diffuse_shape > 0 and self.diffuse_rate > 0):
            raise ConfigError("PEM prior hyperparameters must be positive")

    def resolve(self, data: TrialDataset, m: int) -> tuple[np.ndarray, float]:
        """Per-interval Gamma shapes and the common rate."""
        if self.style == "diffuse":
            return np.full(m, self.diffuse_shape), self.diffuse_rate
        # Pooled exponential MLE rate: events / total follow-up.
        h_hat = float(data.events.sum()) / float(data.times.sum())
        return np.full(m, self.r0 * h_hat), self.r0


def pem_log_likelihood(
    data: TrialDataset, partition: TimePartition, beta: float, rates: np.ndarray
) -> float:
    """Sum over subjects of delta_i*(log h(t_i) + beta*Z_i) - H0(t_i)*e^{beta*Z_i}."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (partition.m,):
        raise ConfigError(f"need {partition.m} rates, got shape {rates.shape}")
    if np.any(rates <= 0):
        return -math.inf
    expo, idx = _exposures(data.times, partition)
    ez = np.exp(beta * data.arms)
    h0 = expo @ rates
    ev = data.events
    return float(
        np.sum(np.log(rates[idx[ev]])) + beta * float(data.arms[ev].sum()) - float((h0 * ez).sum())
    )


def grad_pem_log_likelihood(
    data: TrialDataset, partition: TimePartition, beta: float, rates: np.ndarray
) -> np.ndarray:
    """Gradient wrt (beta, rates): [dl/dbeta, dl/dh_1.. dl/dh_M]."""
    rates = np.asarray(rates, dtype=float)
    expo, idx = _exposures(data.times, partition)
    ez = np.exp(beta * data.arms)
    ev = data.events
    h0 = expo @ rates
    g_beta = float(data.arms[ev].sum()) - float((data.arms * h0 * ez).sum())
    d_k = np.bincount(idx[ev], minlength=partition.m).astype(float)
    g_rates = d_k / rates - expo.T @ ez
    return np.concatenate([[g_beta], g_rates])


def poisson_trick_loglik(
    data: TrialDataset, partition: TimePartition, beta: float, rates: np.ndarray
) -> float:
    """Poisson log-likelihood of event counts aggregated by (interval, arm)
    with mean exposure*h_k*e^{beta*z}. Differs from pem_log_likelihood by a
    constant that depends only on the data."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (partition.m,):
        raise ConfigError(f"need {partition.m} rates, got shape {rates.shape}")
    if np.any(rates <= 0):
        return -math.inf
    expo, ev = exposure_matrix(data, partition)
    total = 0.0
    for z in (0, 1):
        mask = data.arms == z
        if not mask.any():
            continue
        exp_kz = expo[mask].sum(axis=0)
        y_kz = ev[mask].sum(axis=0)
        mu = exp_kz * rates * math.exp(beta * z)
        pos = mu > 0
        total += float((y_kz[pos] * np.log(mu[pos])).sum() - mu.sum() - gammaln(y_kz + 1.0).sum())
        if np.any(y_kz[~pos] > 0):
            return -math.inf
    return total


@dataclass(frozen=True)
class PemPosterior:
    chains: ChainSet
    summary: PosteriorSummary
    diagnostics: Diagnostics
    partition: TimePartition
    prior_shapes: np.ndarray
    prior_rate: float


def fit_pem(
    data: TrialDataset,
    partition: TimePartition | None = None,
    priors: PemPriorSpec | None = None,
    cfg: McmcConfig | None = None,
    hr_thresholds: tuple[float, ...] = DEFAULT_HR_THRESHOLDS,
    thresholds: DiagnosticThresholds | None = None,
    label: str | None = None,
) -> PemPosterior:
    """Metropolis-within-Gibbs PEM fit.

    Parameter vector [beta, h_1..h_M]. Rates are drawn exactly from
    Gamma(shape_k + d_k, rate + sum_i exposure_ik * e^{beta*Z_i}); beta is a
    scalar Metropolis block. Intervals with zero total exposure keep their
    prior as the conditional (warned, still valid).
    """
    priors = priors or PemPriorSpec()
    cfg = cfg or McmcConfig()
    partition = partition or build_partition(data, "quantile", 10)
    warn_if_times_large(data)
    m = partition.m
    shapes, rate0 = priors.resolve(data, m)

    expo, idx = _exposures(data.times, partition)
    ev = data.events
    d_k = np.bincount(idx[ev], minlength=m).astype(float)
    total_exposure = expo.sum(axis=0)
    if np.any(total_exposure == 0.0):
        empty = np.flatnonzero(total_exposure == 0.0).tolist()
        warnings.warn(
            f"intervals {empty} have zero exposure; their conditionals equal the prior",
            stacklevel=2,
        )

    arms = data.arms.astype(float)
    treated_events = float(arms[ev].sum())
    event_intervals = idx[ev]
    bp = priors.beta_prior

    def logpost(params: np.ndarray) -> float:
        beta = float(params[0])
        rates = params[1:]
        if np.any(rates <= 0) or abs(beta) > 700.0:
            return -math.inf
        h0 = expo @ rates
        ez = np.exp(beta * arms)
        ll = float(np.log(rates[event_intervals]).sum()) + beta * treated_events - float((h0 * ez).sum())
        lp = float(((shapes - 1.0) * np.log(rates) - rate0 * rates).sum())
        return ll + lp + _normal_logpdf(beta, bp.mean, bp.sd)

    def draw_rates(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        beta = float(x[0])
        weighted = expo.T @ np.exp(beta * arms)
        return rng.gamma(shape=shapes + d_k, scale=1.0 / (rate0 + weighted))

    h_init = np.full(m, max(float(ev.sum()), 1.0) / float(data.times.sum()))
    init = np.concatenate([[0.0], h_init])
    names = ("log_hr", *[f"hazard_{k + 1}" for k in range(m)])
    blocks = [[0], list(range(1, m + 1))]

    start = time.perf_counter()
    chains = gibbs_extend(logpost, init, blocks, cfg, {1: draw_rates}, parameter_names=names)
    elapsed = time.perf_counter() - start
    diag = diagnose(chains, thresholds)
    summ = summarize_chains(
        chains,
        label=label or f"pem-{partition.method}-{m}",
        hr_thresholds=hr_thresholds,
        diagnostics=diag,
        runtime_seconds=elapsed,
    )
    return PemPosterior(
        chains=chains,
        summary=summ,
        diagnostics=diag,
        partition=partition,
        prior_shapes=shapes,
        prior_rate=rate0,
    )
