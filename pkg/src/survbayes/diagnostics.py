"""Convergence diagnostics: split-R-hat, autocorrelation-based effective
sample size, and the pass/fail gate applied before a fit may be summarized
as converged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .mcmc import ChainSet


@dataclass(frozen=True)
class DiagnosticThresholds:
    """Gate thresholds. ``ess_params`` names the parameters whose ESS ratio
    must clear ``ess_ratio_min``; None means the primary parameter only
    (log_hr when present, else the first column). R-hat applies to all
    parameters regardless.
    """

    rhat_max: float = 1.05
    ess_ratio_min: float = 0.5
    min_saved_per_chain: int = 1000
    min_chains: int = 4
    ess_params: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.rhat_max > 1.0:
            raise ConfigError(f"rhat_max must exceed 1, got {self.rhat_max}")
        if not 0.0 < self.ess_ratio_min <= 1.0:
            raise ConfigError(f"ess_ratio_min must be in (0, 1], got {self.ess_ratio_min}")


@dataclass(frozen=True)
class Diagnostics:
    """Per-parameter R-hat and ESS plus the overall pass flag.

    ``failures`` lists human-readable reasons whenever ``passed`` is False;
    undefined R-hat (zero-variance chains, too few chains) is itself a named
    failure, never a silent NaN pass.
    """

    parameter_names: tuple[str, ...]
    rhat: np.ndarray
    ess: np.ndarray
    ess_ratio: np.ndarray
    n_chains: int
    saved_per_chain: int
    passed: bool
    failures: tuple[str, ...] = field(default_factory=tuple)

    def for_param(self, name: str) -> tuple[float, float]:
        """(rhat, ess_ratio) for one parameter."""
        j = self.parameter_names.index(name)
        return float(self.rhat[j]), float(self.ess_ratio[j])


def split_rhat(chains: np.ndarray) -> float:
    """Split-R-hat of one parameter from a (chains, draws) array.

    Each chain is halved (middle draw dropped when odd) before the classic
    between/within variance ratio, so a single drifting chain is caught.
    Returns NaN when within-chain variance is zero.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2:
        raise ValueError("expected (chains, draws)")
    m, n = chains.shape
    if n < 4:
        raise ValueError("need at least 4 draws per chain to split")
    half = n // 2
    halves = np.concatenate([chains[:, :half], chains[:, n - half :]], axis=0)
    w = halves.var(axis=1, ddof=1).mean()
    if w == 0.0:
        return float("nan")
    b = half * halves.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * halves.var(axis=1, ddof=1).mean() + b / half
    return float(np.sqrt(var_plus / w))


def _autocorr_fft(x: np.ndarray) -> np.ndarray:
    """Autocorrelation function of a 1-d series via FFT (biased normalizer)."""
    n = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    if acov[0] <= 0.0:
        return np.zeros(n)
    return acov / acov[0]


def ess_single_chain(x: np.ndarray) -> float:
    """Effective sample size of one chain.

    Uses the initial-monotone-positive-sequence truncation on paired
    autocorrelations: sum Gamma_m = rho_{2m} + rho_{2m+1} until the first
    non-positive pair, enforcing monotone decrease. Returns 0.0 for a
    zero-variance series (undefined, treated as no information).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 draws")
    if np.all(x == x[0]):
        return 0.0
    rho = _autocorr_fft(x)
    prev = np.inf
    acc = 0.0
    m = 0
    while 2 * m + 1 < n:
        gamma = rho[2 * m] + rho[2 * m + 1]
        if gamma <= 0.0:
            break
        gamma = min(gamma, prev)
        prev = gamma
        acc += gamma
        m += 1
    tau = max(2.0 * acc - 1.0, 1e-12)
    return float(n / tau)


def diagnose(chains: ChainSet, thresholds: DiagnosticThresholds | None = None) -> Diagnostics:
    """Gate a ChainSet: split-R-hat per parameter, ESS summed over chains,
    saved-draw quota, and chain count.

    ESS per parameter is the sum of per-chain ESS; ``ess_ratio`` divides by
    the total number of saved draws. The flag passes only when every
    parameter's R-hat is finite and below ``rhat_max``, the configured
    parameters' ESS ratios clear ``ess_ratio_min``, at least
    ``min_saved_per_chain`` draws per chain were kept, and there are at
    least ``min_chains`` chains.
    """
    th = thresholds or DiagnosticThresholds()
    draws = chains.draws
    m, n, dim = draws.shape
    names = chains.parameter_names
    failures: list[str] = []

    rhat = np.full(dim, np.nan)
    ess = np.zeros(dim)
    if n < 4:
        failures.append(f"only {n} saved draws per chain; need >= 4 to diagnose")
    else:
        for j in range(dim):
            if m >= 2:
                rhat[j] = split_rhat(draws[:, :, j])
            ess[j] = sum(ess_single_chain(draws[c, :, j]) for c in range(m))
    ess_ratio = ess / (m * n)

    if m < th.min_chains:
        failures.append(f"{m} chain(s); need >= {th.min_chains} for between-chain diagnostics")
    if n < th.min_saved_per_chain:
        failures.append(f"{n} saved draws per chain; need >= {th.min_saved_per_chain}")
    if m >= max(2, th.min_chains) and n >= 4:
        for j, name in enumerate(names):
            if np.isnan(rhat[j]):
                failures.append(f"rhat undefined for {name} (zero within-chain variance)")
            elif rhat[j] >= th.rhat_max:
                failures.append(f"rhat {rhat[j]:.4f} >= {th.rhat_max:g} for {name}")
    if n >= 4:
        if th.ess_params is None:
            targets = ("log_hr",) if "log_hr" in names else (names[0],)
        else:
            targets = th.ess_params
        for name in targets:
            if name not in names:
                raise ConfigError(f"ess_params names unknown parameter {name!r}")
            j = names.index(name)
            if ess_ratio[j] < th.ess_ratio_min:
                failures.append(
                    f"ESS ratio {ess_ratio[j]:.3f} < {th.ess_ratio_min:g} for {name}"
                )

    return Diagnostics(
        parameter_names=names,
        rhat=rhat,
        ess=ess,
        ess_ratio=ess_ratio,
        n_chains=m,
        saved_per_chain=n,
        passed=not failures,
        failures=tuple(failures),
    )
