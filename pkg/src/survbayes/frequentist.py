"""Frequentist reference fits: Kaplan-Meier, Cox partial likelihood,
and parametric (exponential / Weibull) maximum likelihood.

These serve three roles: sanity checks against the Bayesian fits, initial
values and centering estimates for the samplers, and the source of the
normal approximation used by the conjugate model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrialDataset
from .errors import ConvergenceError, ModelError

# |log HR| beyond this during Newton iterations signals a monotone partial
# likelihood (no finite maximizer), e.g. perfectly separated event times.
_BETA_DIVERGENCE_LIMIT = 10.0


@dataclass(frozen=True)
class StepSurvivalCurve:
    """Kaplan-Meier curve: right-continuous step function over event times.

    ``variance`` is the Greenwood pointwise variance; where the estimate
    reaches exactly 0 the classical sum is undefined and 0.0 is reported.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray
    variance: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("step times must be strictly increasing")
        s = self.survival
        if np.any(s < 0) or np.any(s > 1) or np.any(np.diff(s) > 1e-15):
            raise ValueError("survival must be non-increasing within [0, 1]")
        if np.any(self.variance < 0):
            raise ValueError("pointwise variance must be non-negative")

    def at(self, t: float | np.ndarray) -> np.ndarray:
        """Evaluate the curve: S(t) = 1 before the first event time."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return np.concatenate([[1.0], self.survival])[idx]


def _km_one(times: np.ndarray, events: np.ndarray, label: str) -> StepSurvivalCurve:
    order = np.argsort(times, kind="stable")
    t, e = times[order], events[order]
    uniq = np.unique(t[e])
    n = len(t)
    at_risk = np.empty(uniq.size, dtype=np.int64)
    deaths = np.empty(uniq.size, dtype=np.int64)
    for i, u in enumerate(uniq):
        at_risk[i] = int(np.sum(t >= u))
        deaths[i] = int(np.sum((t == u) & e))
    surv = np.cumprod(1.0 - deaths / at_risk)
    # Greenwood: S(t)^2 * sum d/(n(n-d)); term dropped when n == d (S hits 0).
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(at_risk > deaths, deaths / (at_risk * (at_risk - deaths)), 0.0)
    var = surv**2 * np.cumsum(terms)
    var = np.where(surv == 0.0, 0.0, var)
    return StepSurvivalCurve(
        times=uniq, survival=surv, at_risk=at_risk, n_events=deaths, variance=var, label=label
    )


def kaplan_meier(
    data: TrialDataset, by_arm: bool = False
) -> StepSurvivalCurve | tuple[StepSurvivalCurve, StepSurvivalCurve]:
    """Kaplan-Meier estimate, pooled or per arm (control curve first)."""
    if not by_arm:
        return _km_one(data.times, data.events, label="pooled")
    curves = []
    for z, label in ((0, "control"), (1, "treatment")):
        mask = data.arms == z
        if not mask.any():
            raise ModelError(f"arm {z} ({label}) has no subjects")
        if not (data.events & mask).any():
            raise ModelError(f"arm {z} ({label}) has no events")
        curves.append(_km_one(data.times[mask], data.events[mask], label=label))
    return curves[0], curves[1]


@dataclass(frozen=True)
class MleFit:
    """Maximum-likelihood result; estimate[0] is always the log hazard ratio
    when a treatment effect is in the model."""

    parameter_names: tuple[str, ...]
    estimate: np.ndarray
    standard_errors: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    converged: bool
    iterations: int

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.estimate)):
            raise ModelError("non-finite MLE")
        if not np.allclose(np.diag(self.covariance), self.standard_errors**2, rtol=1e-10):
            raise ValueError("covariance diagonal must equal squared standard errors")

    @property
    def log_hr(self) -> float:
        return float(self.estimate[self.parameter_names.index("log_hr")])

    @property
    def log_hr_se(self) -> float:
        return float(self.standard_errors[self.parameter_names.index("log_hr")])


def _cox_terms(data: TrialDataset):
    """Per distinct event time: deaths by arm and risk-set sizes by arm."""
    t, e, z = data.times, data.events, data.arms
    uniq = np.unique(t[e])
    d1 = np.array([np.sum((t == u) & e & (z == 1)) for u in uniq], dtype=float)
    d = np.array([np.sum((t == u) & e) for u in uniq], dtype=float)
    n1 = np.array([np.sum((t >= u) & (z == 1)) for u in uniq], dtype=float)
    n0 = np.array([np.sum((t >= u) & (z == 0)) for u in uniq], dtype=float)
    return d, d1, n0, n1


def cox_partial_loglik(data: TrialDataset, beta: float, tie_method: str = "breslow") -> float:
    """Binary-covariate Cox partial log-likelihood at ``beta``."""
    d, d1, n0, n1 = _cox_terms(data)
    eb = np.exp(beta)
    if tie_method == "breslow":
        return float(np.sum(d1 * beta - d * np.log(n0 + n1 * eb)))
    if tie_method == "efron":
        total = 0.0
        for dj, d1j, n0j, n1j in zip(d, d1, n0, n1):
            r = np.arange(dj)
            denom = (n0j + n1j * eb) - (r / dj) * ((dj - d1j) + d1j * eb)
            total += d1j * beta - np.sum(np.log(denom))
        return float(total)
    raise ValueError(f"unknown tie method {tie_method!r}")


def cox_fit(data: TrialDataset, tie_method: str = "breslow", max_iter: int = 100) -> MleFit:
    """Newton-Raphson Cox fit for the two-arm log hazard ratio.

    Ties handled by the Breslow (default) or Efron correction. Converged
    when |score| < 1e-8 or the step falls below 1e-10. Monotone partial
    likelihoods (all treatment events before all control events, or an arm
    without events) have no finite MLE and raise ModelError.
    """
    if tie_method not in ("breslow", "efron"):
        raise ValueError(f"unknown tie method {tie_method!r}")
    n0_total, n1_total = data.n_by_arm
    if n0_total == 0 or n1_total == 0:
        raise ModelError("Cox fit needs subjects in both arms")
    d, d1, n0, n1 = _cox_terms(data)

    beta, it = 0.0, 0
    converged = False
    for it in range(1, max_iter + 1):
        eb = np.exp(beta)
        if tie_method == "breslow":
            p = n1 * eb / (n0 + n1 * eb)
            score = float(np.sum(d1 - d * p))
            info = float(np.sum(d * p * (1.0 - p)))
        else:
            score, info = 0.0, 0.0
            for dj, d1j, n0j, n1j in zip(d, d1, n0, n1):
                r = np.arange(dj)
                num = n1j * eb - (r / dj) * d1j * eb
                den = (n0j + n1j * eb) - (r / dj) * ((dj - d1j) + d1j * eb)
                p = num / den
                score += d1j - float(np.sum(p))
                info += float(np.sum(p * (1.0 - p)))
        if info <= 0.0 or not np.isfinite(score):
            raise ModelError("non-finite MLE: degenerate partial likelihood")
        step = score / info
        beta += step
        if abs(beta) > _BETA_DIVERGENCE_LIMIT:
            raise ModelError(
                "non-finite MLE: monotone partial likelihood "
                f"(|log HR| exceeded {_BETA_DIVERGENCE_LIMIT})"
            )
        if abs(score) < 1e-8 or abs(step) < 1e-10:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Cox Newton-Raphson did not converge in {max_iter} iterations")

    eb = np.exp(beta)
    if tie_method == "breslow":
        p = n1 * eb / (n0 + n1 * eb)
        info = float(np.sum(d * p * (1.0 - p)))
    else:
        info = 0.0
        for dj, d1j, n0j, n1j in zip(d, d1, n0, n1):
            r = np.arange(dj)
            num = n1j * eb - (r / dj) * d1j * eb
            den = (n0j + n1j * eb) - (r / dj) * ((dj - d1j) + d1j * eb)
            p = num / den
            info += float(np.sum(p * (1.0 - p)))
    se = 1.0 / np.sqrt(info)
    return MleFit(
        parameter_names=("log_hr",),
        estimate=np.array([beta]),
        standard_errors=np.array([se]),
        covariance=np.array([[se**2]]),
        log_likelihood=cox_partial_loglik(data, beta, tie_method),
        converged=True,
        iterations=it,
    )


def _parametric_loglik_grad_hess(
    params: np.ndarray, t: np.ndarray, e: np.ndarray, z: np.ndarray, weibull: bool
):
    """Log-likelihood, gradient, Hessian for h(t|z) = shape*rate*t^(shape-1)*exp(beta*z).

    Parameter layout: [beta, log_rate] or [beta, log_rate, log_shape].
    ``beta`` is dropped (layout [log_rate] / [log_rate, log_shape]) when the
    caller fits a single-arm baseline-only model; that is signaled by z=None.
    """
    has_beta = z is not None
    idx = 0
    if has_beta:
        beta = params[0]
        idx = 1
    else:
        beta = 0.0
        z = np.zeros_like(t)
    u = params[idx]  # log rate
    v = params[idx + 1] if weibull else 0.0  # log shape
    alpha = np.exp(v)
    lam = np.exp(u)

    logt = np.log(t)
    talpha = t**alpha
    ez = np.exp(beta * z)
    H = lam * talpha * ez  # cumulative hazard per subject

    d = float(e.sum())
    ll = float(
        np.sum(e * (v + u + (alpha - 1.0) * logt + beta * z)) - np.sum(H)
    )

    # Gradient.
    g_beta = float(np.sum(e * z) - np.sum(z * H))
    g_u = float(d - np.sum(H))
    g_v = float(np.sum(e * (1.0 + alpha * logt)) - alpha * np.sum(H * logt))

    # Hessian (negative definite at interior optimum).
    h_bb = -float(np.sum(z * z * H))
    h_bu = -float(np.sum(z * H))
    h_uu = -float(np.sum(H))
    h_bv = -alpha * float(np.sum(z * H * logt))
    h_uv = -alpha * float(np.sum(H * logt))
    h_vv = float(alpha * np.sum(e * logt) - alpha * np.sum(H * logt) - alpha**2 * np.sum(H * logt**2))

    if weibull and has_beta:
        grad = np.array([g_beta, g_u, g_v])
        hess = np.array([[h_bb, h_bu, h_bv], [h_bu, h_uu, h_uv], [h_bv, h_uv, h_vv]])
    elif weibull:
        grad = np.array([g_u, g_v])
        hess = np.array([[h_uu, h_uv], [h_uv, h_vv]])
    elif has_beta:
        grad = np.array([g_beta, g_u])
        hess = np.array([[h_bb, h_bu], [h_bu, h_uu]])
    else:
        grad = np.array([g_u])
        hess = np.array([[h_uu]])
    return ll, grad, hess


def parametric_mle(data: TrialDataset, family: str, max_iter: int = 100) -> MleFit:
    """Exponential or Weibull proportional-hazards MLE via damped Newton.

    Positive parameters are optimized on the log scale. Single-arm datasets
    (all subjects in one arm) get a baseline-only fit without the treatment
    term, so e.g. the exponential rate MLE is events / total follow-up time.
    """
    if family not in ("exponential", "weibull"):
        raise ValueError(f"unknown family {family!r}")
    weibull = family == "weibull"
    t, e = data.times, data.events.astype(float)
    arms = data.arms
    has_beta = arms.min() != arms.max()
    z = arms.astype(float) if has_beta else None
    if has_beta:
        for code, label in ((0, "control"), (1, "treatment")):
            if not data.events[arms == code].any():
                raise ModelError(f"{family} MLE needs at least one event in the {label} arm")

    names: list[str] = (["log_hr"] if has_beta else []) + ["log_rate"] + (
        ["log_shape"] if weibull else []
    )
    params = np.zeros(len(names))
    params[names.index("log_rate")] = np.log(e.sum() / t.sum())

    ll, grad, hess = _parametric_loglik_grad_hess(params, t, e, z, weibull)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            raise ModelError("non-finite MLE: singular Hessian") from None
        # Backtrack if the full Newton step lowers the likelihood.
        scale = 1.0
        for _ in range(40):
            cand = params + scale * step
            ll_new, grad_new, hess_new = _parametric_loglik_grad_hess(cand, t, e, z, weibull)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        else:
            raise ConvergenceError(f"{family} MLE line search failed at iteration {it}")
        params, ll, grad, hess = cand, ll_new, grad_new, hess_new
        if np.max(np.abs(grad)) < 1e-8 or np.max(np.abs(scale * step)) < 1e-10:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"{family} MLE did not converge in {max_iter} iterations")

    cov = np.linalg.inv(-hess)
    se = np.sqrt(np.diag(cov))
    return MleFit(
        parameter_names=tuple(names),
        estimate=params,
        standard_errors=se,
        covariance=cov,
        log_likelihood=ll,
        converged=True,
        iterations=it,
    )


def parametric_log_likelihood(data: TrialDataset, family: str, params: np.ndarray) -> float:
    """Evaluate the parametric log-likelihood at [beta, log_rate(, log_shape)]."""
    weibull = family == "weibull"
    expected = 3 if weibull else 2
    params = np.asarray(params, dtype=float)
    if params.shape != (expected,):
        raise ValueError(f"{family} expects {expected} parameters, got shape {params.shape}")
    ll, _, _ = _parametric_loglik_grad_hess(
        params, data.times, data.events.astype(float), data.arms.astype(float), weibull
    )
    return ll
