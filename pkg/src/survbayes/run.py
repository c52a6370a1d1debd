"""Run orchestration: TOML configuration, the model preset catalog, batch
fitting, and artifact emission.

All randomness in a run flows from one top-level seed: model i derives its
sampler seed from SeedSequence(seed, spawn_key=(0, i)); a simulated dataset
without an explicit seed uses spawn_key=(1,). Within a model the sampler
derives chain c's stream from model_seed + c. Identical configs therefore
produce byte-identical artifacts regardless of fit order.
"""

from __future__ import annotations

import json
import math
import os
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import conjugate as cj
from .data import SimSpec, TrialDataset, load_csv, simulate_trial
from .diagnostics import Diagnostics, DiagnosticThresholds
from .errors import ConfigError, ConvergenceError
from .flexible import SplineHazardSpec, TbpSpec, fit_spline_hazard, fit_tbp, spline_spec_for_data
from .frequentist import cox_fit
from .mcmc import ChainSet, McmcConfig
from .parametric import PARAMETRIC_PRESETS, ParametricPriorSpec, fit_parametric
from .pem import PemPriorSpec, TimePartition, build_partition, fit_pem
from .report import (
    diagnostics_record,
    diagnostics_to_json,
    forest_data_csv,
    forest_svg,
    format_summary_table,
    summaries_to_json,
    write_text,
)
from .summary import PosteriorSummary, summarize_conjugate

# Preset catalog: model kinds and their default options. "kind" selects the
# fitting routine; remaining keys are defaults the config may override.
PRESETS: dict[str, dict[str, Any]] = {
    "conjugate-skeptical": {"kind": "conjugate", "prior_mean": 0.0, "prior_n0": 10.0},
    "conjugate-enthusiastic": {
        "kind": "conjugate",
        "prior_mean": math.log(0.64),
        "prior_n0": 10.0,
    },
    "conjugate-vague": {"kind": "conjugate", "prior_mean": 0.0, "prior_sd": 10.0},
    "exponential": {"kind": "parametric", "family": "exponential", "priors": "default"},
    "exponential-survhe": {"kind": "parametric", "family": "exponential", "priors": "survhe"},
    "exponential-inla": {"kind": "parametric", "family": "exponential", "priors": "inla"},
    "weibull": {"kind": "parametric", "family": "weibull", "priors": "default", "mcmc_factor": 2},
    "weibull-survhe": {
        "kind": "parametric",
        "family": "weibull",
        "priors": "survhe",
        "mcmc_factor": 2,
    },
    "weibull-inla": {
        "kind": "parametric",
        "family": "weibull",
        "priors": "inla",
        "mcmc_factor": 2,
    },
    "pem": {"kind": "pem", "partition": "quantile", "intervals": 10, "prior_style": "ml_centered"},
    "pem-deciles": {
        "kind": "pem",
        "partition": "quantile",
        "intervals": 10,
        "prior_style": "ml_centered",
    },
    "pem-failuretimes": {
        "kind": "pem",
        "partition": "failure_times",
        "prior_style": "diffuse",
        "beta_prior_sd": 1.0,
    },
    "tbp-weibull": {"kind": "tbp", "centering": "weibull", "L": 15, "mcmc_factor": 2},
    "tbp-loglogistic": {"kind": "tbp", "centering": "loglogistic", "L": 15, "mcmc_factor": 2},
    "tbp-lognormal": {"kind": "tbp", "centering": "lognormal", "L": 15, "mcmc_factor": 2},
    "spline": {"kind": "spline", "k": 20, "mcmc_factor": 2},
}


@dataclass(frozen=True)
class ModelSpec:
    """One requested model: a preset name plus option overrides."""

    preset: str
    label: str | None = None
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(
                f"unknown model preset {self.preset!r}; valid presets: "
                + ", ".join(sorted(PRESETS))
            )

    @property
    def effective_label(self) -> str:
        return self.label or self.preset

    def resolved(self) -> dict[str, Any]:
        opts = dict(PRESETS[self.preset])
        opts.update(self.options)
        return opts


@dataclass(frozen=True)
class RunConfig:
    """Everything one `fit` invocation needs."""

    models: tuple[ModelSpec, ...]
    csv_path: str | None = None
    column_map: dict[str, str] | None = None
    sim: SimSpec | None = None
    sim_seed_explicit: bool = False
    time_unit: str = "months"
    time_scale: float = 1.0
    mcmc: McmcConfig = McmcConfig()
    hr_thresholds: tuple[float, ...] = (1.5,)
    level: float = 0.95
    out_dir: str = "survbayes-out"
    allow_nonconverged: bool = False
    thresholds: DiagnosticThresholds | None = None

    def __post_init__(self) -> None:
        if not self.models:
            raise ConfigError("config lists no models")
        if (self.csv_path is None) == (self.sim is None):
            raise ConfigError("config needs exactly one data source: a CSV path or a simulation")
        if not self.time_scale > 0:
            raise ConfigError(f"time_scale must be positive, got {self.time_scale}")
        labels = [m.effective_label for m in self.models]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate model labels: {labels}")
        if any(not c > 0 for c in self.hr_thresholds):
            raise ConfigError("hazard-ratio thresholds must be positive")


def _derive_seed(top_seed: int, spawn_key: tuple[int, ...]) -> int:
    return int(np.random.SeedSequence(top_seed, spawn_key=spawn_key).generate_state(1, np.uint64)[0])


def load_dataset(config: RunConfig) -> TrialDataset:
    if config.csv_path is not None:
        data = load_csv(config.csv_path, column_map=config.column_map, time_unit=config.time_unit)
    else:
        sim = config.sim
        if not config.sim_seed_explicit:
            sim = replace(sim, seed=_derive_seed(config.mcmc.seed, (1,)))
        data = simulate_trial(sim)
    if config.time_scale != 1.0:
        data = data.rescaled(config.time_scale)
    return data


@dataclass
class FitResult:
    spec: ModelSpec
    summary: PosteriorSummary
    chains: ChainSet | None = None
    diagnostics: Diagnostics | None = None


def _model_mcmc_config(cfg: McmcConfig, model_index: int, factor: int = 1) -> McmcConfig:
    # Slow-mixing presets scale iterations and thinning together, keeping the
    # saved-draw count and burn-in fraction fixed while the autocorrelation of
    # the saved draws falls.
    return replace(
        cfg,
        seed=_derive_seed(cfg.seed, (0, model_index)),
        iterations_total=cfg.iterations_total * factor,
        thin=cfg.thin * factor,
    )


_ALLOWED_OPTIONS = {
    "conjugate": {"kind", "prior_mean", "prior_n0", "prior_sd", "estimate", "sd"},
    "parametric": {"kind", "family", "priors", "beta_prior_sd", "mcmc_factor"},
    "pem": {
        "kind",
        "partition",
        "intervals",
        "prior_style",
        "r0",
        "beta_prior_sd",
        "cutpoints",
        "mcmc_factor",
    },
    "tbp": {"kind", "centering", "L", "beta_prior_sd", "fix_alpha", "mcmc_factor"},
    "spline": {"kind", "k", "knots", "mcmc_factor"},
}


def fit_model(
    data: TrialDataset, mspec: ModelSpec, config: RunConfig, model_index: int
) -> FitResult:
    """Dispatch one ModelSpec to its fitting routine."""
    opts = mspec.resolved()
    kind = opts["kind"]
    label = mspec.effective_label
    unknown = set(opts) - _ALLOWED_OPTIONS[kind]
    if unknown:
        raise ConfigError(
            f"model {label!r}: unknown options {sorted(unknown)} for kind {kind!r}; "
            f"allowed: {sorted(_ALLOWED_OPTIONS[kind] - {'kind'})}"
        )
    mcfg = _model_mcmc_config(config.mcmc, model_index, int(opts.get("mcmc_factor", 1)))
    hr = config.hr_thresholds
    th = config.thresholds

    if kind == "conjugate":
        start = time.perf_counter()
        if "prior_sd" in opts:
            prior = cj.NormalPrior(mean=float(opts["prior_mean"]), sd=float(opts["prior_sd"]))
        else:
            prior = cj.prior_from_n0(float(opts["prior_mean"]), float(opts["prior_n0"]))
        if "estimate" in opts or "sd" in opts:
            if not ("estimate" in opts and "sd" in opts):
                raise ConfigError(f"model {label!r}: estimate and sd must be given together")
            like = cj.NormalLikelihoodSummary(float(opts["estimate"]), float(opts["sd"]))
        else:
            fit = cox_fit(data)
            like = cj.NormalLikelihoodSummary(fit.log_hr, fit.log_hr_se)
        post = cj.conjugate_update(prior, like)
        summ = summarize_conjugate(
            post, label, hr, config.level, runtime_seconds=time.perf_counter() - start
        )
        return FitResult(spec=mspec, summary=summ)

    if kind == "parametric":
        priors = opts["priors"]
        if isinstance(priors, str):
            if priors not in PARAMETRIC_PRESETS:
                raise ConfigError(
                    f"unknown parametric prior preset {priors!r}; valid: "
                    + ", ".join(sorted(PARAMETRIC_PRESETS))
                )
            priors = PARAMETRIC_PRESETS[priors]
        if "beta_prior_sd" in opts:
            priors = ParametricPriorSpec(
                beta_prior=cj.NormalPrior(0.0, float(opts["beta_prior_sd"])),
                intercept_prior=priors.intercept_prior,
                shape_prior=priors.shape_prior,
            )
        res = fit_parametric(
            data, opts["family"], priors, mcfg, hr_thresholds=hr, thresholds=th, label=label
        )
        return FitResult(mspec, res.summary, res.chains, res.diagnostics)

    if kind == "pem":
        if "cutpoints" in opts:
            partition = TimePartition(tuple(float(c) for c in opts["cutpoints"]), method="explicit")
        else:
            partition = build_partition(
                data, opts.get("partition", "quantile"), int(opts.get("intervals", 10))
            )
        pp_kwargs: dict[str, Any] = {"style": opts.get("prior_style", "ml_centered")}
        if "r0" in opts:
            pp_kwargs["r0"] = float(opts["r0"])
        if "beta_prior_sd" in opts:
            pp_kwargs["beta_prior"] = cj.NormalPrior(0.0, float(opts["beta_prior_sd"]))
        res = fit_pem(
            data, partition, PemPriorSpec(**pp_kwargs), mcfg, hr_thresholds=hr, thresholds=th, label=label
        )
        return FitResult(mspec, res.summary, res.chains, res.diagnostics)

    if kind == "tbp":
        spec = TbpSpec(
            L=int(opts.get("L", 15)),
            centering=opts.get("centering", "weibull"),
        )
        if "beta_prior_sd" in opts:
            spec = TbpSpec(
                L=spec.L,
                centering=spec.centering,
                beta_prior=cj.NormalPrior(0.0, float(opts["beta_prior_sd"])),
            )
        res = fit_tbp(
            data,
            spec,
            mcfg,
            fix_alpha=opts.get("fix_alpha"),
            hr_thresholds=hr,
            thresholds=th,
            label=label,
        )
        return FitResult(mspec, res.summary, res.chains, res.diagnostics)

    if kind == "spline":
        if "knots" in opts:
            spec = SplineHazardSpec(knots=tuple(float(x) for x in opts["knots"]))
        else:
            spec = spline_spec_for_data(data, k=int(opts.get("k", 20)))
        res = fit_spline_hazard(data, spec, mcfg, hr_thresholds=hr, thresholds=th, label=label)
        return FitResult(mspec, res.summary, res.chains, res.diagnostics)

    raise ConfigError(f"unknown model kind {kind!r}")


def execute_run(config: RunConfig) -> list[FitResult]:
    """Fit every configured model and write all artifacts to out_dir.

    Artifacts: summary.json, summary.txt, forest.csv, forest.svg,
    diagnostics.json, per-model <label>.chains.csv, timings.json (the only
    non-deterministic file). Raises ConvergenceError after writing artifacts
    if any MCMC fit failed its diagnostics and allow_nonconverged is False.
    """
    data = load_dataset(config)
    os.makedirs(config.out_dir, exist_ok=True)
    results = [fit_model(data, m, config, i) for i, m in enumerate(config.models)]

    summaries = [r.summary for r in results]
    write_text(os.path.join(config.out_dir, "summary.json"), summaries_to_json(summaries, config.level))
    write_text(
        os.path.join(config.out_dir, "summary.txt"), format_summary_table(summaries, config.level)
    )
    write_text(os.path.join(config.out_dir, "forest.csv"), forest_data_csv(summaries))
    write_text(os.path.join(config.out_dir, "forest.svg"), forest_svg(summaries, config.level))
    diag_records = [
        diagnostics_record(r.summary.label, r.diagnostics)
        for r in results
        if r.diagnostics is not None
    ]
    write_text(os.path.join(config.out_dir, "diagnostics.json"), diagnostics_to_json(diag_records))
    for r in results:
        if r.chains is not None:
            r.chains.to_csv(os.path.join(config.out_dir, f"{r.summary.label}.chains.csv"))
    timings = {
        r.summary.label: r.summary.runtime_seconds
        for r in results
        if r.summary.runtime_seconds is not None
    }
    write_text(
        os.path.join(config.out_dir, "timings.json"),
        json.dumps(timings, sort_keys=True, indent=2) + "\n",
    )

    bad = [r.summary.label for r in results if not r.summary.converged]
    if bad and not config.allow_nonconverged:
        raise ConvergenceError(
            "fits failed convergence diagnostics: "
            + ", ".join(bad)
            + " (artifacts written; rerun with --allow-nonconverged to accept)"
        )
    return results


# ---------------------------------------------------------------------------
# TOML configuration.
# ---------------------------------------------------------------------------

def _require_table(obj: Any, name: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"[{name}] must be a table")
    return obj


def load_run_config(path: str, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Parse a TOML run config; ``overrides`` (from CLI flags) replace
    individual fields after parsing.

    Schema: [data] with either csv = "path" or a [data.simulate] table;
    optional [data.columns] remapping; [mcmc] chains/iterations/
    burnin_fraction/thin/seed; [run] out_dir/hr_thresholds/level/time_scale/
    allow_nonconverged; one [[model]] table per fit with preset = "name",
    optional label, and preset-specific options.
    """
    overrides = overrides or {}
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from None

    data_tbl = _require_table(raw.get("data", {}), "data")
    csv_path = data_tbl.get("csv")
    column_map = data_tbl.get("columns")
    time_unit = data_tbl.get("time_unit", "months")
    sim = None
    sim_seed_explicit = False
    if "simulate" in data_tbl:
        sim_tbl = _require_table(data_tbl["simulate"], "data.simulate")
        sim_seed_explicit = "seed" in sim_tbl
        known = {
            "n_control",
            "n_treatment",
            "true_log_hr",
            "rate",
            "shape",
            "cutoff",
            "censor_rate",
            "seed",
        }
        unknown = set(sim_tbl) - known
        if unknown:
            raise ConfigError(f"[data.simulate]: unknown fields {sorted(unknown)}")
        try:
            sim = SimSpec(time_unit=time_unit, **sim_tbl)
        except TypeError as exc:
            raise ConfigError(f"[data.simulate]: {exc}") from None

    mcmc_tbl = _require_table(raw.get("mcmc", {}), "mcmc")
    mcmc_kwargs = {}
    for toml_key, attr in (
        ("chains", "chains"),
        ("iterations", "iterations_total"),
        ("burnin_fraction", "burnin_fraction"),
        ("thin", "thin"),
        ("seed", "seed"),
    ):
        if toml_key in mcmc_tbl:
            mcmc_kwargs[attr] = mcmc_tbl[toml_key]
    unknown = set(mcmc_tbl) - {"chains", "iterations", "burnin_fraction", "thin", "seed"}
    if unknown:
        raise ConfigError(f"[mcmc]: unknown fields {sorted(unknown)}")
    for attr in ("chains", "iterations_total", "thin", "seed"):
        if attr in overrides and overrides[attr] is not None:
            mcmc_kwargs[attr] = overrides[attr]
    if overrides.get("burnin_fraction") is not None:
        mcmc_kwargs["burnin_fraction"] = overrides["burnin_fraction"]
    mcmc = McmcConfig(**mcmc_kwargs)

    run_tbl = _require_table(raw.get("run", {}), "run")
    unknown = set(run_tbl) - {
        "out_dir",
        "hr_thresholds",
        "level",
        "time_scale",
        "allow_nonconverged",
    }
    if unknown:
        raise ConfigError(f"[run]: unknown fields {sorted(unknown)}")

    models = []
    for i, m in enumerate(raw.get("model", [])):
        m = dict(_require_table(m, f"model[{i}]"))
        preset = m.pop("preset", None)
        if preset is None:
            raise ConfigError(f"model[{i}]: missing preset; valid presets: " + ", ".join(sorted(PRESETS)))
        label = m.pop("label", None)
        models.append(ModelSpec(preset=preset, label=label, options=m))

    cfg = RunConfig(
        models=tuple(models),
        csv_path=csv_path,
        column_map=column_map,
        sim=sim,
        sim_seed_explicit=sim_seed_explicit,
        time_unit=time_unit,
        time_scale=float(
            overrides.get("time_scale") or run_tbl.get("time_scale", 1.0)
        ),
        mcmc=mcmc,
        hr_thresholds=tuple(float(c) for c in run_tbl.get("hr_thresholds", [1.5])),
        level=float(run_tbl.get("level", 0.95)),
        out_dir=overrides.get("out_dir") or run_tbl.get("out_dir", "survbayes-out"),
        allow_nonconverged=bool(
            overrides.get("allow_nonconverged")
            if overrides.get("allow_nonconverged") is not None
            else run_tbl.get("allow_nonconverged", False)
        ),
    )
    return cfg
