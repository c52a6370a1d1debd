"""Command-line interface.

Subcommands: fit (batch model fitting from a TOML config), forest (re-emit
forest artifacts from a summary.json), diagnose (convergence gate on a
chains CSV), simulate (write a synthetic trial CSV), bootstrap (stratified
resample of a trial CSV).

Exit codes: 0 success, 2 configuration error, 3 convergence failure,
4 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .data import SimSpec, bootstrap_stratified, load_csv, simulate_trial, write_csv
from .diagnostics import DiagnosticThresholds, diagnose
from .errors import ConfigError, ConvergenceError, DataError, SurvBayesError
from .flexible import spline_knot_search
from .mcmc import ChainSet
from .report import (
    diagnostics_record,
    diagnostics_to_json,
    forest_data_csv,
    forest_svg,
    format_summary_table,
    summaries_from_json,
    write_text,
)
from .run import PRESETS, execute_run, load_dataset, load_run_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_DATA = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survbayes",
        description="Bayesian proportional-hazards analysis of two-arm survival trials",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the models listed in a TOML config")
    p_fit.add_argument("--config", required=True, help="TOML run configuration")
    p_fit.add_argument("--out", help="output directory (overrides [run].out_dir)")
    p_fit.add_argument("--seed", type=int, help="top-level seed (overrides [mcmc].seed)")
    p_fit.add_argument("--chains", type=int, help="number of chains")
    p_fit.add_argument("--iter", type=int, dest="iterations", help="total iterations per chain")
    p_fit.add_argument("--burnin", type=float, help="burn-in fraction in (0,1)")
    p_fit.add_argument("--thin", type=int, help="thinning interval")
    p_fit.add_argument(
        "--time-scale",
        type=float,
        help="multiply all times by this factor (e.g. 0.0833 for months to years)",
    )
    p_fit.add_argument(
        "--allow-nonconverged",
        action="store_true",
        default=None,
        help="exit 0 even when fits fail convergence diagnostics",
    )
    p_fit.add_argument(
        "--spline-k-grid",
        help="comma-separated knot counts; run the spline deviance search and report it",
    )

    p_forest = sub.add_parser("forest", help="emit forest plot artifacts from a summary.json")
    p_forest.add_argument("--summary", required=True, help="summary.json from a fit run")
    p_forest.add_argument("--out", required=True, help="output directory")

    p_diag = sub.add_parser("diagnose", help="convergence diagnostics for a chains CSV")
    p_diag.add_argument("--chains", required=True, help="chains CSV (chain,iteration,params...)")
    p_diag.add_argument("--out", help="directory for diagnostics.json (default: print only)")
    p_diag.add_argument("--rhat-max", type=float, default=1.05)
    p_diag.add_argument("--ess-ratio-min", type=float, default=0.5)
    p_diag.add_argument("--min-saved", type=int, default=1000)
    p_diag.add_argument(
        "--ess-params",
        help="comma-separated parameter names the ESS criterion applies to "
        "(default: log_hr, else the first parameter)",
    )

    p_sim = sub.add_parser("simulate", help="simulate a two-arm trial to CSV")
    p_sim.add_argument("--n-control", type=int, required=True)
    p_sim.add_argument("--n-treatment", type=int, required=True)
    p_sim.add_argument("--log-hr", type=float, required=True, help="true log hazard ratio")
    p_sim.add_argument("--rate", type=float, default=1.0, help="baseline rate parameter")
    p_sim.add_argument("--shape", type=float, default=1.0, help="Weibull shape (1 = constant hazard)")
    p_sim.add_argument("--cutoff", type=float, help="administrative censoring time")
    p_sim.add_argument("--censor-rate", type=float, default=0.0)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output CSV path")

    p_boot = sub.add_parser("bootstrap", help="stratified bootstrap resample of a trial CSV")
    p_boot.add_argument("--data", required=True, help="input trial CSV")
    p_boot.add_argument("--seed", type=int, default=0)
    p_boot.add_argument("--out", required=True, help="output CSV path")

    return parser


def _cmd_fit(args: argparse.Namespace) -> int:
    overrides = {
        "out_dir": args.out,
        "seed": args.seed,
        "chains": args.chains,
        "iterations_total": args.iterations,
        "burnin_fraction": args.burnin,
        "thin": args.thin,
        "time_scale": args.time_scale,
        "allow_nonconverged": args.allow_nonconverged,
    }
    config = load_run_config(args.config, overrides)
    if args.spline_k_grid:
        try:
            ks = tuple(int(k) for k in args.spline_k_grid.split(","))
        except ValueError:
            raise ConfigError(f"--spline-k-grid must be comma-separated integers, got {args.spline_k_grid!r}")
        data = load_dataset(config)
        rows = spline_knot_search(data, ks, config.mcmc)
        os.makedirs(config.out_dir, exist_ok=True)
        write_text(
            os.path.join(config.out_dir, "spline_k_search.json"),
            json.dumps({"grid": rows}, sort_keys=True, indent=2) + "\n",
        )
        for row in rows:
            print(
                f"K={row['k']:>3}  mean deviance {row['mean_deviance']:.2f}  "
                f"params {row['n_params']:>2}  score {row['score']:.2f}  "
                f"converged {row['converged']}"
            )
    try:
        results = execute_run(config)
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        with open(os.path.join(config.out_dir, "summary.txt"), encoding="utf-8") as fh:
            print(fh.read(), end="")
        return EXIT_CONVERGENCE
    print(format_summary_table([r.summary for r in results], config.level), end="")
    print(f"artifacts written to {config.out_dir}")
    return EXIT_OK


def _cmd_forest(args: argparse.Namespace) -> int:
    try:
        with open(args.summary, encoding="utf-8") as fh:
            summaries = summaries_from_json(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"summary file not found: {args.summary}") from None
    if not summaries:
        raise ConfigError(f"{args.summary}: no models in summary")
    os.makedirs(args.out, exist_ok=True)
    write_text(os.path.join(args.out, "forest.csv"), forest_data_csv(summaries))
    write_text(os.path.join(args.out, "forest.svg"), forest_svg(summaries))
    print(f"forest.csv and forest.svg written to {args.out}")
    return EXIT_OK


def _cmd_diagnose(args: argparse.Namespace) -> int:
    chains = ChainSet.from_csv(args.chains)
    ess_params = tuple(args.ess_params.split(",")) if args.ess_params else None
    th = DiagnosticThresholds(
        rhat_max=args.rhat_max,
        ess_ratio_min=args.ess_ratio_min,
        min_saved_per_chain=args.min_saved,
        ess_params=ess_params,
    )
    diag = diagnose(chains, th)
    record = diagnostics_record(os.path.basename(args.chains), diag)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_text(os.path.join(args.out, "diagnostics.json"), diagnostics_to_json([record]))
    for p in record["parameters"]:
        rhat = "nan" if p["rhat"] is None else f"{p['rhat']:.4f}"
        print(f"{p['name']:>16}  rhat {rhat}  ess {p['ess']:.0f}  ess_ratio {p['ess_ratio']:.3f}")
    if diag.passed:
        print("diagnostics: PASS")
        return EXIT_OK
    print("diagnostics: FAIL")
    for reason in diag.failures:
        print(f"  - {reason}")
    return EXIT_CONVERGENCE


def _cmd_simulate(args: argparse.Namespace) -> int:
    spec = SimSpec(
        n_control=args.n_control,
        n_treatment=args.n_treatment,
        true_log_hr=args.log_hr,
        rate=args.rate,
        shape=args.shape,
        cutoff=args.cutoff,
        censor_rate=args.censor_rate,
        seed=args.seed,
    )
    data = simulate_trial(spec)
    write_csv(data, args.out)
    n0, n1 = data.n_by_arm
    print(f"wrote {len(data)} subjects ({n0} control, {n1} treatment), {data.n_events} events to {args.out}")
    return EXIT_OK


def _cmd_bootstrap(args: argparse.Namespace) -> int:
    data = load_csv(args.data)
    resampled = bootstrap_stratified(data, seed=args.seed)
    write_csv(resampled, args.out)
    print(f"wrote stratified resample ({len(resampled)} subjects, {resampled.n_events} events) to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "forest": _cmd_forest,
    "diagnose": _cmd_diagnose,
    "simulate": _cmd_simulate,
    "bootstrap": _cmd_bootstrap,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except SurvBayesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
