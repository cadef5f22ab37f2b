"""Command-line front end: fit, tune, deselect, simulate, and report.

Every subcommand writes its artifacts (plus the fully resolved configuration)
under ``--out``; outputs carry no timestamps, so reruns with the same seed
are byte-identical.  Options can also come from a plain ``key=value`` config
file via ``--config``; explicit flags override file values.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from .baselearners import LearnerSpec
from .data import DataError, NumericsError, load_csv
from .deselection import deselect_boost
from .engine import BoostConfig, coefficient_paths, fit_any, save_fit
from .families import get_family
from .simulation import RESULT_COLUMNS, ScenarioSpec, run_study
from .tuning import cv_curve, mstop_opt, mstop_ose, mstop_probing, mstop_robustc

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_tokens(path: str) -> list[str]:
    """Turn key=value lines into CLI tokens (booleans become bare flags)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}: {exc}") from exc
    tokens: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"malformed config line (expected key=value): {line!r}")
        key, _, value = line.partition("=")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                tokens.append(flag)
        else:
            tokens.extend([flag, value])
    return tokens


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file tokens in right after the subcommand so that
    explicit flags (which come later) take precedence."""
    rest: list[str] = []
    config_path = None
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config requires a path")
            config_path = argv[i + 1]
            i += 2
        elif arg.startswith("--config="):
            config_path = arg.split("=", 1)[1]
            i += 1
        else:
            rest.append(arg)
            i += 1
    if config_path is None:
        return rest
    if not rest:
        raise UsageError("--config requires a subcommand")
    return [rest[0]] + _config_tokens(config_path) + rest[1:]


def _add_model_options(parser, with_response=True):
    if with_response:
        parser.add_argument("--response", required=True, help="response column name")
    parser.add_argument("--family", default="l2",
                        choices=["l2", "logistic", "gaussian-ls", "beta"])
    parser.add_argument("--learner", default="linear", choices=["linear", "pspline"])
    parser.add_argument("--knots", type=int, default=20, help="interior knots (pspline)")
    parser.add_argument("--degree", type=int, default=3, help="spline degree")
    parser.add_argument("--diff-order", type=int, default=2, help="penalty difference order")
    parser.add_argument("--df", type=float, default=4.0, help="spline degrees of freedom")
    parser.add_argument("--nu", type=float, default=0.1, help="step size")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)


def _add_out_option(parser):
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--config", help="key=value config file; flags override")


def build_parser() -> _Parser:
    parser = _Parser(prog="deboost",
                     description="component-wise gradient boosting with deselection")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", parents=[], help="fit a boosting model on a CSV")
    p_fit.add_argument("csv", help="input CSV with a header row")
    _add_model_options(p_fit)
    p_fit.add_argument("--mstop", type=int, help="fixed number of boosting iterations")
    p_fit.add_argument("--cv", type=int, help="tune m_stop by k-fold cross-validation")
    p_fit.add_argument("--mmax", type=int, default=1000, help="CV iteration grid limit")
    _add_out_option(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_tune = sub.add_parser("tune", help="choose a stopping iteration")
    p_tune.add_argument("csv")
    _add_model_options(p_tune)
    p_tune.add_argument("--rule", default="opt",
                        choices=["opt", "ose", "robustc", "probing"])
    p_tune.add_argument("--c", type=float,
                        help="RobustC multiplier (default 1.05, 1.1 for logistic)")
    p_tune.add_argument("--folds", type=int, default=10)
    p_tune.add_argument("--mmax", type=int, default=1000)
    _add_out_option(p_tune)
    p_tune.set_defaults(func=cmd_tune)

    p_desel = sub.add_parser("deselect", help="fit, deselect, and refit")
    p_desel.add_argument("csv")
    _add_model_options(p_desel)
    p_desel.add_argument("--tau", type=float, default=0.01,
                         help="deselection threshold in (0, 1)")
    p_desel.add_argument("--method", default="attributable",
                         choices=["attributable", "cumulative"])
    p_desel.add_argument("--retune", action="store_true",
                         help="re-run CV for the refit instead of reusing m_stop")
    p_desel.add_argument("--folds", type=int, default=10)
    p_desel.add_argument("--mmax", type=int, default=1000)
    _add_out_option(p_desel)
    p_desel.set_defaults(func=cmd_deselect)

    p_sim = sub.add_parser("simulate", help="run a replication study")
    p_sim.add_argument("--scenario", default="A", choices=["A", "B", "C", "D"])
    p_sim.add_argument("--n", type=int, default=500)
    p_sim.add_argument("--p", type=int, default=20)
    p_sim.add_argument("--rho", type=float, default=0.5)
    p_sim.add_argument("--cov", default="toeplitz", choices=["toeplitz", "block"])
    p_sim.add_argument("--block-size", type=int, default=10)
    p_sim.add_argument("--snr", type=float, help="signal-to-noise ratio (scenario A)")
    p_sim.add_argument("--ntest", type=int, default=1000)
    p_sim.add_argument("--reps", type=int, default=1)
    p_sim.add_argument("--methods", default="classical,deselect(0.01)",
                       help="comma-separated method labels")
    p_sim.add_argument("--folds", type=int, default=10)
    p_sim.add_argument("--mmax", type=int, default=1000)
    p_sim.add_argument("--nu", type=float, default=0.1)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--threads", type=int, default=1)
    _add_out_option(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="aggregate a study results.csv")
    p_rep.add_argument("results", help="results.csv produced by simulate")
    _add_out_option(p_rep)
    p_rep.set_defaults(func=cmd_report)

    return parser


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(args, out: Path) -> None:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    with open(out / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=1, default=str)


def _build_config(args, m_stop: int) -> BoostConfig:
    spec = LearnerSpec(kind=args.learner, n_knots=args.knots, degree=args.degree,
                       diff_order=args.diff_order, df=args.df)
    return BoostConfig(family=get_family(args.family), m_stop=m_stop, nu=args.nu,
                       learners=spec, seed=args.seed)


def _write_fit(fit, out: Path, stem: str) -> None:
    save_fit(fit, out / f"{stem}.json")


def cmd_fit(args) -> None:
    if (args.mstop is None) == (args.cv is None):
        raise UsageError("exactly one of --mstop and --cv is required")
    data = load_csv(args.csv, args.response)
    config = _build_config(args, args.mstop if args.mstop is not None else 0)
    if args.cv is not None:
        curve = cv_curve(data, config, n_folds=args.cv, m_max=args.mmax,
                         seed=args.seed, n_jobs=args.threads)
        config = replace(config, m_stop=mstop_opt(curve))
    fit = fit_any(data, config)

    out = _outdir(args)
    _echo_config(args, out)
    _write_fit(fit, out, "model")
    pd.DataFrame({"iteration": np.arange(fit.m_stop + 1), "risk": fit.risk_path()}) \
        .to_csv(out / "risk_path.csv", index=False)
    coefficient_paths(fit).to_csv(out / "coef_paths.csv")


def cmd_tune(args) -> None:
    data = load_csv(args.csv, args.response)
    config = _build_config(args, args.mmax)
    chosen = {"rule": args.rule, "m_max": args.mmax}
    curve = None
    if args.rule == "probing":
        chosen["mstop"] = mstop_probing(data, config, seed=args.seed)
    else:
        curve = cv_curve(data, config, n_folds=args.folds, m_max=args.mmax,
                         seed=args.seed, n_jobs=args.threads)
        chosen["folds"] = args.folds
        if args.rule == "opt":
            chosen["mstop"] = mstop_opt(curve)
        elif args.rule == "ose":
            chosen["mstop"] = mstop_ose(curve)
        else:
            c = args.c if args.c is not None else (1.1 if args.family == "logistic" else 1.05)
            if c < 1.0:
                raise UsageError("--c must be at least 1")
            chosen["c"] = c
            chosen["mstop"] = mstop_robustc(curve, c)

    out = _outdir(args)
    _echo_config(args, out)
    if curve is not None:
        curve.to_frame().to_csv(out / "cv_curve.csv", index=False)
    with open(out / "mstop.json", "w", encoding="utf-8") as fh:
        json.dump(chosen, fh, sort_keys=True, indent=1)


def cmd_deselect(args) -> None:
    if not 0.0 < args.tau < 1.0:
        raise UsageError("--tau must lie strictly between 0 and 1")
    data = load_csv(args.csv, args.response)
    config = _build_config(args, args.mmax)
    initial, report, final = deselect_boost(
        data, config, tau=args.tau, method=args.method, retune=args.retune,
        n_folds=args.folds, m_max=args.mmax, seed=args.seed, n_jobs=args.threads,
    )

    out = _outdir(args)
    _echo_config(args, out)
    _write_fit(initial, out, "initial_model")
    report.to_frame().to_csv(out / "deselection_report.csv", index=False)
    with open(out / "deselection_report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
    _write_fit(final, out, "final_model")


def _split_methods(text: str) -> list[str]:
    """Split a method list on commas that are outside parentheses."""
    parts, depth, current = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return [p.strip() for p in parts if p.strip()]


def cmd_simulate(args) -> None:
    spec = ScenarioSpec(scenario=args.scenario, n=args.n, p=args.p, rho=args.rho,
                        cov=args.cov, snr=args.snr, n_test=args.ntest,
                        block_size=args.block_size)
    try:
        methods = _split_methods(args.methods)
        table = run_study(spec, methods, replications=args.reps, seed=args.seed,
                          n_folds=args.folds, m_max=args.mmax, nu=args.nu,
                          n_jobs=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _outdir(args)
    _echo_config(args, out)
    table.to_csv(out / "results.csv", index=False)


def cmd_report(args) -> None:
    try:
        table = pd.read_csv(args.results)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read results file: {exc}") from exc
    missing = [c for c in RESULT_COLUMNS if c not in table.columns]
    if missing:
        raise DataError(f"results file is missing columns: {missing}")

    group_keys = ["scenario", "method", "tau", "metric_name"]
    summary = (
        table.groupby(group_keys, dropna=False)
        .agg(
            replications=("replication", "nunique"),
            metric_mean=("metric_value", "mean"),
            metric_sd=("metric_value", "std"),
            tp_mean=("tp", "mean"),
            tp_sd=("tp", "std"),
            fp_mean=("fp", "mean"),
            fp_sd=("fp", "std"),
            mstop_mean=("mstop_used", "mean"),
        )
        .reset_index()
    )

    long_rows = []
    id_cols = ["replication", "scenario", "method", "tau"]
    for keys, group in table.groupby(id_cols, dropna=False):
        ident = dict(zip(id_cols, keys))
        first = group.iloc[0]
        for quantity in ("tp", "fp", "tp_mu", "fp_mu", "tp_sigma", "fp_sigma", "mstop_used"):
            value = first[quantity]
            if pd.notna(value):
                long_rows.append({**ident, "quantity": quantity, "value": value})
        for _, row in group.iterrows():
            long_rows.append({**ident, "quantity": row["metric_name"],
                              "value": row["metric_value"]})
    long = pd.DataFrame(long_rows,
                        columns=id_cols + ["quantity", "value"])

    out = _outdir(args)
    _echo_config(args, out)
    summary.to_csv(out / "summary.csv", index=False)
    long.to_csv(out / "report_long.csv", index=False)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        argv = _expand_config(argv)
        args = build_parser().parse_args(argv)
        args.func(args)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericsError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
