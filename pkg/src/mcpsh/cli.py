"""Command-line interface.

Subcommands: ``fit`` (penalized path on a CSV), ``simulate`` (draw one
dataset from a named design), ``bench`` (Monte Carlo selection study),
``evaluate`` (split-sample prognostic performance) and ``score`` (prognostic
index from a coefficient table).

Exit codes: 0 success, 2 data error, 3 the selected fit did not converge or
the information matrix is singular, 4 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import ModelKind, read_csv, standardize_covariates, write_csv
from .errors import (ConfigError, DataError, DegenerateStratum, EmptyActiveSet, MCPSHError,
                     MissingFactor, SingularInformation, ZeroDenominator)
from .inference import MEATS, sandwich
from .objective import PSHProblem
from .penalty import FAMILIES
from .prognostics import load_coefficient_table, score_prognostic_index, split_eval
from .simulate import PENALTIES, SCENARIOS, generate, named_scenario, replication_rng, run_study
from .solver import DF_RULES, fit_path

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_DATA, EXIT_FIT, EXIT_CONFIG = 0, 2, 3, 4
MODELS = tuple(m.value for m in ModelKind)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _threads(value: Optional[int]) -> int:
    if value is not None:
        return value
    env = os.environ.get("CRR_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"CRR_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("CRR_THREADS must be at least 1")
    return n


def _floats(a) -> list:
    """Plain floats for JSON, NaN as null."""
    return [float(x) if np.isfinite(x) else None for x in np.ravel(a)]


def _dump(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, allow_nan=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _write_text(text: str, path: Optional[str]) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _parse_groups(spec: Optional[str], d: int):
    """``"1,2;3;4,5"`` (1-based covariate numbers) to a partition of 0..d-1."""
    if not spec:
        return None
    try:
        groups = [tuple(int(j) - 1 for j in part.split(",")) for part in spec.split(";") if part]
    except ValueError:
        raise ConfigError(f"cannot parse --groups {spec!r}") from None
    if sorted(j for g in groups for j in g) != list(range(d)):
        raise ConfigError(f"--groups must partition covariates 1..{d}")
    return groups


# -- fit ------------------------------------------------------------------------

def cmd_fit(args) -> int:
    ds = read_csv(args.input, allow_extra=args.allow_extra)
    transform = None
    if args.standardize:
        ds, transform = standardize_covariates(ds)
    model = ModelKind.parse(args.model)
    groups = _parse_groups(args.groups, ds.d)
    lambdas = _floats(args.lambdas) if args.lambdas else None
    problem = PSHProblem(ds, model)
    path = fit_path(problem, None, args.penalty, n_lambda=args.n_lambda, min_ratio=args.min_ratio,
                    solver=args.solver, alpha=args.alpha, gamma=args.gamma, groups=groups,
                    lambdas=lambdas, df=args.df)

    def coef(b):
        return _floats(transform.coef_to_original(b) if transform else b)

    per_lambda = [{"lambda": float(lam), "beta": coef(f.beta), "active_set": list(f.active),
                   "loglik": f.loglik, "df": f.df_for(args.df), "bic": f.bic_for(args.df),
                   "converged": f.converged, "iterations": f.n_iter}
                  for lam, f in zip(path.lambdas, path.fits)]
    sel = path.selected
    selected = {"lambda": float(path.lambdas[path.best]), "beta": coef(sel.beta),
                "active_set": list(sel.active), "se": [], "covariance": []}
    message = sel.message
    try:
        rep = sandwich(sel, problem, meat=args.meat)
        cov = rep.covariance
        if transform:
            cov = transform.cov_to_original(cov, rep.active)
        selected["se"] = _floats(np.sqrt(np.clip(np.diag(cov), 0.0, None)))
        selected["covariance"] = [_floats(row) for row in cov]
    except EmptyActiveSet:
        pass
    out = {
        "schema_version": SCHEMA_VERSION,
        "model": model.value,
        "penalty": {"family": args.penalty, "alpha": args.alpha, "gamma": args.gamma,
                    "groups": [list(g) for g in groups] if groups else None},
        "lambda_grid": _floats(path.lambdas),
        "path": per_lambda,
        "selected_index": int(path.best),
        "selected": selected,
        "diagnostics": {"n": ds.n, "d": ds.d, "K": ds.K, "n_events": problem.n_events,
                        "converged": sel.converged, "message": message, "df_rule": args.df,
                        "meat": args.meat, "standardized": bool(args.standardize),
                        "solver": args.solver, "version": __version__},
    }
    _dump(out, args.output)
    if not sel.converged:
        print(f"selected fit did not converge: {message}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


# -- simulate / bench -----------------------------------------------------------

def _scenario(args):
    size = args.center_size
    if size is not None:
        parts = [int(x) for x in size.split(",")]
        size = parts[0] if len(parts) == 1 else tuple(parts)
    try:
        return named_scenario(args.scenario, n=args.n, K=args.K, center_size=size,
                              alpha=args.alpha, model=args.model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    ds = generate(sc, replication_rng(args.seed, args.rep))
    if args.output in (None, "-"):
        raise ConfigError("simulate needs --output")
    write_csv(ds, args.output)
    return EXIT_OK


def cmd_bench(args) -> int:
    sc = _scenario(args)
    penalties = tuple(p.strip().lower() for p in args.penalties.split(",") if p.strip())
    bad = [p for p in penalties if p not in PENALTIES]
    if bad:
        raise ConfigError(f"unknown penalties {bad}; choose from {PENALTIES}")
    rules = tuple(r.strip() for r in args.df.split(","))
    if any(r not in DF_RULES for r in rules):
        raise ConfigError(f"--df must be among {DF_RULES}")
    res = run_study(sc, args.reps, args.seed, penalties, workers=_threads(args.threads), df_rules=rules)
    _write_text(res.to_csv() if args.format == "csv" else res.to_text() + "\n", args.output)
    return EXIT_OK


# -- evaluate / score -----------------------------------------------------------

def cmd_evaluate(args) -> int:
    ds = read_csv(args.input, allow_extra=args.allow_extra)
    if args.standardize:
        ds, _ = standardize_covariates(ds)
    model = ModelKind.parse(args.model)
    if model is ModelKind.STRATIFIED_HIGH:
        print("prediction error is not computed for stratified-high: the baseline cumulative "
              "subdistribution hazard cannot be estimated with many small strata", file=sys.stderr)
    rep = split_eval(ds, model, args.penalty, splits=args.splits, train_fraction=args.train_fraction,
                     seed=args.seed, horizon=args.horizon, df=args.df)
    out = {"schema_version": SCHEMA_VERSION, "model": model.value, "penalty": args.penalty,
           "splits": args.splits, "train_fraction": args.train_fraction, "seed": args.seed,
           "metrics": rep.summary(), "failed_splits": rep.failed, "excluded_from_pe": rep.excluded,
           "messages": rep.messages}
    _dump(out, args.output)
    return EXIT_OK


def cmd_score(args) -> int:
    table = load_coefficient_table(args.table)
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{args.input}: no rows")
    names = {f["covariate"] for f in table["factors"]}
    cols = {}
    for name in names:
        if name not in rows[0]:
            continue
        try:
            cols[name] = np.array([float(r[name]) for r in rows])
        except ValueError as exc:
            raise DataError(f"{args.input}: column {name!r}: {exc}") from None
    pi, index = score_prognostic_index(table, cols)
    pi, index = np.atleast_1d(pi), np.atleast_1d(index)
    lines = ["id,pi,index"]
    for i, r in enumerate(rows):
        lines.append(f"{r.get('id', i + 1)},{pi[i]:.6f},{index[i]:.6f}")
    _write_text("\n".join(lines) + "\n", args.output)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _add_common_fit(p, penalty_default: str):
    p.add_argument("--input", required=True, help="CSV with columns id,center,time,status,z1..zd")
    p.add_argument("--model", required=True, choices=MODELS, help="model kind")
    p.add_argument("--penalty", default=penalty_default, choices=FAMILIES, help="penalty family")
    p.add_argument("--df", default="trace", choices=DF_RULES,
                   help="degrees of freedom in BIC: LQA trace or number of nonzero coefficients")
    p.add_argument("--standardize", action="store_true",
                   help="center and scale covariates before fitting; coefficients are reported "
                        "on the original scale")
    p.add_argument("--allow-extra", action="store_true", help="ignore unrecognised CSV columns")
    p.add_argument("--output", "-o", default=None, help="output path (default stdout)")


def _add_scenario(p):
    p.add_argument("--scenario", required=True, choices=SCENARIOS, type=str, help="named design")
    p.add_argument("--n", type=int, default=None, help="sample size (three-center designs)")
    p.add_argument("--K", type=int, default=None, help="number of centers (frailty designs)")
    p.add_argument("--center-size", default=None,
                   help="center size, or comma-separated sizes drawn uniformly per center")
    p.add_argument("--alpha", type=float, default=None, help="positive stable index")
    p.add_argument("--model", default=None, choices=MODELS, help="fitted model where a design has several")
    p.add_argument("--seed", type=int, required=True, help="master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcpsh", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog="Exit codes: 0 ok, 2 data error, 3 fit failure, 4 configuration error. "
                            "CRR_THREADS sets the default for --threads.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a penalized path and report the BIC choice")
    _add_common_fit(p, "scad")
    p.add_argument("--alpha", type=float, default=3.7, help="SCAD shape (> 2)")
    p.add_argument("--gamma", type=float, default=2.7, help="MCP shape (> 1)")
    p.add_argument("--n-lambda", type=int, default=50, help="grid size")
    p.add_argument("--min-ratio", type=float, default=1e-3, help="smallest lambda over lambda_max")
    p.add_argument("--lambdas", type=float, nargs="+", default=None, help="explicit decreasing grid")
    p.add_argument("--solver", default="auto", choices=("auto", "lqa", "cd"), help="path solver")
    p.add_argument("--groups", default=None, help='covariate groups, e.g. "1,2;3;4,5"')
    p.add_argument("--meat", default="corrected", choices=MEATS,
                   help="sandwich meat with or without the censoring-estimation term")
    p.add_argument("--threads", type=int, default=None, help="accepted for uniformity; fits are serial")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="draw one dataset from a named design")
    _add_scenario(p)
    p.add_argument("--rep", type=int, default=0, help="replication index")
    p.add_argument("--output", "-o", default=None, help="CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="Monte Carlo selection study on a named design")
    _add_scenario(p)
    p.add_argument("--reps", type=int, default=100, help="replications")
    p.add_argument("--penalties", default=",".join(PENALTIES), help="comma-separated families")
    p.add_argument("--df", default="trace",
                   help=f"BIC degrees-of-freedom rule(s), comma-separated from {DF_RULES}")
    p.add_argument("--threads", type=int, default=None, help="worker processes")
    p.add_argument("--format", default="csv", choices=("csv", "text"), help="table format")
    p.add_argument("--output", "-o", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("evaluate", help="split-sample C-index, D-index and prediction error")
    _add_common_fit(p, "scad")
    p.add_argument("--splits", type=int, default=100, help="number of random splits")
    p.add_argument("--train-fraction", type=float, default=0.8, help="training share")
    p.add_argument("--horizon", type=float, default=None, help="prediction-error horizon")
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--threads", type=int, default=None, help="accepted for uniformity; splits are serial")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score", help="prognostic index from a coefficient table")
    p.add_argument("--input", required=True, help="CSV with one column per covariate (optional id)")
    p.add_argument("--table", default=None, help="coefficient table JSON (default: bundled donor index)")
    p.add_argument("--output", "-o", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors exit 4 from _Parser.error; --help and --version exit 0
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DegenerateStratum, MissingFactor, ZeroDenominator, OSError) as exc:
        print(f"data error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularInformation, MCPSHError) as exc:
        print(f"fit error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_FIT
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
