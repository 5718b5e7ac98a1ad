"""Command-line interface: ``optsub <verb> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Outputs go only to the paths given with ``--out`` (standard output
otherwise); every random choice is driven by ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .dataset import CsvSchema, Dataset, load_csv
from .errors import DataError, OptsubError
from .model import FAMILIES, leverage_l
from .optprob import defensive_mix, opt_probs_poisson, opt_probs_withreplacement
from .pipeline import fit_full, run_poisson, run_withreplacement

SCHEME_ALIASES = {"R": "with_replacement", "with_replacement": "with_replacement", "P": "poisson", "poisson": "poisson"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _scheme(text: str) -> str:
    try:
        return SCHEME_ALIASES[text]
    except KeyError:
        raise argparse.ArgumentTypeError(f"scheme must be one of {sorted(SCHEME_ALIASES)}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_data_args(p):
    g = p.add_argument_group("data (a CSV file, or a synthetic design when --data is absent)")
    g.add_argument("--data", help="headed CSV file")
    g.add_argument("--response", default="y", help="response column (default: y)")
    g.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    g.add_argument("--trials", help="binomial trial-count column")
    g.add_argument("--intercept", action="store_true", help="prepend an intercept column to CSV data")
    g.add_argument("--lenient", action="store_true", help="skip malformed CSV rows instead of failing")
    g.add_argument("--model", choices=("linear", "logistic"), default="logistic")
    g.add_argument("--n", type=int, default=10_000)
    g.add_argument("--d", type=int, default=9, help="number of covariates besides the intercept")
    g.add_argument("--law", choices=ex.LAWS, default="normal")
    g.add_argument("--nu", type=float, default=3.0, help="degrees of freedom of the t law")
    p.add_argument("--family", choices=sorted(FAMILIES), help="model family (default: from --model)")


def _load(args) -> tuple[str, Dataset]:
    if args.data:
        schema = CsvSchema(
            response=args.response,
            covariates=tuple(c.strip() for c in args.covariates.split(",")) if args.covariates else None,
            trials=args.trials,
            add_intercept=args.intercept,
            strict=not args.lenient,
        )
        data = load_csv(args.data, schema)
    else:
        data = ex.generate(ex.GeneratorSpec(args.model, args.n, args.d, args.law, args.nu), args.seed)
    fam = args.family or ("ols" if args.model == "linear" else "logistic")
    return fam, data


def _emit(rows, out: str | None) -> None:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    if out:
        Path(out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


# -- verbs -------------------------------------------------------------------------


def cmd_fit_full(args) -> None:
    fam, data = _load(args)
    rep = fit_full(fam, data)
    names = data.names or tuple(f"theta_{j}" for j in range(data.d))
    rows = [("parameter", "estimate")] + [(nm, repr(float(v))) for nm, v in zip(names, rep.theta)]
    _emit(rows, args.out)
    print(f"converged in {rep.iterations} iterations, |gradient|={rep.grad_norm:.3g}", file=sys.stderr)


def cmd_subsample_fit(args) -> None:
    fam, data = _load(args)
    L = leverage_l(data) if args.l_mode == "leverage" else None
    if args.scheme == "with_replacement":
        res = run_withreplacement(fam, data, int(args.s0), int(args.s), args.alpha, L=L, seed=args.seed)
    else:
        res = run_poisson(fam, data, args.s0, args.s, args.alpha, args.b, args.h_mode, L=L, seed=args.seed)
    _emit([res.csv_header(), res.to_csv_row()], args.out)


def cmd_plan(args) -> None:
    if args.norms is None and args.norms_file is None:
        raise UsageError("plan needs --norms or --norms-file")
    if args.norms_file:
        t = np.loadtxt(args.norms_file, delimiter=",", ndmin=1)
    else:
        t = np.asarray(args.norms)
    if args.scheme == "poisson":
        if args.s is None:
            raise UsageError("a Poisson plan needs --s")
        plan = opt_probs_poisson(t, args.s)
        print(f"g={plan.threshold.g}")
        print(f"H={plan.threshold.H!r}")
    else:
        plan = opt_probs_withreplacement(t)
    if args.alpha:
        plan = defensive_mix(plan, args.alpha)
    print("pi=" + ",".join(repr(float(p)) for p in plan.pi))
    if args.out:
        plan.to_csv(args.out)


CONFIG_FLAGS = [f.name for f in fields(ex.ExperimentConfig)]


def cmd_mse(args) -> None:
    overrides = {k: getattr(args, f"cfg_{k}") for k in CONFIG_FLAGS}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = ex.load_config(args.config, **overrides)
    try:
        table = ex.monte_carlo_mse(cfg, threads=args.threads)
    except OptsubError as err:
        table = getattr(err, "table", None)
        if table is not None and cfg.out:
            table.to_csv(cfg.out)
        raise
    _emit(table.csv_rows(), cfg.out or None)


def cmd_g_table(args) -> None:
    rows = ex.g_table(args.laws.split(","), args.ratios, args.n, args.d, args.seed)
    _emit(ex.g_table_rows(rows), args.out)


def cmd_coverage(args) -> None:
    spec = ex.GeneratorSpec(args.model, args.n, args.d, args.law, args.nu)
    rep = ex.coverage_check(spec, args.scheme, args.s, args.T, args.seed, alpha=args.alpha)
    _emit(rep.csv_rows(), args.out)


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="optsub", description="Optimal subsampling for M-estimation.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("fit-full", help="full-data M-estimate")
    _add_data_args(p)
    p.add_argument("--seed", type=int, default=0, help="seed for synthetic data")
    p.add_argument("--out", help="output CSV (parameter,estimate)")
    p.set_defaults(func=cmd_fit_full)

    p = sub.add_parser("subsample-fit", help="two-stage optimal subsample estimate")
    _add_data_args(p)
    p.add_argument("--scheme", type=_scheme, required=True, help="with_replacement (R) or poisson (P)")
    p.add_argument("--s0", type=float, required=True, help="(expected) pilot size")
    p.add_argument("--s", type=float, required=True, help="(expected) second-stage size")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--b", type=float, default=5.0)
    p.add_argument("--h-mode", choices=("quantile", "infinity"), default="quantile")
    p.add_argument("--l-mode", choices=("grad_norm", "leverage"), default="grad_norm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV (one result row)")
    p.set_defaults(func=cmd_subsample_fit)

    p = sub.add_parser("plan", help="optimal probabilities for given norms")
    p.add_argument("--scheme", type=_scheme, required=True)
    p.add_argument("--s", type=float, help="expected subsample size (Poisson)")
    p.add_argument("--norms", type=_float_list, help="comma-separated norms")
    p.add_argument("--norms-file", help="file with one norm per line")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; plans are deterministic")
    p.add_argument("--out", help="sidecar CSV (index,pi)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("mse-experiment", help="Monte Carlo MSE comparison")
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: available CPUs)")
    for f in fields(ex.ExperimentConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f"cfg_{f.name}", action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, dest=f"cfg_{f.name}", default=None)
    p.set_defaults(func=cmd_mse, cfg_seed=None)

    p = sub.add_parser("g-table", help="capped counts g of optimal Poisson plans for OLS")
    p.add_argument("--laws", default="normal,t5,t4,t3,t2,t1")
    p.add_argument("--ratios", type=_float_list, default=[0.02, 0.03, 0.05, 0.1, 0.2, 0.5])
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV (law,ratio,g)")
    p.set_defaults(func=cmd_g_table)

    p = sub.add_parser("coverage", help="normal-limit coverage of oracle-plan estimators")
    p.add_argument("--model", choices=("linear", "logistic"), default="linear")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--law", choices=ex.LAWS, default="normal")
    p.add_argument("--nu", type=float, default=3.0)
    p.add_argument("--scheme", type=_scheme, required=True)
    p.add_argument("--s", type=int, default=500)
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV")
    p.set_defaults(func=cmd_coverage)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except np.linalg.LinAlgError as err:
        print(f"optsub: {type(err).__name__}: {err}", file=sys.stderr)
        return 3
    except (UsageError, ValueError) as err:
        print(f"optsub: usage error: {err}", file=sys.stderr)
        return 1
    except (DataError, OSError) as err:
        print(f"optsub: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except OptsubError as err:
        print(f"optsub: {type(err).__name__}: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
