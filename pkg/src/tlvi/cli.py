"""Command-line front end: ``tlvi estimate | simulate | check-eif``.

Every flag can also be set through an environment variable named
``TLVI_<FLAG>`` (upper case, dashes as underscores); command-line values
win. Exit codes: 0 success, 1 input or configuration error, 2 statistical
warning (non-convergence, degeneracy, failed check).
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .conddens import DensityConfig
from .data import load_csv, make_split
from .eif import IMPORTANCE_KINDS, LOSS_KINDS
from .estimators import (
    EstimateReport,
    estimate_kfold,
    estimate_onestep,
    estimate_plugin,
    estimate_tmle,
    wald_ci,
)
from .learners import LearnerConfig
from .sim import ESTIMATORS, SimConfig, plot_svg, run_experiment
from .verify import TOLERANCE, check_eif

ENV_PREFIX = "TLVI_"
EXIT_OK, EXIT_INPUT, EXIT_STAT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _model_flags(p, m_default):
    p.add_argument("--learner", choices=("ridge", "knn"), default="ridge", help="prediction learner")
    p.add_argument("--penalty", type=float, default=1e-6, help="ridge penalty on the mean loss")
    p.add_argument("--k", type=int, default=None, help="kNN neighbours (default ceil(sqrt(n)))")
    p.add_argument("--density", choices=("gaussian", "partition"), default="gaussian",
                   help="conditional density model")
    p.add_argument("--m", type=int, default=m_default, help="support points per conditional law")
    p.add_argument("--min-leaf", type=int, default=25, help="partition density leaf size")
    p.add_argument("--alpha", type=float, default=0.05, help="CI level is 1 - alpha")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--max-iter", type=int, default=100, help="targeting iteration cap")
    p.add_argument("--no-i3", dest="use_i3", action="store_false",
                   help="take the TMLE standard error from the targeting fold")
    p.add_argument("--fixed-learner-eif", dest="regression_term", action="store_false",
                   help="omit the regression-variation term from the influence function")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tlvi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tlvi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimate an importance on a CSV file")
    est.add_argument("--data", required=True, help="input CSV with a header row")
    est.add_argument("--response-col", default="y", help="response column")
    est.add_argument("--interest-col", required=True, help="covariate whose importance is estimated")
    est.add_argument("--estimand", choices=IMPORTANCE_KINDS + LOSS_KINDS, default="condperm")
    est.add_argument("--estimator", choices=ESTIMATORS, default="tmle")
    est.add_argument("--K", type=int, default=3, help="number of folds")
    est.add_argument("--crossfit", action="store_true", help="rotate fold roles and average")
    est.add_argument("--tol-kind", choices=("tmle-standard", "strict"), default="tmle-standard")
    est.add_argument("--output", help="CSV path for the report")
    est.add_argument("--trace-output", help="CSV path for the targeting trace")
    _model_flags(est, 256)

    sim = sub.add_parser("simulate", help="coverage and bias study on simulated data")
    sim.add_argument("--rho", type=float, nargs="+", default=[0.1, 0.5, 0.9], help="correlation grid")
    sim.add_argument("--reps", type=_positive_int, default=40)
    sim.add_argument("--n", type=int, default=500)
    sim.add_argument("--beta", type=float, default=5.0, help="signal coefficient")
    sim.add_argument("--estimand", choices=("condperm",), default="condperm")
    sim.add_argument("--estimators", nargs="+", choices=ESTIMATORS, default=["onestep", "tmle"])
    sim.add_argument("--K", type=int, default=3, help="number of split parts")
    sim.add_argument("--output-dir", default=".", help="directory for rows.csv and aggregates.csv")
    sim.add_argument("--plot", action="store_true", help="also write coverage_bias.svg")
    sim.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    _model_flags(sim, 64)

    chk = sub.add_parser("check-eif", help="compare influence functions with finite differences")
    chk.add_argument("--trials", type=int, default=100)
    chk.add_argument("--kinds", nargs="+", choices=tuple(TOLERANCE), default=list(TOLERANCE))
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--step", type=float, default=1e-5, help="finite-difference step")
    chk.add_argument("--regression-term", action="store_true",
                     help="check the influence functions that track the regression")

    for p in (est, sim, chk):
        _apply_env(p)
    return parser


def _apply_env(parser: argparse.ArgumentParser) -> None:
    """Replace defaults by ``TLVI_*`` environment values."""
    for action in parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        key = ENV_PREFIX + action.option_strings[-1].lstrip("-").replace("-", "_").upper()
        if key not in os.environ:
            continue
        raw = os.environ[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = raw.strip().lower() in ("1", "true", "yes", "on")
            value = value if isinstance(action, argparse._StoreTrueAction) else not value
        elif action.nargs == "+":
            value = [action.type(v) if action.type else v for v in raw.split()]
        else:
            value = action.type(raw) if action.type else raw
        action.default = value
        action.required = False


def _header(args) -> str:
    items = {k: v for k, v in sorted(vars(args).items())}
    return f"# tlvi {__version__} " + " ".join(f"{k}={_cfg_value(v)}" for k, v in items.items()) + "\n"


def _cfg_value(v) -> str:
    if isinstance(v, list):
        return ",".join(map(str, v))
    return str(v)


def _configs(args):
    learner = LearnerConfig(args.learner, args.penalty, args.k)
    density = DensityConfig(args.density, args.m, args.min_leaf)
    return learner, density


def cmd_estimate(args, out=None) -> int:
    out = out or sys.stdout
    wald_ci(0.0, 0.0, args.alpha)
    data = load_csv(args.data, args.response_col, args.interest_col)
    learner, density = _configs(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.crossfit:
            report = estimate_kfold(data, args.K, args.estimand, args.estimator, learner, density,
                                    args.alpha, args.seed, args.max_iter, args.use_i3,
                                    args.regression_term, args.tol_kind)
        else:
            plan = make_split(data.n, args.K, args.seed)
            if args.estimator == "tmle":
                report = estimate_tmle(data, plan, args.estimand, learner, density, args.alpha,
                                       args.seed, args.max_iter, args.use_i3, args.regression_term,
                                       args.tol_kind)
            else:
                fn = estimate_onestep if args.estimator == "onestep" else estimate_plugin
                report = fn(data, plan, args.estimand, learner, density, args.alpha, args.seed,
                            args.regression_term)
    for w in caught:
        print(f"tlvi: warning: {w.message}", file=sys.stderr)
    out.write(report.to_text() + "\n")
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(_header(args))
            fh.write(EstimateReport.csv_header() + "\n" + report.to_csv_row() + "\n")
    if args.trace_output and report.trace is not None:
        with open(args.trace_output, "w", newline="") as fh:
            fh.write(_header(args))
            fh.write("\n".join(report.trace.csv_rows()) + "\n")
    return EXIT_STAT if (not report.converged or report.degenerate) else EXIT_OK


def cmd_simulate(args, out=None) -> int:
    out = out or sys.stdout
    wald_ci(0.0, 0.0, args.alpha)
    learner, density = _configs(args)
    cfg = SimConfig(args.estimand, learner, density, args.alpha, args.K, args.max_iter,
                    args.use_i3, args.beta, args.regression_term)
    result = run_experiment(args.rho, args.reps, args.n, args.estimators, cfg, args.seed, args.threads)
    result.check()
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    # worker count and destination do not affect results, so they stay out of the header
    kept = {k: v for k, v in vars(args).items() if k not in ("threads", "output_dir")}
    header = _header(argparse.Namespace(**kept))
    for name, text in (("rows.csv", result.rows_csv()), ("aggregates.csv", result.aggregates_csv())):
        with open(outdir / name, "w", newline="") as fh:
            fh.write(header + text)
    if args.plot:
        plot_svg(result, outdir / "coverage_bias.svg", args.alpha)
    out.write(result.aggregates_csv())
    troubled = any(a["failed"] or a["nonconverged"] for a in result.aggregates)
    return EXIT_STAT if troubled else EXIT_OK


def cmd_check_eif(args, out=None) -> int:
    out = out or sys.stdout
    rows = check_eif(args.trials, args.kinds, args.seed, args.step, args.regression_term)
    out.write("kind,trials,max_rel_err,max_mean_eif,tolerance,status\n")
    for r in rows:
        status = "pass" if r.passed else "FAIL"
        out.write(f"{r.kind},{r.trials},{r.max_rel_err:.3e},{r.max_mean_eif:.3e},{r.tolerance:g},{status}\n")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_STAT


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "check-eif": cmd_check_eif}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{exc}\nrun 'tlvi --help' for usage", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        module = type(exc).__module__.rpartition(".")[2]
        where = module if module not in ("builtins", "") else "error"
        print(f"tlvi: {where}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
