# cli.py
"""
Command-line front end.

    python cli.py fit --data obs.csv --m 1 --p 1 --family student_t --nu 5
    python cli.py test --data obs.csv --m 1 --p 1 --beta 0=1.0
    python cli.py simulate --config configs/null_normal.cfg --out results/null_normal
    python cli.py discrepancy --report results/null_normal.json --index 0 --out results/null_normal_qq

JSON goes to stdout, a table rendering to stderr. Any failure exits with
code 1 and a single `error: <Name>: <message>` line on stderr.
"""
import argparse
import sys
from dataclasses import replace

from dotenv import load_dotenv

load_dotenv()

from elliptical import KINDS, family_from_settings
from helpers.dataset_csv import load_dataset
from helpers.report_io import (dumps, read_json, render_fit_table, render_rates_table,
                               render_test_table, sim_report_payload, statistic_values,
                               write_curve_csv, write_json, write_rates_csv)
from likelihood import aic, fit_mle, information_diagnostics, standard_errors
from model import HypothesisSpec
from skovgaard import lr_test
from simulate import FULL_REPS, discrepancy_curve, load_sim_config, run_null_grid, run_power_study
from utils import QUIET, parse_assignments


def _emit(payload, table: str, out: str = None):
    print(dumps(payload))
    if out:
        write_json(out, payload)
    if table and not QUIET:
        print(table, file=sys.stderr)


def _family(args):
    return family_from_settings(args.family, args.nu, args.lam, args.m + args.p)


def cmd_fit(args) -> int:
    data = load_dataset(args.data, args.m, args.p)
    fam = _family(args)
    fit = fit_mle(data, fam)
    se = standard_errors(fit)
    payload = {
        "family": fam.label,
        "n": data.n,
        "fit": fit.to_dict(),
        "standard_errors": se.tolist(),
        "aic": aic(fit),
        "diagnostics": information_diagnostics(fit.observed_info),
    }
    table = render_fit_table(data.dims.names(), fit.theta_hat.theta, se)
    _emit(payload, table, args.out)
    return 0


def cmd_test(args) -> int:
    pairs = parse_assignments(args.beta)
    if not pairs:
        raise ValueError("test needs at least one --beta index=value")
    hyp = HypothesisSpec.from_pairs(pairs)
    data = load_dataset(args.data, args.m, args.p)
    fam = _family(args)
    report = lr_test(data, fam, hyp)
    payload = {"family": fam.label, "n": data.n, **report.to_dict()}
    _emit(payload, render_test_table(report), args.out)
    return 0


def cmd_simulate(args) -> int:
    reps = FULL_REPS if args.full else args.reps
    config = load_sim_config(args.config, reps)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        config = replace(config, **overrides)

    if args.power or (config.power_grid and not args.null):
        reports = run_power_study(config)
    else:
        reports = run_null_grid(config)
    payload = sim_report_payload(reports if len(reports) > 1 or args.power else reports[0])
    if args.out:
        write_rates_csv(args.out + ".csv", reports)
    _emit(payload, render_rates_table(reports), args.out + ".json" if args.out else None)
    return 0


def cmd_discrepancy(args) -> int:
    q, values = statistic_values(read_json(args.report), args.index)
    written = {}
    for stat, vals in values.items():
        curve = discrepancy_curve(vals, q)
        path = f"{args.out}_{stat}.csv"
        write_curve_csv(path, curve)
        written[stat] = path
    _emit({"q": q, "files": written}, "\n".join(f"{k}: {v}" for k, v in written.items()))
    return 0


def _add_model_flags(p):
    p.add_argument("--data", required=True, help="CSV with one observation per row")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--family", choices=KINDS, default="normal")
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--out", default=None, help="also write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cli.py", description="Errors-in-variables fits and adjusted LR tests")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum likelihood fit")
    _add_model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="LR, LR*a and LR**a for H0: vec(beta)[i] = v")
    _add_model_flags(p)
    p.add_argument("--beta", nargs="+", action="extend", default=[], metavar="I=V")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="Monte Carlo rejection rates")
    p.add_argument("--config", required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--full", action="store_true", help=f"use {FULL_REPS} replications")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--power", action="store_true", help="run the power grid")
    group.add_argument("--null", action="store_true", help="null study even if a power grid is set")
    p.add_argument("--out", default=None, help="output prefix for .json and .csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("discrepancy", help="quantile relative discrepancy curves")
    p.add_argument("--report", required=True, help="JSON written by simulate")
    p.add_argument("--out", required=True, help="output prefix, one CSV per statistic")
    p.add_argument("--index", type=int, default=0, help="which report of a multi-report file")
    p.set_defaults(func=cmd_discrepancy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("error: KeyboardInterrupt: stopped by user", file=sys.stderr)
        return 1
    except Exception as e:
        msg = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
