"""Command-line interface: ``fit``, ``diagnose``, ``simulate`` and ``press-plot``.

Exit codes: 0 success (a non-converged fit is still a success and reports
``converged: false``), 2 usage error, 3 data error, 4 numerical error.
Errors are written to stderr as a JSON object.
"""

import argparse
import json
import sys

from .data import load_csv
from .diagnostics import SST_RESPONSES, diagnose, press_plot_data
from .errors import BetaPressError, ConfigError, DataError
from .estimation import fit
from .io import ModelConfig, dump_json, load_config, report_payload, write_table
from .simulation import SCENARIO_IDS, build_scenario, run_monte_carlo

__all__ = ["main"]

EXIT_CODES = {"usage": 2, "data": 3, "numerical": 4}


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors share the JSON path."""

    def error(self, message):
        raise ConfigError(message)


def _model_arguments(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--response", default="y", help="response column (default: y)")
    p.add_argument("--config", help="JSON model config (single model or candidate list)")
    p.add_argument("--candidate", help="candidate name inside --config")
    p.add_argument("--mean", help="mean predictor, e.g. 'b1 + b2*x1'")
    p.add_argument("--mean-link", help="logit or loglog")
    p.add_argument("--prec", help="precision predictor (default: g1)")
    p.add_argument("--prec-link", help="log, sqrt or identity")
    p.add_argument("--out", help="output path (default: stdout)")


def _diagnostic_arguments(p):
    p.add_argument("--penalty", choices=("covariates", "parameters"), default="covariates",
                   help="count used for k1 and q1 in the penalized coefficients")
    p.add_argument("--sst-response", choices=SST_RESPONSES, default="predictor",
                   help="working response for the total sum of squares")


def build_parser():
    parser = _Parser(prog="betapress", description="Beta regression with PRESS-based model selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="maximum likelihood fit")
    _model_arguments(p)

    p = sub.add_parser("diagnose", help="residuals, PRESS, P2 and R2 statistics")
    _model_arguments(p)
    _diagnostic_arguments(p)
    p.add_argument("--csv", help="per-observation CSV output path")

    p = sub.add_parser("press-plot", help="combined PRESS components with the 3*mean threshold")
    _model_arguments(p)

    p = sub.add_parser("simulate", help="Monte Carlo summary for a catalog scenario")
    p.add_argument("--scenario", required=True, help=f"one of {', '.join(SCENARIO_IDS)}")
    p.add_argument("--n", type=int, required=True, help="sample size")
    level = p.add_mutually_exclusive_group(required=True)
    level.add_argument("--phi", type=float, help="precision level (fixed-precision scenarios)")
    level.add_argument("--lambda", dest="lam", type=float, help="dispersion-intensity level")
    p.add_argument("--reps", type=int, default=1000, help="replications (default: 1000)")
    p.add_argument("--seed", type=int, default=0, help="replication seed (default: 0)")
    p.add_argument("--regime", choices=("mid", "high", "low"), default="mid", help="mean regime of s1-s4")
    p.add_argument("--estimated", choices=("misspecified", "true"), default="misspecified",
                   help="fitted model of the nonlinear scenarios")
    p.add_argument("--design-seed", type=int, help="override the catalog design seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--dump", help="per-replication CSV output path")
    p.add_argument("--out", help="output path (default: stdout)")
    _diagnostic_arguments(p)
    return parser


def _model_config(args):
    cfg = load_config(args.config, args.candidate) if args.config else None
    if cfg is None:
        if not args.mean:
            raise ConfigError("give --mean or --config")
        cfg = ModelConfig(mean=args.mean)
    if args.mean:
        cfg.mean = args.mean
    if args.mean_link:
        cfg.mean_link = args.mean_link
    if args.prec:
        cfg.precision = args.prec
    if args.prec_link:
        cfg.precision_link = args.prec_link
    return cfg


def _fit_from_args(args):
    cfg = _model_config(args)
    try:
        data = load_csv(args.data, args.response)
    except OSError as exc:
        raise DataError(f"cannot read {args.data}: {exc.strerror}") from None
    model = cfg.model(data.schema)
    return cfg, fit(model, data, cfg.fit_options())


def _fit_payload(result):
    out = result.to_dict()
    out.pop("u1")
    out.pop("weights")
    return out


def _cmd_fit(args, argv):
    _, result = _fit_from_args(args)
    dump_json(report_payload(_fit_payload(result), "fit", argv), args.out)


def _cmd_diagnose(args, argv):
    _, result = _fit_from_args(args)
    payload = {"fit": _fit_payload(result)}
    if result.converged:
        report = diagnose(result, penalty=args.penalty, response=args.sst_response)
        payload["diagnostics"] = report.to_dict()
        payload["observations"] = [dict(zip(report.CSV_COLUMNS, row)) for row in report.rows()]
        if args.csv:
            write_table(report.CSV_COLUMNS, report.rows(), args.csv)
    else:
        payload["diagnostics"] = None
    dump_json(report_payload(payload, "diagnose", argv), args.out)


def _cmd_press_plot(args, argv):
    _, result = _fit_from_args(args)
    table = press_plot_data(result)
    rows = zip(table["t"].tolist(), table["component"].tolist(), table["threshold"].tolist(),
               table["flagged"].astype(int).tolist())
    write_table(("t", "component", "threshold", "flagged"), rows, args.out)


def _cmd_simulate(args, argv):
    spec = build_scenario(args.scenario, regime=args.regime, estimated=args.estimated, design_seed=args.design_seed)
    level = args.phi if args.phi is not None else args.lam
    summary = run_monte_carlo(
        spec, args.n, level, R=args.reps, seed=args.seed, workers=args.workers,
        penalty=args.penalty, response=args.sst_response, keep_rows=bool(args.dump),
    )
    if args.dump:
        summary.write_rows(args.dump)
    result = summary.to_dict()
    result["design_seed"] = spec.design_seed
    result["regime"] = args.regime
    result["estimated"] = {"mean": spec.estimated_mean, "precision": spec.estimated_precision}
    dump_json(report_payload(result, "simulate", argv), args.out)


_COMMANDS = {"fit": _cmd_fit, "diagnose": _cmd_diagnose, "press-plot": _cmd_press_plot, "simulate": _cmd_simulate}


def _report_error(exc):
    body = {"type": type(exc).__name__, "category": exc.category, "message": str(exc)}
    body.update(exc.details())
    sys.stderr.write(json.dumps({"error": body}, sort_keys=True, default=str) + "\n")
    return EXIT_CODES[exc.category]


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        _COMMANDS[args.command](args, argv)
    except BetaPressError as exc:
        return _report_error(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
