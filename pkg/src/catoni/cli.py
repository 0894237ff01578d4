"""Command-line interface.

Subcommands: ``estimate`` (robust location of a CSV column), ``regress``
(robust linear regression with feasibility diagnostics), ``simulate``
(run one experiment config), ``validate-phi`` (envelope check of an
influence function).

Exit codes are a stable contract: 0 success, 2 input/parse error, 3 numeric
failure (non-convergence, degenerate or singular input), 4 invalid flag
combination, 5 harness abort, 6 envelope validation failure.  All numeric
output is printed with 17 significant digits, locale-independent.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from . import __version__
from .errors import (CatoniError, ConfigError, DegenerateSampleError,
                     DomainError, HarnessAbortError, NonConvergenceError,
                     SingularGramError)
from .harness import config_from_dict, run_experiment
from .influence import influence_by_name, validate_envelope
from .mean import MeanConfig, build_ci, solve_mean, solve_self_normalized
from .regression import (RegressionConfig, RegressionProblem, feasibility,
                         solve_regression)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_FLAGS = 4
EXIT_HARNESS = 5
EXIT_VALIDATION = 6


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _emit(pairs) -> None:
    for key, value in pairs:
        print(f"{key} = {_fmt(value)}")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _read_csv(path):
    """CSV with a header row, comma separator, '.' decimals, no quoting."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row and any(tok.strip() for tok in row)]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return header, rows


def _numeric_column(path, header, rows, name):
    if name not in header:
        raise ValueError(f"{path}: no column named '{name}'")
    j = header.index(name)
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        try:
            out[i] = float(row[j])
        except (IndexError, ValueError):
            raise ValueError(
                f"{path}: row {i + 2}, column '{name}' is not a finite number"
            ) from None
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{path}: column '{name}' contains non-finite values")
    return out


# ---------------------------------------------------------------------------
# estimate


def _cmd_estimate(args) -> int:
    if args.alpha is not None and args.self_normalized:
        return _fail(EXIT_FLAGS, "--alpha cannot be combined with "
                                 "--self-normalized (the tuning is a_n/sigma_hat)")
    if args.alpha is not None and args.a_n is not None:
        return _fail(EXIT_FLAGS, "give --alpha or --a-n, not both")
    try:
        phi = influence_by_name(args.phi)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    try:
        header, rows = _read_csv(args.input)
        values = _numeric_column(args.input, header, rows, args.column)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))

    cfg = MeanConfig(phi=phi, alpha=args.alpha, a_n=args.a_n, tol=args.tol)
    try:
        if args.self_normalized:
            est = solve_self_normalized(values, cfg)
            sigma_source = "sample"
            alpha_used = cfg.a_n_value(values.size) / est.sigma_used
        elif args.alpha is not None:
            est = solve_mean(values, cfg, sigma=args.sigma)
            sigma_source = "known" if args.sigma is not None else "sample"
            alpha_used = args.alpha
        else:
            if args.sigma is None:
                return _fail(EXIT_FLAGS, "the a_n rule needs --sigma "
                                         "(or use --self-normalized)")
            est = solve_mean(values, cfg, sigma=args.sigma)
            sigma_source = "known"
            alpha_used = cfg.a_n_value(values.size) / args.sigma
        ci = build_ci(est, values.size, args.level,
                      include_bias=args.bias_corrected, alpha=alpha_used)
    except DegenerateSampleError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except NonConvergenceError as exc:
        return _fail(EXIT_NUMERIC, f"solver did not converge: {exc}")
    except (DomainError, ValueError) as exc:
        return _fail(EXIT_FLAGS, str(exc))

    _emit([
        ("n", values.size),
        ("variant", est.variant),
        ("phi", phi.name),
        ("theta_hat", est.theta_hat),
        ("ci_lo", ci.lo),
        ("ci_hi", ci.hi),
        ("level", ci.level),
        ("bias_allowance", ci.bias_allowance),
        ("sigma_used", est.sigma_used),
        ("sigma_source", sigma_source),
        ("alpha_used", alpha_used),
        ("iterations", est.iterations),
        ("bracket_lo", est.bracket[0]),
        ("bracket_hi", est.bracket[1]),
        ("g_residual", est.g_residual),
    ])
    return EXIT_OK


# ---------------------------------------------------------------------------
# regress


def _cmd_regress(args) -> int:
    if args.alpha is not None and args.epsilon is not None:
        return _fail(EXIT_FLAGS, "give --alpha or --epsilon, not both")
    try:
        phi = influence_by_name(args.phi)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    if not phi.has_derivative or not math.isfinite(phi.k0) or phi.k1 is None:
        return _fail(EXIT_FLAGS, "regression needs a built-in influence "
                                 "(wide or narrow) with a derivative")
    try:
        header, rows = _read_csv(args.input)
        if args.response not in header:
            raise ValueError(f"{args.input}: no column named '{args.response}'")
        if args.features:
            feature_names = [f.strip() for f in args.features.split(",")]
        else:
            feature_names = [h for h in header if h != args.response]
        if not feature_names:
            raise ValueError("no feature columns selected")
        y = _numeric_column(args.input, header, rows, args.response)
        cols = [_numeric_column(args.input, header, rows, f)
                for f in feature_names]
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    X = np.column_stack(cols)

    epsilon = args.epsilon if args.epsilon is not None else 0.1
    cfg = RegressionConfig(phi=phi, alpha=args.alpha,
                           epsilon=None if args.alpha is not None else epsilon,
                           tol=args.tol)
    try:
        problem = RegressionProblem(X, y)
        fit = solve_regression(problem, cfg)
    except SingularGramError as exc:
        from .regression import gram_stats
        gram = gram_stats(X)
        print(f"lambda_min = {_fmt(gram.lambda_min)}")
        return _fail(EXIT_NUMERIC, str(exc))
    except NonConvergenceError as exc:
        return _fail(EXIT_NUMERIC, f"solver did not converge: {exc}")
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))

    feas = feasibility(fit.gram, fit.sigma_bar_sq_used, fit.alpha_used,
                       epsilon, problem.n)
    pairs = [
        ("n", problem.n),
        ("p", problem.p),
        ("features", ";".join(feature_names)),
        ("phi", phi.name),
    ]
    pairs += [(f"beta_hat[{j}]", fit.beta_hat[j]) for j in range(problem.p)]
    pairs += [
        ("h_norm", fit.h_norm),
        ("iterations", fit.iterations),
        ("alpha_used", fit.alpha_used),
        ("alpha_source", "flag" if args.alpha is not None else "auto"),
        ("sigma_bar_sq", fit.sigma_bar_sq_used),
        ("sigma_bar_sq_source", fit.sigma_bar_sq_source),
        ("lambda_min", fit.gram.lambda_min),
        ("lambda_max", fit.gram.lambda_max),
        ("L_n", fit.gram.L_n),
        ("kappa", fit.gram.lambda_max / fit.gram.lambda_min),
        ("epsilon", epsilon),
        ("delta_sq", feas.delta_sq),
        ("feasible", feas.feasible),
        ("beta_0", feas.beta_0 if feas.beta_0 is not None else "infeasible"),
    ]
    _emit(pairs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        return _fail(EXIT_INPUT, f"config is not valid JSON: {exc}")
    try:
        config = config_from_dict(raw)
    except ConfigError as exc:
        return _fail(EXIT_INPUT, str(exc))
    try:
        table = run_experiment(config, threads=args.threads)
    except HarnessAbortError as exc:
        return _fail(EXIT_HARNESS, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_INPUT, str(exc))
    table.write(args.out)
    print(f"wrote {args.out}/report.csv ({len(table.rows)} rows)")
    print(f"config_digest = {table.provenance['config_digest']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate-phi


def _cmd_validate_phi(args) -> int:
    try:
        phi = influence_by_name(args.phi)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    report = validate_envelope(phi, args.lo, args.hi, args.step)
    _emit([
        ("phi", phi.name),
        ("passed", report.passed),
        ("first_violation_x", report.first_violation_x
         if report.first_violation_x is not None else "none"),
        ("max_envelope_slack", report.max_envelope_slack),
        ("monotonicity_ok", report.monotonicity_ok),
        ("slope_at_zero", report.slope_at_zero),
    ])
    return EXIT_OK if report.passed else EXIT_VALIDATION


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catoni",
        description="Robust location and regression estimation for "
                    "heavy-tailed data, plus a deterministic simulation "
                    "harness for the estimator's distributional guarantees.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser(
        "estimate",
        help="robust location estimate of one CSV column",
        description="Solve sum_i phi(alpha (X_i - theta)) = 0 for theta and "
                    "report a normal-approximation confidence interval.")
    est.add_argument("--input", required=True, help="CSV file with a header row")
    est.add_argument("--column", required=True, help="name of the data column")
    est.add_argument("--alpha", type=float,
                     help="tuning value used directly in the estimating sum")
    est.add_argument("--a-n", dest="a_n", type=float,
                     help="tuning rule value a_n; alpha = a_n/sigma "
                          "(default a_n = n^-1/2)")
    est.add_argument("--self-normalized", action="store_true",
                     help="rescale by the sample standard deviation instead "
                          "of a known sigma")
    est.add_argument("--sigma", type=float,
                     help="known noise scale (required for the a_n rule "
                          "without --self-normalized)")
    est.add_argument("--phi", default="wide",
                     help="influence function: wide, narrow or custom:<path>")
    est.add_argument("--level", type=float, default=0.95,
                     help="confidence level in (0,1)")
    est.add_argument("--bias-corrected", action="store_true",
                     help="widen the interval by alpha*sigma^2/sqrt(1-alpha^2 "
                          "sigma^2) to cover the estimation-target offset")
    est.add_argument("--tol", type=float, default=1e-10,
                     help="location tolerance of the root bracket")
    est.set_defaults(func=_cmd_estimate)

    reg = sub.add_parser(
        "regress",
        help="robust linear regression with feasibility diagnostics",
        description="Solve the vector estimating equation "
                    "(1/(n alpha)) sum_i x_i phi(alpha (y_i - x_i'beta)) = 0 "
                    "and report Gram diagnostics plus the error-radius "
                    "certificate.")
    reg.add_argument("--input", required=True, help="CSV file with a header row")
    reg.add_argument("--response", required=True, help="response column name")
    reg.add_argument("--features",
                     help="comma-separated feature columns (default: all "
                          "columns except the response)")
    reg.add_argument("--alpha", type=float, help="tuning value used directly")
    reg.add_argument("--epsilon", type=float,
                     help="failure probability for the auto tuning "
                          "alpha = sqrt(2 log(1/eps)/(n sigma_bar^2)) "
                          "(default 0.1)")
    reg.add_argument("--phi", default="wide",
                     help="influence function: wide or narrow (custom tables "
                          "carry no derivative and are refused)")
    reg.add_argument("--tol", type=float, default=1e-10,
                     help="convergence tolerance on |h|_2")
    reg.set_defaults(func=_cmd_regress)

    sim = sub.add_parser(
        "simulate",
        help="run one experiment config and write report.csv",
        description="Run a seeded, fully deterministic Monte Carlo "
                    "experiment; identical configs yield byte-identical "
                    "reports for any --threads value.")
    sim.add_argument("--config", required=True,
                     help="JSON experiment config (flat key-value schema; "
                          "unknown keys are errors)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--threads", type=int, default=1,
                     help="worker threads (does not affect output bytes)")
    sim.set_defaults(func=_cmd_simulate)

    val = sub.add_parser(
        "validate-phi",
        help="check an influence function against the admissible envelope",
        description="Verify -log(1-x+x^2/2) <= phi(x) <= log(1+x+x^2/2), "
                    "monotonicity, phi(0)=0 and unit slope at 0 on a grid.")
    val.add_argument("--phi", required=True,
                     help="wide, narrow or custom:<path> (two-column CSV "
                          "table x,phi)")
    val.add_argument("--lo", type=float, default=-50.0, help="grid start")
    val.add_argument("--hi", type=float, default=50.0, help="grid end")
    val.add_argument("--step", type=float, default=1e-3, help="grid step")
    val.set_defaults(func=_cmd_validate_phi)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CatoniError as exc:  # uncaught domain failures
        return _fail(EXIT_NUMERIC, str(exc))


if __name__ == "__main__":
    sys.exit(main())
