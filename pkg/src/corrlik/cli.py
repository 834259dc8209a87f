"""Command-line entry point: ``corrlik {analyze,homogeneity,simulate,curve}``.

Study files are CSV with the header ``study,r,n``; ``@vitamin-c`` names the
embedded example dataset. Human reports use 3 decimals, ``--csv`` output
keeps full precision.

Exit codes: 0 success, 2 invalid input or arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from typing import Sequence, TextIO

import numpy as np

from . import bspline, meta
from .likelihood import build_curve
from .numerics import ConvergenceError, DomainError
from .simulate import SimCase, run_case
from .studyfile import StudyFileError, read_studies

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage already; keep that for our own checks too
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _sizes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _add_likelihood_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=_positive_int, default=meta.DEFAULT_GRID,
                   help="evaluation grid size (default %(default)s)")
    p.add_argument("--epsilon", type=float, default=meta.DEFAULT_EPSILON,
                   help="rho domain is [-1+eps, 1-eps] (default %(default)s)")
    p.add_argument("--knots", type=int, default=meta.DEFAULT_KNOTS,
                   help="inner knots of the cubic spline surrogate (default %(default)s)")
    p.add_argument("--support", choices=("full", "nonnegative"), default="full",
                   help="rho domain for likelihood intervals (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="corrlik", description="Exact-likelihood meta-analysis of correlations.")
    parser.add_argument("--seed", type=int, default=None,
                        help="random seed for commands that simulate (default 0)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="per-study and combined intervals")
    p.add_argument("input", help="study CSV path or @vitamin-c")
    p.add_argument("--level", type=_probability, default=0.95)
    p.add_argument("--hlr-mode", choices=("mass", "lr"), default="mass")
    p.add_argument("--clamp-asymptotic-at-zero", action="store_true",
                   help="display negative asymptotic endpoints as 0")
    p.add_argument("--csv", action="store_true", help="machine-readable output")
    _add_likelihood_options(p)

    p = sub.add_parser("homogeneity", help="likelihood-ratio test of a common rho")
    p.add_argument("input")
    p.add_argument("--epsilon", type=float, default=meta.DEFAULT_EPSILON)
    p.add_argument("--alpha", type=_probability, default=0.05)

    p = sub.add_parser("simulate", help="Monte Carlo MSEs of the three estimators")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--sizes", type=_sizes, required=True, help="e.g. 4,4,4,4,4")
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--seed", dest="sub_seed", type=int, default=None)
    p.add_argument("--grid", type=_positive_int, default=None)
    p.add_argument("--knots", type=int, default=meta.DEFAULT_KNOTS)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(usage=p.format_usage())

    p = sub.add_parser("curve", help="export log-likelihood curves to CSV")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output CSV path ('-' for stdout)")
    p.add_argument("--study", default=None, help="study id (default: first study)")
    p.add_argument("--combined", action="store_true", help="summed curve of all studies")
    p.add_argument("--spline", action="store_true", help="add the spline surrogate column")
    _add_likelihood_options(p)
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.3f}"


def _iv(interval: meta.IntervalEstimate) -> str:
    return f"({interval.lower:.3f}, {interval.upper:.3f})"


def write_analysis_text(result: meta.Analysis, out: TextIO) -> None:
    level = round(100 * result.settings["level"], 6)
    header = ("study", "r", "n", "asymptotic", "exact HLR", "spline HLR")
    rows = [(str(row.study.id), _fmt(row.study.r), str(row.study.n), _iv(row.asymptotic),
             _iv(row.exact_hlr), _iv(row.spline_hlr)) for row in result.per_study]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    out.write(f"{level:g}% intervals by study\n")
    out.write("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip() + "\n")
    for r in rows:
        out.write("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")

    c = result.combined
    out.write("\ncombined\n")
    table = [
        ("asymptotic pooled", f"r~ = {c.pooled:.3f}", _iv(c.pooled_interval)),
        ("exact likelihood", f"rho^ = {c.mle:.3f}", _iv(c.mle_interval)),
        ("B-spline", f"rho^ = {c.mle_spline:.3f}", _iv(c.spline_interval)),
    ]
    widths = [max(len(r[i]) for r in table) for i in range(3)]
    for r in table:
        out.write("  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip() + "\n")
    if c.q_statistic is not None:
        out.write(f"\nhomogeneity: Q = {c.q_statistic:.3f}, df = {c.q_df}, p = {c.q_p_value:.3f}\n")


ANALYSIS_COLUMNS = ("scope", "study", "quantity", "estimate", "lower", "upper")


def analysis_rows(result: meta.Analysis) -> list[dict]:
    """Flat records of an analysis; the ``--csv`` output of ``analyze``."""
    rows = []

    def add(scope, sid, quantity, estimate, interval=None):
        rows.append(dict(scope=scope, study=sid, quantity=quantity, estimate=estimate,
                         lower=None if interval is None else interval.lower,
                         upper=None if interval is None else interval.upper))

    for row in result.per_study:
        add("study", row.study.id, "asymptotic", row.study.r, row.asymptotic)
        add("study", row.study.id, "exact_hlr", row.mle, row.exact_hlr)
        add("study", row.study.id, "spline_hlr", None, row.spline_hlr)
    c = result.combined
    add("combined", "", "asymptotic", c.pooled, c.pooled_interval)
    add("combined", "", "exact_hlr", c.mle, c.mle_interval)
    add("combined", "", "spline_hlr", c.mle_spline, c.spline_interval)
    if c.q_statistic is not None:
        add("combined", "", "homogeneity_q", c.q_statistic)
        add("combined", "", "homogeneity_p", c.q_p_value)
    return rows


def _write_csv(rows: list[dict], columns: Sequence[str], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                         for k in columns])


def cmd_analyze(args, out: TextIO) -> int:
    studies = read_studies(args.input)
    result = meta.analyze(studies, args.level, n_inner=args.knots, grid_size=args.grid,
                          domain_epsilon=args.epsilon, hlr_mode=args.hlr_mode, support=args.support,
                          clamp_asymptotic_at_zero=args.clamp_asymptotic_at_zero)
    if args.csv:
        _write_csv(analysis_rows(result), ANALYSIS_COLUMNS, out)
    else:
        write_analysis_text(result, out)
    return EXIT_OK


def cmd_homogeneity(args, out: TextIO) -> int:
    studies = read_studies(args.input)
    if len(studies) < 2:
        raise StudyFileError(f"{args.input}: the homogeneity test needs at least two studies")
    h = meta.homogeneity_test(studies, args.epsilon)
    crit = h.critical_value(args.alpha)
    verdict = "reject" if h.rejects(args.alpha) else "fail to reject"
    pct = f"{100 * args.alpha:g}%"
    out.write(f"Q = {h.q:.3f}\ndf = {h.df}\ncritical value ({pct}) = {crit:.3f}\np-value = {h.p_value:.3f}\n")
    out.write(f"{verdict} homogeneity at the {pct} level\n")
    return EXIT_OK


def cmd_simulate(args, out: TextIO) -> int:
    seed = args.sub_seed if args.sub_seed is not None else (args.seed if args.seed is not None else 0)
    case = SimCase(args.rho, args.sizes, args.reps, seed)
    kwargs = {"n_inner": args.knots}
    if args.grid is not None:
        kwargs["grid_size"] = args.grid
    res = run_case(case, **kwargs)
    values = (res.mse_pooled, res.mse_mle_exact, res.mse_mle_spline)
    if args.csv:
        out.write("mse_pooled,mse_mle_exact,mse_mle_spline,replications_used\n")
        out.write(",".join(repr(v) for v in values) + f",{res.replications_used}\n")
        return EXIT_OK
    out.write(f"rho = {case.rho:g}, sizes = {','.join(map(str, case.sizes))}, "
              f"replications = {res.replications_used}, seed = {seed}\n")
    for label, v in zip(("asymptotic pooled", "MLE (exact)", "MLE (B-spline)"), values):
        out.write(f"{label:<18} MSE = {v:.3f}\n")
    if res.failed:
        out.write(f"spline stage failed in {len(res.failed)} replications (excluded)\n")
    return EXIT_OK


def cmd_curve(args, out: TextIO) -> int:
    studies = read_studies(args.input)
    if args.combined:
        group = studies
    elif args.study is None:
        group = studies[:1]
    else:
        group = [s for s in studies if s.id == args.study]
        if not group:
            raise StudyFileError(f"{args.input}: no study with id {args.study!r}")
    curve = build_curve(group, args.grid, args.epsilon, args.support)
    columns = ["rho", "log_lik"]
    spline = None
    if args.spline:
        model = bspline.fit_log_likelihood(curve, args.knots)
        lo, hi = model.fit_domain
        inside = (curve.rho_grid >= lo) & (curve.rho_grid <= hi)
        spline = np.full(len(curve), np.nan)
        spline[inside] = model(curve.rho_grid[inside])
        columns.append("spline")

    def emit(stream):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(columns)
        for i, (x, y) in enumerate(zip(curve.rho_grid, curve.log_lik)):
            row = [repr(float(x)), repr(float(y))]
            if spline is not None:
                row.append("" if np.isnan(spline[i]) else repr(float(spline[i])))
            writer.writerow(row)

    if args.output == "-":
        emit(out)
    else:
        try:
            with open(args.output, "w", newline="", encoding="utf-8") as fh:
                emit(fh)
        except OSError as exc:
            raise StudyFileError(f"{args.output}: {exc.strerror or exc}") from None
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "homogeneity": cmd_homogeneity,
    "simulate": cmd_simulate,
    "curve": cmd_curve,
}


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except ConvergenceError as exc:
        print(f"corrlik: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (StudyFileError, DomainError, ValueError, FileNotFoundError) as exc:
        if getattr(args, "usage", None):
            sys.stderr.write(args.usage)
        print(f"corrlik: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
