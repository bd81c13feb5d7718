"""Batch command line: ``fit``, ``simulate`` and ``report``.

Exit codes: 0 success, 1 usage, 2 bad input data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .baselines import FixedEffectSpec, baseline_ci, fe_fit
from .exceptions import NumericalError, PanelDataError
from .inference import PostConfig, run_post_inference
from .lasso import SolverOptions
from .panel_core import DesignLayout, read_panel_csv
from .simulation import ESTIMATORS, SimulationConfig, SimulationSummary, default_workers, emit_table, run_monte_carlo

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("panelpost")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panelpost", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"panelpost {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    f = sub.add_parser("fit", help="estimate a panel regression from CSV")
    f.add_argument("input", type=Path, help="CSV with header i,j,t,y,x1,...,xk")
    f.add_argument("--estimator", choices=[s.value for s in FixedEffectSpec] + ["post"], default="post")
    f.add_argument("--out-dir", type=Path, default=None)
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--mu", type=float, default=None)
    f.add_argument("--mu-grid", type=_float_list, default=None)
    f.add_argument("--cv-folds", type=int, default=5)
    f.add_argument("--max-sweeps", type=int, default=SolverOptions.max_sweeps)
    f.add_argument("--tol", type=float, default=SolverOptions.tol)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--nodewise-targets", default="beta",
                   help="'beta' (x and period dummies), 'x', 'all', or comma-separated column indices")
    f.add_argument("--mu-node", type=float, default=None)
    f.add_argument("--mu-node-grid", type=_float_list, default=None)
    f.add_argument("--nodewise-shared-mu", action="store_true")

    s = sub.add_parser("simulate", help="Monte Carlo comparison of the estimators")
    s.add_argument("--model", type=int, choices=[1, 2, 3], required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--m", type=int, default=None, help="defaults to n - 1")
    s.add_argument("--t", type=int, default=5)
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--estimators", default=",".join(ESTIMATORS))
    s.add_argument("--shock-period", type=int, default=None)
    s.add_argument("--freeze-effects", action="store_true")
    s.add_argument("--workers", type=int, default=None, help="defaults to $PANELPOST_WORKERS or 1")
    s.add_argument("--out-dir", type=Path, default=None)

    r = sub.add_parser("report", help="re-render the table of a JSON artifact")
    r.add_argument("input", type=Path)
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, argv: list[str], config: dict, input_hash: str | None,
                    seed: int | None) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "input_sha256": input_hash,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "seed": seed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6g}"


REPORT_FIELDS = ["name", "estimate", "estimate_lasso", "estimate_debiased", "std_error", "ci_low", "ci_high", "level"]


def report_tables(report: dict) -> tuple[str, str]:
    """Aligned text and CSV renderings of a fit report dictionary."""
    rows = []
    for c in report["coefficients"]:
        rows.append([c["name"], c["estimate"], c.get("estimate_lasso"), c.get("estimate_debiased"),
                     c["std_error"], c["ci"][0], c["ci"][1], c["level"]])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    cells = [[r[0]] + [_fmt(v) for v in r[1:]] for r in rows]
    w.writerows(cells)
    header = ["name", "estimate", "lasso", "debiased", "std_error", "ci_low", "ci_high", "level"]
    widths = [max(len(x[c]) for x in [header] + cells) for c in range(len(header))]
    lines = [f"estimator={report['estimator']}  " + "  ".join(f"{k}={v}" for k, v in report["layout"].items())]
    for r in [header] + cells:
        lines.append("  ".join(v.ljust(widths[0]) if c == 0 else v.rjust(widths[c]) for c, v in enumerate(r)))
    return "\n".join(lines) + "\n", buf.getvalue()


def _parse_targets(text: str):
    if text in ("beta", "x", "all"):
        return text
    try:
        return _int_list(text)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(str(exc)) from None


def cmd_fit(args, argv) -> int:
    data = read_panel_csv(args.input)
    layout = DesignLayout(data.N, data.M, data.T, data.k)
    if args.estimator == "post":
        config = PostConfig(
            mu=args.mu, mu_grid=args.mu_grid, cv_folds=args.cv_folds, seed=args.seed,
            targets=_parse_targets(args.nodewise_targets), mu_node=args.mu_node, mu_node_grid=args.mu_node_grid,
            shared_mu_node=args.nodewise_shared_mu, level=args.level,
            solver=SolverOptions(max_sweeps=args.max_sweeps, tol=args.tol))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = run_post_inference(data, config)
        if not rep.converged:
            raise NumericalError("coordinate descent did not converge; raise --max-sweeps or loosen --tol")
        report = rep.to_dict()
        snapshot = {k: getattr(config, k) for k in
                    ("mu", "mu_grid", "cv_folds", "seed", "targets", "mu_node", "mu_node_grid", "shared_mu_node",
                     "level")}
        snapshot["max_sweeps"], snapshot["tol"] = args.max_sweeps, args.tol
    else:
        fit = fe_fit(data, args.estimator)
        coefs = []
        for m in range(data.k):
            lo, hi = baseline_ci(float(fit.beta[m]), float(fit.se[m]), args.level)
            coefs.append({"name": layout.name(m), "estimate": float(fit.beta[m]), "std_error": float(fit.se[m]),
                          "ci": [lo, hi], "level": args.level})
        report = {"estimator": args.estimator, "layout": layout.as_dict(), "level": args.level,
                  "rss": fit.rss, "coefficients": coefs}
        snapshot = {"estimator": args.estimator, "level": args.level}
    text, table_csv = report_tables(report)
    sys.stdout.write(text)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        (args.out_dir / "report.csv").write_text(table_csv)
        _write_manifest(args.out_dir, "fit", argv, snapshot, _sha256(args.input),
                        args.seed if args.estimator == "post" else None)
    return EXIT_OK


def cmd_simulate(args, argv) -> int:
    estimators = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    try:
        config = SimulationConfig(true_model=args.model, N=args.n, M=args.m, T=args.t, reps=args.reps,
                                  seed=args.seed, estimators=estimators, shock_period=args.shock_period,
                                  freeze_effects=args.freeze_effects)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    summary = run_monte_carlo(config, workers=workers)
    text, table_csv = emit_table(summary)
    sys.stdout.write(text)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "summary.csv").write_text(table_csv)
        (args.out_dir / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
        (args.out_dir / "table.txt").write_text(text)
        _write_manifest(args.out_dir, "simulate", argv, config.as_dict(), None, args.seed)
    return EXIT_OK


def cmd_report(args, argv) -> int:
    try:
        payload = json.loads(args.input.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PanelDataError(f"cannot read report {args.input}: {exc}") from None
    if "coefficients" in payload:
        text, _ = report_tables(payload)
    elif "estimators" in payload:
        text, _ = emit_table(SimulationSummary.from_dict(payload))
    else:
        raise PanelDataError(f"{args.input} is neither a fit report nor a simulation summary")
    sys.stdout.write(text)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        handler = {"fit": cmd_fit, "simulate": cmd_simulate, "report": cmd_report}[args.command]
        return handler(args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (PanelDataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
