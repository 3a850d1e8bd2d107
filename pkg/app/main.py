"""
Command-line entry point.

    python -m app.main solve data/cases/case_i.json
    python -m app.main verify data/cases/case_iib.json plan.json
    python -m app.main sweep data/cases/case_i.json --vload-grid 5
    python -m app.main fit --diode samples.csv

Data goes to stdout (or --out); logs go to stderr. The exit code is the
contract for scripts.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from .core import DispatchEngine
from .errors import (
    DegenerateFit,
    DocumentError,
    GainBelowOne,
    GateFailedError,
    InfeasibleError,
    MissingInductance,
    NegativeAlpha,
    NegativeBranchCurrent,
    NetworkValidationError,
    NoConvergence,
    SolverFailure,
    TightnessAuditError,
)
from .ingestion import load_alpha_measurement, load_diode_samples, load_network, load_plan, plan_to_json
from .lossmodel import estimate_alpha, fit_diode
from .models import SolverSettings
from .reporting import format_deviation, format_plan, plan_csv, sweep_csv

logger = logging.getLogger("microgrid")

EXIT_OK = 0
EXIT_MISMATCH = 1
VERIFY_TOL = 1e-3

# Checked in order, so subclasses come before their bases.
EXIT_CODES = [
    (GateFailedError, 3),
    (InfeasibleError, 2),
    (NetworkValidationError, 4),
    (DocumentError, 4),
    (MissingInductance, 4),
    (ValidationError, 4),
    (SolverFailure, 5),
    (TightnessAuditError, 5),
    (GainBelowOne, 5),
    (NoConvergence, 6),
    (NegativeBranchCurrent, 6),
    (DegenerateFit, 7),
    (NegativeAlpha, 7),
]


def exit_code_for(exc: BaseException) -> Optional[int]:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return None


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _engine(args, network, options) -> DispatchEngine:
    settings = SolverSettings(tol_gap=args.tol) if getattr(args, "tol", None) else SolverSettings()
    vin_floor = options["vin_floor"] if getattr(args, "vin_floor", None) is None else args.vin_floor
    return DispatchEngine(
        network,
        settings=settings,
        include_circulating=getattr(args, "mu", True),
        enforce_vin_floor=vin_floor,
        strict_audit=getattr(args, "strict_audit", False),
        duty_resolution=getattr(args, "duty_resolution", None),
    )


def cmd_solve(args) -> int:
    network, options = load_network(args.doc, strict=not args.lenient)
    engine = _engine(args, network, options)
    v_load = None if args.vload == "min" else float(args.vload)
    plan = engine.solve(v_load)
    if args.format == "json":
        _emit(plan_to_json(plan) + "\n", args.out)
    elif args.format == "csv":
        _emit(plan_csv(plan), args.out)
    else:
        _emit(format_plan(plan), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    network, options = load_network(args.doc, strict=not args.lenient)
    engine = _engine(args, network, options)
    plan = load_plan(args.plan)
    _, dev = engine.verify(plan)
    _emit(format_deviation(dev, plan.names), args.out)
    if dev.max_relative > VERIFY_TOL:
        logger.error(f"Plan and steady state disagree by {dev.max_relative:.3e} (> {VERIFY_TOL}).")
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_sweep(args) -> int:
    network, options = load_network(args.doc, strict=not args.lenient)
    engine = _engine(args, network, options)
    rows, monotone = engine.sweep(args.vload_grid, workers=args.workers)
    _emit(sweep_csv(rows, len(network.branches)), args.out)
    return EXIT_OK if monotone else EXIT_MISMATCH


def cmd_fit(args) -> int:
    if args.diode:
        v_d, r_d = fit_diode(load_diode_samples(args.diode))
        result = {"vd": v_d, "rd": r_d}
    else:
        m = load_alpha_measurement(args.alpha)
        result = {"alpha": estimate_alpha(m["p_loss_w"], m["v_load"], m["vd"], m["r_cable"],
                                          m["rd"], m["rm"], m["r_load"])}
    _emit(json.dumps(result) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="microgrid", description="Optimal load sharing for DC microgrids")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging, including the solver trace")
    sub = parser.add_subparsers(dest="command", required=True)

    def network_args(p):
        p.add_argument("doc", help="Network JSON document")
        p.add_argument("--lenient", action="store_true", help="Warn about unknown keys instead of failing")
        p.add_argument("--mu", type=_on_off, default=True, help="Circulating-current cost on/off (default on)")
        p.add_argument("--vin-floor", type=_on_off, default=None,
                       help="Enforce V' >= 20*V_D (default: the document's vin_floor)")
        p.add_argument("--tol", type=float, default=None, help="Relative duality-gap target")
        p.add_argument("--out", default=None, help="Write output here instead of stdout")

    p = sub.add_parser("solve", help="Compute the optimal dispatch")
    network_args(p)
    p.add_argument("--vload", default="min", help="Load voltage in volts, or 'min' (default)")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--duty-resolution", type=int, default=None, help="Round duties to 1/N")
    p.add_argument("--strict-audit", action="store_true", help="Fail when the power balance is not tight")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="Check a plan against the steady-state oracle")
    network_args(p)
    p.add_argument("plan", help="Plan JSON produced by 'solve --format json'")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="Optimal cost over evenly spaced load voltages")
    network_args(p)
    p.add_argument("--vload-grid", type=int, default=5, help="Number of load voltages (>= 2)")
    p.add_argument("--workers", type=int, default=None, help="Solve rows on this many threads")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="Estimate device parameters from measurements")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--diode", help="CSV with a current,power header")
    group.add_argument("--alpha", help="Switching-test measurement JSON")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "sweep" and args.vload_grid < 2:
        parser.error("--vload-grid must be >= 2")
    try:
        return args.func(args)
    except Exception as e:
        code = exit_code_for(e)
        if code is None:
            raise
        logger.error(f"{type(e).__name__}: {e}")
        return code


if __name__ == "__main__":
    sys.exit(main())
