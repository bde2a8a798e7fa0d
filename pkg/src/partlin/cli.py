"""Command-line front end.

Exit codes: 0 success, 1 verification failure (gap or residual), 2 input
error, 3 numerical failure. Reports are written before the process exits.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .conjugacy import BuildOptions, TruncationPolicy, partial_linearize
from .errors import (GapFailure, HorizonTooShort, OrderingError, ParamError, ParseError,
                     PartlinError, SpectrumNotSeparated, TailBoundUnavailable)
from .gaps import Clause, GapParams, GapReport, check_condition
from .ode import IntegratorConfig
from .spectrum import LinearSystem, dichotomy_spectrum, spectrum_from_dict
from .systems import load_system
from .verify import ExampleSpec, conjugacy_residual, report_json, run_example_50

# Every numeric default of the command line lives here.
DEFAULTS = {
    "seed": 0,
    "rel_tol": 1e-10,
    "abs_tol": 1e-12,
    "horizon": 200.0,       # spectrum quadrature horizon
    "window_T": 20.0,       # ED window / minimum Bohl window
    "gamma_step": 0.05,
    "tail_tol": 1e-6,
    "domain_radius": 0.2,
    "eps": 0.01,
    "delta": 0.0,
    "l": 1,
    "k": 1,
    "residual_tol": 1e-3,
    "verify_horizon": 10.0,
    "samples": 16,
}

INPUT_ERRORS = (ParseError, ParamError, OrderingError, HorizonTooShort, TailBoundUnavailable,
                ValueError, OSError, json.JSONDecodeError)


class Failure(Exception):
    """A check failed; the report has been written."""


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="system spec (JSON)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    common.add_argument("--rel-tol", type=float, default=DEFAULTS["rel_tol"])
    common.add_argument("--abs-tol", type=float, default=DEFAULTS["abs_tol"])
    common.add_argument("--horizon", type=float, default=DEFAULTS["horizon"])
    common.add_argument("--window-T", type=float, default=DEFAULTS["window_T"])
    common.add_argument("--gamma-lo", type=float)
    common.add_argument("--gamma-hi", type=float)
    common.add_argument("--gamma-step", type=float, default=DEFAULTS["gamma_step"])
    common.add_argument("--method", default="auto", choices=["auto", "diag", "scan", "qr"])
    common.add_argument("--spectrum", help="precomputed spectrum JSON (skips the estimate)")
    common.add_argument("--tail-tol", type=float, default=DEFAULTS["tail_tol"])
    common.add_argument("--domain-radius", type=float, default=DEFAULTS["domain_radius"])
    common.add_argument("--eps", type=float, default=DEFAULTS["eps"])
    common.add_argument("--delta", type=float, default=DEFAULTS["delta"])
    common.add_argument("--l", type=int, default=DEFAULTS["l"])
    common.add_argument("--m", type=int)
    common.add_argument("--k", type=int, default=DEFAULTS["k"])

    p = argparse.ArgumentParser(prog="partlin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="dichotomy spectrum of the linear part")
    g = sub.add_parser("gaps", parents=[common], help="evaluate a gap condition")
    g.add_argument("--condition", type=int, choices=[1, 2, 3, 4], default=4)
    sub.add_parser("conjugate", parents=[common], help="build the decoupling chain")
    v = sub.add_parser("verify", parents=[common], help="chain plus conjugacy residuals")
    v.add_argument("--samples", type=int, default=DEFAULTS["samples"])
    v.add_argument("--verify-horizon", type=float, default=DEFAULTS["verify_horizon"])
    v.add_argument("--residual-tol", type=float, default=DEFAULTS["residual_tol"])
    e = sub.add_parser("example", parents=[common], help="the three-dimensional example")
    e.add_argument("--alpha", type=float, default=ExampleSpec.alpha)
    e.add_argument("--sigma", type=float, default=ExampleSpec.sigma)
    e.add_argument("--xi", default=ExampleSpec.xi)
    e.add_argument("--samples", type=int, default=ExampleSpec.samples)
    e.add_argument("--residual-tol", type=float, default=DEFAULTS["residual_tol"])
    e.add_argument("--bisect", action="store_true", help="also bisect the separation threshold in sigma")
    e.add_argument("--csv", action="store_true", help="dump trajectories as CSV")
    return p


def _write(args, name, payload):
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, name)
    with open(path, "w") as fh:
        fh.write(report_json(payload) + "\n")
    return path


def _cfg(args):
    return IntegratorConfig(rel_tol=args.rel_tol, abs_tol=args.abs_tol)


def _need_input(args):
    if not args.input:
        raise ParseError("--input is required for this command")
    return load_system(args.input)


def _linear_part(system):
    if system.linear is not None:
        return LinearSystem(system.linear)
    return LinearSystem.diagonal(system.diag.diag)


def _spectrum(args, system):
    if args.spectrum:
        with open(args.spectrum) as fh:
            return spectrum_from_dict(json.load(fh))
    grid = None
    if args.gamma_lo is not None or args.gamma_hi is not None:
        if args.gamma_lo is None or args.gamma_hi is None:
            raise ParamError("give both --gamma-lo and --gamma-hi")
        grid = np.arange(args.gamma_lo, args.gamma_hi + 0.5 * args.gamma_step, args.gamma_step)
    return dichotomy_spectrum(_linear_part(system), gamma_grid=grid, T=args.window_T,
                              method=args.method, horizon=args.horizon, cfg=_cfg(args))


def _budget(args, n):
    m = args.m if args.m is not None else n
    return GapParams(args.eps, args.delta, args.l, m, args.k, n)


def _build(args, system, sp):
    opts = BuildOptions(radius=args.domain_radius, cfg=_cfg(args), seed=args.seed)
    return partial_linearize(system, sp, _budget(args, system.n), TruncationPolicy(tail_tol=args.tail_tol),
                             opts)


def cmd_spectrum(args):
    sp = _spectrum(args, _need_input(args))
    _write(args, "spectrum.json", sp.to_dict())


def cmd_gaps(args):
    system = _need_input(args)
    sp = _spectrum(args, system)
    params = _budget(args, system.n)
    try:
        rep = check_condition(args.condition, sp, params)
    except OrderingError as exc:
        rep = GapReport(args.condition, [Clause("a: disjoint descending ordering", 0.0, "holds", False)])
        payload = rep.to_dict()
        payload["error"] = str(exc)
        _write(args, "gaps.json", payload)
        raise Failure(f"condition {args.condition}: {exc}") from None
    _write(args, "gaps.json", rep.to_dict())
    if not rep.overall:
        raise Failure(f"condition {args.condition} fails: {', '.join(rep.failed())}")


def _chain_or_report(args, system, sp, name):
    try:
        return _build(args, system, sp)
    except GapFailure as exc:
        payload = {"error": str(exc), "stage_index": exc.stage_index,
                   "report": exc.report.to_dict() if exc.report is not None else None}
        _write(args, name, payload)
        raise Failure(str(exc)) from None


def cmd_conjugate(args):
    system = _need_input(args)
    sp = _spectrum(args, system)
    chain = _chain_or_report(args, system, sp, "chain.json")
    payload = {"spectrum": sp.to_dict(), **chain.manifest_dict()}
    _write(args, "chain.json", payload)
    for i, st in enumerate(chain.stages):
        if hasattr(st, "htab"):
            chain.dump_h_csv(os.path.join(args.out, f"h_stage{i}.csv"), i)


def cmd_verify(args):
    system = _need_input(args)
    sp = _spectrum(args, system)
    chain = _chain_or_report(args, system, sp, "verify.json")
    res = conjugacy_residual(chain, args.samples, args.verify_horizon, args.seed,
                             radius=min(0.1, args.domain_radius), cfg=_cfg(args))
    payload = {"spectrum": sp.to_dict(), "chain": chain.manifest_dict(), "residual": res.to_dict(),
               "residual_tol": args.residual_tol, "pass": res.max_residual < args.residual_tol}
    _write(args, "verify.json", payload)
    if not payload["pass"]:
        raise Failure(f"residual {res.max_residual:.3e} >= {args.residual_tol:g}")


def cmd_example(args):
    spec = ExampleSpec(alpha=args.alpha, sigma=args.sigma, xi=args.xi, samples=args.samples,
                       seed=args.seed)
    csv_path = os.path.join(args.out, "example_trajectories.csv") if args.csv else None
    if csv_path:
        os.makedirs(args.out, exist_ok=True)
    try:
        report, _ = run_example_50(spec, TruncationPolicy(tail_tol=args.tail_tol), bisect=args.bisect,
                                   csv_path=csv_path)
    except (SpectrumNotSeparated, GapFailure) as exc:
        _write(args, "example_report.json", {"spec": dict(spec.__dict__), "error": str(exc),
                                             "kind": type(exc).__name__})
        raise Failure(str(exc)) from None
    report["residual_tol"] = args.residual_tol
    report["pass"] = report["residual"]["max_residual"] < args.residual_tol
    _write(args, "example_report.json", report)
    if not report["pass"]:
        raise Failure(f"residual {report['residual']['max_residual']:.3e} >= {args.residual_tol:g}")


COMMANDS = {"spectrum": cmd_spectrum, "gaps": cmd_gaps, "conjugate": cmd_conjugate,
            "verify": cmd_verify, "example": cmd_example}


def run_cli(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        COMMANDS[args.command](args)
    except Failure as exc:
        print(f"partlin {args.command}: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        print(f"partlin {args.command}: input error: {exc}", file=sys.stderr)
        return 2
    except PartlinError as exc:
        print(f"partlin {args.command}: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
