"""Command-line entry point ``snlsparse``.

Exit codes: 0 on success, 2 when a check or assertion fails (invalid
certificate, violated condition, unmatched spike, bad input), 3 when the
solver does not converge.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .certificate import build_certificate
from .core import AtomicMeasure, ParameterGrid, synthesize_measurements
from .correlation import DecayConstants, check_conditions, correlation_profile, fit_decay_constants
from .errors import NotConverged, SNLError
from .forward import (
    HeatModelConfig,
    KernelSpec,
    fourier_dictionary,
    gaussian_dictionary,
    heat_dictionary,
    load_dictionary,
    ricker_dictionary,
    save_dictionary,
)
from .separation import audit_report, generalized_separation, to_json
from .solver import SolverConfig, solve_bp_denoise, solve_bp_equality

EXIT_OK, EXIT_CHECK, EXIT_NOT_CONVERGED = 0, 2, 3


def _dump(obj, path=None) -> None:
    text = to_json(obj)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


def _read_vector(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=1).reshape(-1)


def _build(args):
    if args.model == "heat":
        cfg = HeatModelConfig.from_json(Path(args.config).read_text()) if args.config else HeatModelConfig()
        grid = ParameterGrid.uniform(*args.grid) if args.grid else None
        return heat_dictionary(cfg, grid)
    start, stop, m = args.grid or (-10.0, 10.0, 201)
    grid = ParameterGrid.uniform(start, stop, int(m))
    if args.model == "fourier":
        return fourier_dictionary(grid, n=args.n, window=args.window)
    spec = KernelSpec(args.model, args.width)
    return (gaussian_dictionary if args.model == "gaussian" else ricker_dictionary)(spec, grid)


def _load(args):
    return load_dictionary(args.dict)


def cmd_dict_build(args) -> int:
    d = _build(args)
    save_dictionary(d, args.out)
    _dump({"path": str(args.out), "n": d.n, "m": d.m, "dim": d.dim, "model": args.model})
    return EXIT_OK


def cmd_dict_load(args) -> int:
    d = _load(args)
    _dump({"n": d.n, "m": d.m, "dim": d.dim, "provenance": d.provenance,
           "min_sensitivity": float(d.sensitivity.min())})
    return EXIT_OK


def cmd_corr_fit(args) -> int:
    d = _load(args)
    centers = args.centers if args.centers else [d.m // 2]
    profiles = [correlation_profile(d, int(c)) for c in centers]
    const = fit_decay_constants(profiles, args.N, args.D, args.sigma)
    _dump(const.to_dict(), args.out)
    return EXIT_OK


def cmd_corr_check(args) -> int:
    d = _load(args)
    const = DecayConstants.from_dict(json.loads(Path(args.constants).read_text()))
    reports = [check_conditions(correlation_profile(d, int(c)), const) for c in const.centers]
    _dump([json.loads(r.to_json()) for r in reports], args.out)
    return EXIT_OK if all(r.ok for r in reports) else EXIT_CHECK


def cmd_sep_audit(args) -> int:
    if args.constants:
        const = DecayConstants.from_dict(json.loads(Path(args.constants).read_text()))
    else:
        const = harness.published_constants()
    report = audit_report(const)
    if args.support:
        sep = generalized_separation(_floats(args.support), const)
        report["support"] = sep.to_dict()
    _dump(report, args.out)
    if args.support and not report["support"]["satisfied"]:
        return EXIT_CHECK
    return EXIT_OK


def _certificate(args):
    d = _load(args)
    return build_certificate(d, _floats(args.support), _floats(args.signs), margin=args.margin)


def cmd_cert_build(args) -> int:
    cert = _certificate(args)
    if args.out:
        cert.to_csv(args.out)
    _dump({"alpha": cert.alpha, "beta": cert.beta.ravel(), "condition": cert.condition,
           **cert.report.to_dict()})
    return EXIT_OK if cert.valid else EXIT_CHECK


def cmd_cert_verify(args) -> int:
    cert = _certificate(args)
    _dump(cert.report.to_dict(), args.out)
    return EXIT_OK if cert.valid else EXIT_CHECK


def _solver_config(args) -> SolverConfig:
    return SolverConfig(max_iterations=args.max_iterations, trace=bool(args.trace))


def _measurements(args, d):
    if args.y:
        return _read_vector(args.y)
    truth = AtomicMeasure(_floats(args.support), _floats(args.coefficients))
    return synthesize_measurements(d, truth, args.noise, seed=args.seed).y


def _write_solution(args, d, sol) -> None:
    if args.out:
        sol.to_csv(args.out, d.grid.points)
    if args.trace and sol.trace:
        np.savetxt(args.trace, np.asarray(sol.trace, dtype=float), delimiter=",", fmt="%.17g",
                   header="iteration,objective,residual,gap", comments="")
    _dump({"objective": sol.objective, "residual": sol.residual, "gap": sol.gap,
           "iterations": sol.iterations, "converged": sol.converged,
           "support": d.grid.points[np.abs(sol.x) > 1e-6 * np.abs(sol.x).max(initial=0)].tolist()})


def cmd_solve(args) -> int:
    d = _load(args)
    y = _measurements(args, d)
    cfg = _solver_config(args)
    if args.solve_cmd == "bp":
        sol = solve_bp_equality(d, y, cfg)
    else:
        sol = solve_bp_denoise(d, y, args.xi, cfg)
    _write_solution(args, d, sol)
    return EXIT_OK


def cmd_exp_heat(args) -> int:
    cfg = harness.PhaseConfig.from_json(Path(args.config).read_text()) if args.config else harness.PhaseConfig()
    if args.patterns is not None:
        cfg = replace(cfg, sign_policy="all", patterns=args.patterns)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    diagram = harness.run_heat_phase_transition(cfg)
    diagram.to_csv(out / "phase.csv")
    gaps = harness.threshold_gaps(diagram)
    report = {"gaps": gaps, "ambiguous": sum(r.outcome == "ambiguous" for r in diagram.rows),
              "contiguous": {lay: harness.is_contiguous(diagram.layout_rows(lay))
                             for lay in cfg.layouts}}
    _dump(report, out / "phase.json")
    ok = all(report["contiguous"].values()) and gaps["ratio"] is not None and gaps["ratio"] >= 2
    return EXIT_OK if ok else EXIT_CHECK


def cmd_exp_noise(args) -> int:
    cfg = harness.NoiseDemoConfig(seed=args.seed, snr_db=args.snr)
    rep = harness.run_noise_demo(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / f"noise_seed{args.seed}.csv")
    _dump(rep.summary(), out / f"noise_seed{args.seed}.json")
    return EXIT_OK if rep.matched else EXIT_CHECK


def cmd_exp_cert_demo(args) -> int:
    cfg = harness.CertificateDemoConfig(positions=tuple(_floats(args.support)),
                                        signs=tuple(_floats(args.signs)))
    res = harness.run_certificate_demo(cfg, out_dir=args.out)
    print(to_json(res["report"]))
    return EXIT_OK if res["report"]["valid"] else EXIT_CHECK


def cmd_exp_theorem_audit(args) -> int:
    rep = harness.audit_theorem_constants()
    print(harness.format_audit(rep))
    if args.out:
        Path(args.out).write_text(to_json(rep) + "\n")
    return EXIT_OK if abs(rep["difference"]) < 0.05 else EXIT_CHECK


def _dict_source(p):
    p.add_argument("--dict", required=True, help="dictionary CSV (JSON sidecar alongside)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snlsparse", description="Sparse recovery for separable nonlinear models")
    sub = parser.add_subparsers(dest="group", required=True)

    g = sub.add_parser("dict", help="build or inspect dictionaries").add_subparsers(dest="dict_cmd", required=True)
    p = g.add_parser("build")
    p.add_argument("--model", choices=["gaussian", "ricker", "fourier", "heat"], required=True)
    p.add_argument("--grid", nargs=3, type=float, metavar=("START", "STOP", "M"))
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--n", type=int, default=32, help="Fourier sample count")
    p.add_argument("--window", action="store_true")
    p.add_argument("--config", help="heat model JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dict_build)
    p = g.add_parser("load")
    _dict_source(p)
    p.set_defaults(func=cmd_dict_load)

    g = sub.add_parser("corr", help="correlation constants").add_subparsers(dest="corr_cmd", required=True)
    p = g.add_parser("fit")
    _dict_source(p)
    p.add_argument("--centers", type=int, nargs="*")
    p.add_argument("--N", type=float)
    p.add_argument("--D", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_corr_fit)
    p = g.add_parser("check")
    _dict_source(p)
    p.add_argument("--constants", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_corr_check)

    g = sub.add_parser("sep", help="separation audit").add_subparsers(dest="sep_cmd", required=True)
    p = g.add_parser("audit")
    p.add_argument("--constants", help="constants JSON (default: the published Gaussian example)")
    p.add_argument("--support", help="comma-separated support to test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sep_audit)

    g = sub.add_parser("cert", help="dual certificates").add_subparsers(dest="cert_cmd", required=True)
    for name, func in (("build", cmd_cert_build), ("verify", cmd_cert_verify)):
        p = g.add_parser(name)
        _dict_source(p)
        p.add_argument("--support", required=True)
        p.add_argument("--signs", required=True)
        p.add_argument("--margin", type=float, default=1e-6)
        p.add_argument("--out")
        p.set_defaults(func=func)

    g = sub.add_parser("solve", help="l1 recovery").add_subparsers(dest="solve_cmd", required=True)
    for name in ("bp", "bpdn"):
        p = g.add_parser(name)
        _dict_source(p)
        p.add_argument("--y", help="measurement CSV")
        p.add_argument("--support", help="plant spikes instead of reading --y")
        p.add_argument("--coefficients")
        p.add_argument("--noise", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-iterations", type=int, default=200_000)
        p.add_argument("--trace", help="write solver trace CSV here")
        p.add_argument("--out")
        if name == "bpdn":
            p.add_argument("--xi", type=float, required=True)
        p.set_defaults(func=cmd_solve)

    g = sub.add_parser("exp", help="experiments").add_subparsers(dest="exp_cmd", required=True)
    p = g.add_parser("heat")
    p.add_argument("--config", help="phase-transition JSON")
    p.add_argument("--patterns", type=int, help="enumerate sign patterns, capped at this many")
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_exp_heat)
    p = g.add_parser("noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, default=20.7)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_exp_noise)
    p = g.add_parser("cert-demo")
    p.add_argument("--support", default="-0.12,0,0.12")
    p.add_argument("--signs", default="1,1,1")
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_exp_cert_demo)
    p = g.add_parser("theorem-audit")
    p.add_argument("--out")
    p.set_defaults(func=cmd_exp_theorem_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "solve_cmd", None) and not args.y and not (args.support and args.coefficients):
        print("error: give --y or both --support and --coefficients", file=sys.stderr)
        return EXIT_CHECK
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (SNLError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
