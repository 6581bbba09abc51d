"""Command line entry point: `bhlab <command> ...`.

Exit codes: 0 success, 1 validation failure, 2 acceptance failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, limits, regimes
from .model import D_CONVENTIONS, derive_constants, load_model, validate_model
from .volterra import TimeGrid, solve_generating_system

OK, INVALID, REJECTED, IO_ERROR = 0, 1, 2, 3


def _constants(args):
    return derive_constants(load_model(args.file), args.d_convention)


def cmd_model_check(args):
    report = validate_model(load_model(args.file))
    print("\n".join(report.lines()))
    return OK if report.passed else INVALID


def cmd_constants(args):
    c = _constants(args)
    out = {"u": c.u.tolist(), "v": c.v.tolist(), "B": c.B, "D": c.D.tolist(),
           "d_convention": c.d_convention, "beta": c.beta, "Gamma_beta": c.gamma_beta,
           "mu1": c.mu1, "mu2_total": c.mu2_total, "M": c.M.tolist(), "b": c.b.tolist()}
    print(json.dumps(out, indent=2))
    return OK


def cmd_volterra(args):
    model = load_model(args.file)
    grid = TimeGrid.from_horizon(args.horizon, args.step)
    sol = solve_generating_system(model, (args.s1, args.s2), grid)
    sol.F.to_csv(args.out, every=args.every)
    print(f"wrote {args.out}: F(t; s) on {grid.n_points} points, clamps={sol.clamps}")
    return OK


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[repr(float(x)) for x in r] for r in rows])


def cmd_limits(args):
    c = _constants(args)
    if args.object in ("theta", "omega"):
        top = max(args.lam) ** (1 / c.beta) if args.object == "omega" else args.lam_max
        sol = limits.solve_theta(c, extend_to=top)
        print(f"kappa={sol.kappa:.4f} residual={sol.residual:.2e} domain=[0, {sol.Lam:g}]")
        if args.object == "theta":
            sol.to_csv(args.out)
        else:
            rows = [(lam, *limits.omega(sol, lam), limits.omega_residual(sol, lam))
                    for lam in args.lam]
            _write_rows(args.out, ["lambda", "omega1", "omega2", "residual"], rows)
    elif args.object == "h":
        sol = limits.solve_H(c, extend_to=args.lam_max)
        print(f"kappa={sol.kappa:.4f} residual={sol.residual:.2e} domain=[0, {sol.Lam:g}]")
        sol.to_csv(args.out)
    else:
        grid = TimeGrid.from_horizon(args.horizon, args.step)
        rows = []
        for s in args.s:
            o = limits.o_functional(load_model(args.file), c, grid, s)
            rows.append((s, *o.value, *o.error))
        _write_rows(args.out, ["s", "O1", "O2", "err1", "err2"], rows)
    print(f"wrote {args.out}")
    return OK


def cmd_regimes(args):
    c = _constants(args)
    Ns = regimes.log_lattice(args.nmin, args.nmax, args.per_decade)
    ts = regimes.log_lattice(args.tmin, args.tmax, args.per_decade)
    rows = regimes.regime_map(c, Ns, ts)
    regimes.write_regime_map(args.out, rows)
    print(f"wrote {args.out}: {len(rows)} lattice points")
    return OK


def cmd_experiment(args):
    cfg = harness.ExperimentConfig.load(args.config)
    report = harness.run_experiment(cfg, progress=None if args.quiet else print)
    stem = Path(args.config).stem
    csv_path, json_path = harness.write_outputs(report, args.out_dir, stem)
    for w in report.warnings:
        print("warning:", w)
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict} {cfg.theorem} hash={report.config_hash} -> {csv_path}, {json_path}")
    return OK if report.passed else REJECTED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bhlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_d(sp):
        sp.add_argument("--d-convention", choices=D_CONVENTIONS, default="paper")
        return sp

    model = sub.add_parser("model", help="model file utilities")
    msub = model.add_subparsers(dest="action", required=True)
    chk = msub.add_parser("check", help="validate the model assumptions")
    chk.add_argument("file")
    chk.set_defaults(func=cmd_model_check)

    cons = with_d(sub.add_parser("constants", help="print u, v, B, D, Gamma_beta"))
    cons.add_argument("file")
    cons.set_defaults(func=cmd_constants)

    vol = sub.add_parser("volterra", help="solve the generating system on a grid")
    vol.add_argument("file")
    vol.add_argument("--horizon", type=float, required=True)
    vol.add_argument("--step", type=float, required=True)
    vol.add_argument("--s1", type=float, default=0.0)
    vol.add_argument("--s2", type=float, default=0.0)
    vol.add_argument("--every", type=int, default=1, help="write every k-th grid point")
    vol.add_argument("--out", required=True)
    vol.set_defaults(func=cmd_volterra)

    lim = with_d(sub.add_parser("limits", help="solve Theta, Omega, H or O(s)"))
    lim.add_argument("object", choices=("theta", "omega", "h", "ofun"))
    lim.add_argument("file")
    lim.add_argument("--lam-max", type=float, default=None, help="domain for theta / h")
    lim.add_argument("--lam", type=float, nargs="+", default=[0.25, 0.5, 1.0],
                     help="omega arguments")
    lim.add_argument("--s", type=float, nargs="+", default=[0.0, 0.5], help="ofun arguments")
    lim.add_argument("--horizon", type=float, default=20_000.0)
    lim.add_argument("--step", type=float, default=0.5)
    lim.add_argument("--out", required=True)
    lim.set_defaults(func=cmd_limits)

    reg = sub.add_parser("regimes", help="regime geography")
    rsub = reg.add_subparsers(dest="action", required=True)
    rmap = with_d(rsub.add_parser("map", help="classify a (log N, log t) lattice"))
    rmap.add_argument("file")
    rmap.add_argument("--nmin", type=float, required=True)
    rmap.add_argument("--nmax", type=float, required=True)
    rmap.add_argument("--tmin", type=float, required=True)
    rmap.add_argument("--tmax", type=float, required=True)
    rmap.add_argument("--per-decade", type=int, default=4)
    rmap.add_argument("--out", required=True)
    rmap.set_defaults(func=cmd_regimes)

    exp = sub.add_parser("experiment", help="Monte Carlo experiments")
    esub = exp.add_subparsers(dest="action", required=True)
    run = esub.add_parser("run", help="run a config and write CSV + JSON reports")
    run.add_argument("config")
    run.add_argument("--out-dir", required=True)
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_ERROR
    except (ValueError, KeyError, TypeError, RuntimeError) as exc:
        # malformed files, invalid configs, solver failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return INVALID


if __name__ == "__main__":
    sys.exit(main())
