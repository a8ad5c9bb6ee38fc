"""Command-line front end.

Exit codes: 0 converged / certificate passed, 1 bad input (schema, flags,
configuration), 2 budget exhausted, 3 diverged, 4 certificate violated.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .certificates import check_mrf, check_sc1, check_sc2
from .errors import ConfigurationError, HJBError, PreconditionError, SpecError
from .fields import Grid, ValueField, sup_diff
from .problem import TargetSet
from .solvers import (DEFAULT_DELTAS, DEFAULT_HORIZONS, ERGODIC_DELTAS, SolverConfig, build_operator,
                      limit_discounted, limit_finite_horizon, solve_discounted, solve_ergodic,
                      solve_finite_horizon, solve_kruzkov)
from .specfile import load_certificate_spec, load_problem_file, parse_number

EXIT_OK, EXIT_INPUT, EXIT_BUDGET, EXIT_DIVERGED, EXIT_VIOLATION = 0, 1, 2, 3, 4
_VERDICT_EXIT = {"converged": EXIT_OK, "budget-exhausted": EXIT_BUDGET, "diverged": EXIT_DIVERGED}


class _Parser(argparse.ArgumentParser):
    # usage errors must not collide with exit code 2 (budget exhausted)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _number_list(text):
    return [parse_number(t) for t in text.split(",") if t.strip()]


def _grid_arg(text, problem, spec_grid):
    """``lo:hi:n`` per axis, comma separated; a single axis spec is repeated."""
    periods = problem.periods
    if text is None and spec_grid is not None:
        return Grid(tuple(spec_grid["lo"]), tuple(spec_grid["hi"]), tuple(spec_grid["counts"]),
                    tuple(range(problem.n)) if periods else ())
    if text is None:
        if periods:
            return Grid.torus(periods, (128,) * problem.n)
        return Grid.uniform(-2.0, 2.0, 201 if problem.n == 1 else 81, problem.n)
    axes = [a for a in text.split(",") if a.strip()]
    if len(axes) == 1:
        axes = axes * problem.n
    if len(axes) != problem.n:
        raise ConfigurationError(f"--grid needs 1 or {problem.n} axis specs")
    lo, hi, counts = [], [], []
    for a in axes:
        parts = a.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"grid axis {a!r} is not lo:hi:n")
        lo.append(parse_number(parts[0]))
        hi.append(parse_number(parts[1]))
        counts.append(int(parts[2]))
    periodic = tuple(range(problem.n)) if periods else ()
    return Grid(tuple(lo), tuple(hi), tuple(counts), periodic)


def _target_arg(text, problem):
    """``point:0,0`` | ``ball:r:0,0`` | ``box:lo1,lo2:hi1,hi2``."""
    if text is None:
        return problem.target
    kind, _, rest = text.partition(":")
    if kind == "point":
        return TargetSet.point(_number_list(rest))
    if kind == "ball":
        r, _, c = rest.partition(":")
        return TargetSet.ball(_number_list(c), parse_number(r))
    if kind == "box":
        lo, _, hi = rest.partition(":")
        return TargetSet.box(_number_list(lo), _number_list(hi))
    raise ConfigurationError(f"unknown target {text!r}")


def _config(args):
    return SolverConfig(dt=args.dt, mesh_size=args.mesh, tol=args.tol, max_iter=args.max_iter,
                        infinity_threshold=args.infinity_threshold, threads=args.threads, mode=args.mode)


def _write(out_dir, name, text):
    with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _manifest(args, spec, grid, config, started, extra=None):
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "argv")}
    return {
        "version": __version__,
        "command": args.command,
        "argv": args.argv,
        "flags": flags,
        "seed": args.seed,
        "spec_file": spec.source,
        "spec": spec.raw,
        "grid": grid.to_dict() if grid is not None else None,
        "config": config.to_dict() if config is not None else None,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "wall_seconds": time.perf_counter() - started,
        **(extra or {}),
    }


def _mask_csv(grid, mask, meta):
    return ValueField(grid, np.asarray(mask, dtype=float), meta=meta).to_csv()


def cmd_solve(args):
    started = time.perf_counter()
    spec = load_problem_file(args.spec)
    problem = spec.problem
    grid = _grid_arg(args.grid, problem, spec.grid)
    config = _config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    extra = {}
    if args.solver == "finite":
        horizon = args.horizon if args.horizon is not None else 10.0
        snaps, report = solve_finite_horizon(problem, grid, config, horizon)
        for s in snaps:
            _write(args.out_dir, "field.csv", s.to_csv())
    elif args.solver == "discounted":
        delta = args.delta if args.delta is not None else 0.5
        fld, report = solve_discounted(problem, grid, config, delta)
        _write(args.out_dir, "field.csv", fld.to_csv())
    elif args.solver == "kruzkov":
        target = _target_arg(args.target, problem)
        U, V, domain, report = solve_kruzkov(problem, grid, config, target)
        _write(args.out_dir, "kruzkov_U.csv", U.to_csv())
        _write(args.out_dir, "field.csv", V.to_csv())
        _write(args.out_dir, "domain.csv", _mask_csv(grid, domain, {"mask": "domain"}))
    else:
        schedule = _number_list(args.delta_schedule) if args.delta_schedule else ERGODIC_DELTAS
        res = solve_ergodic(problem, grid, config, schedule)
        report = res.report
        _write(args.out_dir, "corrector.csv", res.W0.to_csv())
        _write(args.out_dir, "scaled_value.csv", res.scaled.to_csv())
        extra["lambda"] = res.lam
    _write(args.out_dir, "report.json", report.to_json(timings=False) + "\n")
    _write(args.out_dir, "manifest.json", _dump(_manifest(args, spec, grid, config, started, extra)))
    print(f"{args.solver}: {report.verdict}" + (f", lambda = {extra['lambda']:.6g}" if extra else ""))
    return _VERDICT_EXIT[report.verdict]


def cmd_limits(args):
    started = time.perf_counter()
    spec = load_problem_file(args.spec)
    problem = spec.problem
    grid = _grid_arg(args.grid, problem, spec.grid)
    config = _config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    horizons = _number_list(args.horizons) if args.horizons else list(DEFAULT_HORIZONS)
    deltas = _number_list(args.delta_schedule) if args.delta_schedule else list(DEFAULT_DELTAS)
    op = build_operator(problem, grid, config)
    sigma, rep_f = limit_finite_horizon(problem, grid, config, horizons, operator=op)
    vdisc, rep_d = limit_discounted(problem, grid, config, deltas, operator=op)
    interior = grid.interior_mask(args.interior_layers)
    diff, disagree = sup_diff(sigma, vdisc, interior)
    finite_vals = sigma.values[interior & sigma.finite]
    scale = float(np.abs(finite_vals).max()) if finite_vals.size else 0.0
    summary = {
        "sup_diff": diff,
        "field_scale": scale,
        "relative_sup_diff": diff / scale if scale > 0 else 0.0,
        "infinity_disagreements": disagree,
        "infinite_nodes": {"finite_horizon": int(sigma.infinite.sum()), "discounted": int(vdisc.infinite.sum())},
        "interior_layers": args.interior_layers,
        "verdicts": {"finite_horizon": rep_f.verdict, "discounted": rep_d.verdict},
    }
    _write(args.out_dir, "sigma.csv", sigma.to_csv())
    _write(args.out_dir, "discounted_limit.csv", vdisc.to_csv())
    _write(args.out_dir, "report_finite.json", rep_f.to_json(timings=False) + "\n")
    _write(args.out_dir, "report_discounted.json", rep_d.to_json(timings=False) + "\n")
    _write(args.out_dir, "limits.json", _dump(summary))
    _write(args.out_dir, "manifest.json", _dump(_manifest(args, spec, grid, config, started,
                                                          {"horizons": horizons, "deltas": deltas})))
    print(f"limits: sup_diff={diff:.4g} (scale {scale:.4g}), infinity disagreements={disagree}, "
          f"verdicts {rep_f.verdict}/{rep_d.verdict}")
    return max(_VERDICT_EXIT[rep_f.verdict], _VERDICT_EXIT[rep_d.verdict])


def cmd_certify(args):
    started = time.perf_counter()
    spec = load_problem_file(args.spec)
    problem = spec.problem
    with open(args.certificate, encoding="utf-8") as fh:
        cert = load_certificate_spec(fh.read(), problem.n)
    target = cert.target or _target_arg(args.target, problem)
    if target is None:
        raise ConfigurationError("no target set in problem, certificate or --target")
    region = (cert.raw["region"]["lo"], cert.raw["region"]["hi"])
    samples = args.samples or cert.raw.get("samples", 10_000)
    seed = cert.raw.get("seed", args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    try:
        if cert.check == "mrf":
            rep = check_mrf(problem, cert.certificate, target, cert.raw["k"], region, samples,
                            radius_map=cert.radius_map, seed=seed)
        elif cert.check == "sc1":
            rep = check_sc1(problem, cert.certificate, target, cert.rate, region, samples, seed=seed)
        else:
            rep = check_sc2(problem, target, cert.rate, region, samples, seed=seed)
        out = rep.to_dict()
    except PreconditionError as exc:
        out = {"worst_margin": None, "argmin_point": None, "samples": samples, "pass": False,
               "check": cert.check, "details": {"precondition": str(exc)}}
    _write(args.out_dir, "margin.json", _dump(out))
    _write(args.out_dir, "manifest.json", _dump(_manifest(args, spec, None, None, started,
                                                          {"certificate": cert.raw})))
    status = "pass" if out["pass"] else "violation"
    print(f"{cert.check}: {status}, worst margin {out['worst_margin']} at {out['argmin_point']}")
    return EXIT_OK if out["pass"] else EXIT_VIOLATION


def _common(p):
    p.add_argument("spec", help="problem spec file (YAML or JSON)")
    p.add_argument("--grid", help="lo:hi:n per axis, comma separated (e.g. -2:2:201)")
    p.add_argument("--mesh", type=int, default=65, help="control mesh size")
    p.add_argument("--dt", type=float, default=0.05, help="scheme time step")
    p.add_argument("--tol", type=float, default=1e-6, help="fixed-point tolerance")
    p.add_argument("--max-iter", type=int, default=200_000, help="iteration budget")
    p.add_argument("--infinity-threshold", type=float, default=1e4)
    p.add_argument("--mode", choices=("physical", "s"), default="physical")
    p.add_argument("--target", help="point:c | ball:r:c | box:lo:hi (comma-separated coordinates)")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="hjblimits", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="run one solver")
    _common(s)
    s.add_argument("--solver", choices=("finite", "discounted", "kruzkov", "ergodic"), required=True)
    s.add_argument("--horizon", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--delta-schedule", help="comma-separated decreasing deltas")
    s.set_defaults(func=cmd_solve)

    l = sub.add_parser("limits", help="compare the t -> inf and delta -> 0 limits")
    _common(l)
    l.add_argument("--horizons", help="comma-separated increasing horizons")
    l.add_argument("--delta-schedule", help="comma-separated decreasing deltas (default 2^-1..2^-12)")
    l.add_argument("--interior-layers", type=int, default=1)
    l.set_defaults(func=cmd_limits)

    c = sub.add_parser("certify", help="sampled certificate check")
    c.add_argument("spec")
    c.add_argument("certificate", help="certificate spec file")
    c.add_argument("--target")
    c.add_argument("--samples", type=int)
    c.add_argument("--out-dir", default="out")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_certify)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for loc, msg in exc.diagnostics:
            print(f"  {loc}: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (HJBError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
