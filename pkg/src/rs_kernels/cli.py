"""Command-line entry point ``rs-kernels``.

Every subcommand writes a JSON report (stdout unless ``--report``) carrying
the schema version and the resolved configuration, plus optional CSV files
for cross-sections.  Exit status 1 means invalid input, 2 a numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"

log = logging.getLogger("rs_kernels")


class InputError(ValueError):
    pass


# ---------------------------------------------------------------- helpers

def _floats(text, count=None):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise InputError(f"expected {count} comma-separated numbers, got {text!r}")
    return vals


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise InputError(f"expected comma-separated integers, got {text!r}") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return str(path)


def _kernel(args):
    from .quadrature import inverse_power, newton, yukawa

    if args.kernel == "newton":
        return newton()
    if args.kernel == "yukawa":
        return yukawa(args.kappa)
    if args.kernel == "invpow":
        return inverse_power(args.beta)
    raise InputError(f"unknown kernel {args.kernel!r}")


def _grid(args):
    from .canonical import GridSpec

    return GridSpec(args.b, args.n)


def _split(rule, grid, args):
    from .range_separation import split_kernel

    crit = getattr(args, "criterion", "max")
    if getattr(args, "Rl", None) is not None:
        return split_kernel(rule, grid, R_l=args.Rl, delta=args.delta, criterion=crit)
    return split_kernel(rule, grid, sigma=args.sigma, delta=args.delta, criterion=crit)


def _out(args, name):
    base = Path(args.out) if args.out else None
    if base is None:
        return None
    base.mkdir(parents=True, exist_ok=True)
    return base / name


# ---------------------------------------------------------------- subcommands

def cmd_quadrature(args):
    from .quadrature import build_sinc_rule, convergence_sweep, fit_convergence_rate

    kernel = _kernel(args)
    rule = build_sinc_rule(kernel, args.M, args.C0)
    report = {"rank": rule.rank, "step": rule.step}
    if args.sweep:
        # sweep on the sqrt(M) lattice the convergence rate is fitted on
        Ms = [k * k for k in range(2, math.isqrt(args.M) + 1)]
        r = np.geomspace(args.a, args.rmax, 200)
        rows = convergence_sweep(kernel, Ms, r, args.a, args.C0)
        beta, c, r2 = fit_convergence_rate(rows)
        report.update(sweep=[{"M": m, "max_rel_error": e} for m, e in rows],
                      fitted_rate=beta, fit_r2=r2)
        path = _out(args, "quadrature_sweep.csv") or args.csv
        if path:
            report["csv"] = _write_csv(path, ["M", "sqrt_M", "max_rel_error"],
                                       [(m, math.sqrt(m), e) for m, e in rows])
        else:
            w = csv.writer(sys.stdout)
            w.writerow(["M", "sqrt_M", "max_rel_error"])
            for m, e in rows:
                w.writerow([m, repr(math.sqrt(m)), repr(e)])
    else:
        path = _out(args, "quadrature_rule.csv") or args.csv
        if path:
            report["csv"] = _write_csv(path, ["k", "t_k", "p_k"],
                                       zip(rule.k.tolist(), rule.nodes, rule.weights))
    return report


def cmd_project(args):
    from .canonical import dump_factors, project_kernel, tensor_metadata
    from .quadrature import build_sinc_rule, kernel_exact

    grid = _grid(args)
    rule = build_sinc_rule(_kernel(args), args.M, args.C0)
    t = project_kernel(rule, grid, with_ghosts=False)
    report = tensor_metadata(t)
    report["norm"] = t.norm()
    x = grid.centers()
    c = grid.n // 2
    line = t.line(0, c) / grid.h ** 3
    r = np.sqrt(x ** 2 + 2 * x[c] ** 2)
    exact = kernel_exact(rule.kernel, r)
    far = r > 2 * grid.h
    report["line_max_rel_error"] = float(np.max(np.abs(line[far] - exact[far]) / np.abs(exact[far])))
    if args.dump_factors:
        report["factor_files"] = [str(p) for p in dump_factors(t, args.dump_factors)]
    path = _out(args, "project_line.csv")
    if path:
        report["csv"] = _write_csv(path, ["x", "tensor_over_h3", "kernel"], zip(x, line, exact))
    return report


def cmd_split(args):
    from .quadrature import build_sinc_rule

    grid = _grid(args)
    rule = build_sinc_rule(_kernel(args), args.M, args.C0)
    s = _split(rule, grid, args)
    report = s.describe()
    report["rank"] = s.rank
    path = _out(args, "split_line.csv")
    if path:
        x = grid.centers()
        c = grid.n // 2
        report["csv"] = _write_csv(path, ["x", "long", "short"],
                                   zip(x, s.long.line(0, c), s.short.line(0, c)))
    return report


def _particles(args):
    from .range_separation import ParticleSystem

    if not args.particles:
        raise InputError("no particles (use --particles FILE)")
    path = Path(args.particles)
    if not path.is_file():
        raise InputError(f"particle file not found: {path}")
    return ParticleSystem.from_file(path)


def cmd_assemble(args):
    from .quadrature import build_sinc_rule, newton
    from .range_separation import assemble_multiparticle

    system = _particles(args)
    grid = _grid(args)
    system.check_inside(grid.b)
    rule = build_sinc_rule(newton(), args.M, args.C0)
    ref = _split(rule, grid.double(), args)
    rs, tucker, rep = assemble_multiparticle(ref, system, grid, args.eps)
    return {
        "N": system.N, "R_l": ref.R_l, "R_s": ref.R_s, "long_rank_reference": ref.long.rank,
        "tuckerRanks": rep["tucker_ranks"], "canonicalRankBefore": rep["concatenated_rank"],
        "canonicalRankAfter": rs.long.rank, "storageBytes": rep["storage_bytes"],
        "storage": rep["storage"], "storageBound": rep["storage_bound"],
        "maxSnapDisplacement": rs.snap_displacement, "gamma": rs.gamma,
    }


def cmd_delta(args):
    from .canonical import GridSpec
    from .operators import build_delta, support_radius_line
    from .quadrature import build_sinc_rule, newton

    rule = build_sinc_rule(newton(), args.M, args.C0)
    grids = _ints(args.grids) if args.grids else [args.n]
    rows, per_grid = [], []
    first = None
    for n in grids:
        grid = GridSpec(args.b, n)
        s = _split(rule, grid, args)
        d = build_delta(s, boundary=args.boundary, eps=args.eps)
        c = n // 2
        x = grid.centers()
        long_line = d.long.line(0, c)
        radius = support_radius_line(long_line, x, x[c], args.threshold)
        per_grid.append({"n": n, "h": grid.h, "support_radius_long": radius, "mass": d.mass(),
                         "rank_full": d.full.rank, "rank_short": d.short.rank,
                         "rank_long": d.long.rank, "R_l": s.R_l})
        rows.append((n, grid.h, radius))
        if first is None:
            first = (x, d.full.line(0, c), d.short.line(0, c), long_line)
    report = {"convention": "delta = -A P with A = sum of tridiag{1,-2,1}/h^2 (negative definite)",
              "boundary": args.boundary, "grids": per_grid}
    radii = [r for _, _, r in rows]
    report["support_strictly_decreasing"] = all(a > b for a, b in zip(radii, radii[1:]))
    path = _out(args, "delta_line.csv")
    if path:
        report["csv"] = _write_csv(path, ["x", "delta_full", "delta_short", "delta_long"], zip(*first))
    path = _out(args, "delta_support.csv")
    if path:
        report["support_csv"] = _write_csv(path, ["n", "h", "support_radius"], rows)
    return report


def cmd_solve(args):
    from .elliptic import PbeConfig, impulse_field, pbe_regularize_rhs, regularized_poisson
    from .quadrature import build_sinc_rule, newton

    system = _particles(args)
    grid = _grid(args)
    system.check_inside(grid.b)
    x = grid.centers()
    c = grid.n // 2
    if args.mode == "poisson":
        rule = build_sinc_rule(newton(), args.M, args.C0)
        ref = _split(rule, grid.double(), args)
        cells = np.stack([grid.nearest_index(system.centers[:, m]) for m in range(3)], axis=1)
        f = impulse_field(grid, cells, system.charges)
        u, report = regularized_poisson(f, ref, grid)
        report["ranks"] = {"R_l": ref.R_l, "R_s": ref.R_s}
        path = _out(args, "solve_line.csv")
        if path:
            from .elliptic import modified_rhs, short_convolve
            from .range_separation import short_window

            u_s = short_convolve(short_window(ref.short, report["gamma"]), f, grid)
            fbar = modified_rhs(f, u_s, grid)
            report["csv"] = _write_csv(path, ["x", "u", "u_s", "fbar"],
                                       zip(x, u[:, c, c], u_s[:, c, c], fbar[:, c, c]))
        return report
    cfg = PbeConfig(args.eps_m, args.eps_s, system, args.radius, args.kappa)
    rho, u_short, report = pbe_regularize_rhs(cfg, grid, M=args.M, C0=args.C0, sigma=args.sigma,
                                              delta=args.delta, eps=args.eps)
    path = _out(args, "pbe_line.csv")
    if path:
        report["csv"] = _write_csv(path, ["x", "rho_long", "u_short"],
                                   zip(x, rho.values[:, c, c], u_short.values[:, c, c]))
    return report


def cmd_oracle(args):
    from .oracles import AnalyticKernel, green_eval

    params = {}
    fam = args.kernel
    if fam == "yukawa":
        params["kappa"] = args.kappa
    elif fam == "kelvin":
        params.update(lame_lambda=args.lame_lambda, lame_mu=args.lame_mu)
    elif fam == "stokeslet":
        params["nu"] = args.nu
    elif fam == "eta0":
        params["b"] = _floats(args.bvec, 3)
    elif fam in ("erf_potential", "gd"):
        params.update(lam=args.lam, d=args.d)
    kernel = AnalyticKernel(fam, params)
    at = _floats(args.at, 3)
    value = green_eval(kernel, at)
    return {"kernel": fam, "params": params, "at": at, "value": value}


# ---------------------------------------------------------------- parser

def _add_common(p):
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.add_argument("--out", help="directory for CSV artifacts")
    p.add_argument("--seed", type=int, default=0)


def _add_quad(p, kernels=True):
    if kernels:
        p.add_argument("--kernel", choices=["newton", "yukawa", "invpow"], default="newton")
        p.add_argument("--kappa", type=float, default=1.0)
        p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--M", type=int, default=24)
    p.add_argument("--C0", type=float, default=3.0)


def _add_grid(p, n=129, b=10.0):
    p.add_argument("--n", type=int, default=n)
    p.add_argument("--b", type=float, default=b)


def _add_split(p, sigma=None, delta=1e-4):
    p.add_argument("--sigma", type=float, default=sigma)
    p.add_argument("--delta", type=float, default=delta)
    p.add_argument("--Rl", type=int, default=None, help="explicit long-range cut (enumeration index)")
    p.add_argument("--criterion", choices=["max", "l1"], default="max")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rs-kernels", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quadrature", help="sinc rule nodes/weights or convergence sweep")
    _add_quad(p)
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--a", type=float, default=0.1)
    p.add_argument("--rmax", type=float, default=10.0)
    p.add_argument("--csv")
    _add_common(p)
    p.set_defaults(func=cmd_quadrature)

    p = sub.add_parser("project", help="project a kernel onto the grid")
    _add_quad(p)
    _add_grid(p)
    p.add_argument("--dump-factors", metavar="PREFIX")
    _add_common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("split", help="range-separate a projected kernel")
    _add_quad(p)
    _add_grid(p)
    _add_split(p)
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("assemble", help="RS-canonical potential of a particle system")
    _add_quad(p, kernels=False)
    _add_grid(p)
    _add_split(p)
    p.add_argument("--particles")
    p.add_argument("--eps", type=float, default=1e-4)
    _add_common(p)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("delta", help="discrete delta and its long-range support")
    _add_quad(p, kernels=False)
    _add_grid(p)
    _add_split(p)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--grids", help="comma-separated list of n values")
    p.add_argument("--boundary", choices=["free", "dirichlet"], default="free")
    p.add_argument("--threshold", type=float, default=1e-3)
    _add_common(p)
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("solve", help="regularized Poisson solve or PBE right-hand side")
    _add_quad(p, kernels=False)
    _add_grid(p)
    _add_split(p)
    p.add_argument("--particles")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--mode", choices=["poisson", "pbe-rhs"], default="poisson")
    p.add_argument("--eps-m", type=float, default=2.0)
    p.add_argument("--eps-s", type=float, default=78.5)
    p.add_argument("--radius", type=float, default=1.5, help="van der Waals radius")
    p.add_argument("--kappa", type=float, default=0.0)
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="evaluate an analytic kernel")
    p.add_argument("--kernel", required=True,
                   choices=["newton", "yukawa", "biharmonic", "kelvin", "stokeslet", "theta", "eta0",
                            "erf_potential", "gd"])
    p.add_argument("--at", required=True, help="x,y,z")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--lame-lambda", type=float, default=1.0)
    p.add_argument("--lame-mu", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--bvec", default="0,0,0")
    _add_common(p)
    p.set_defaults(func=cmd_oracle)
    return ap


def _validate(args):
    for name in ("n", "M"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise InputError(f"--{name} must be positive")
    for name in ("b", "C0"):
        v = getattr(args, name, None)
        if v is not None and not v > 0:
            raise InputError(f"--{name} must be positive")
    eps = getattr(args, "eps", None)
    if eps is not None and not 0 < eps < 1:
        raise InputError("--eps must lie in (0, 1)")
    delta = getattr(args, "delta", None)
    if delta is not None and not 0 < delta <= 1:
        raise InputError("--delta must lie in (0, 1]")
    sigma = getattr(args, "sigma", None)
    if sigma is not None and not sigma > 0:
        raise InputError("--sigma must be positive")


def main(argv=None) -> int:
    from .canonical import CompressionError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    t0 = time.perf_counter()
    try:
        _validate(args)
        result = args.func(args)
    except CompressionError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        print(json.dumps({"schema_version": SCHEMA_VERSION, "status": "numerical_failure",
                          "error": str(exc), "best_residual": exc.best_residual,
                          "config": _jsonable(config)}), file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, IndexError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    from ._kernels import backend

    report = {"schema_version": SCHEMA_VERSION, "command": args.command, "status": "ok",
              "config": config, "backend": backend(),
              "elapsed_seconds": time.perf_counter() - t0, "result": result}
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    elif not (args.command == "quadrature" and args.sweep and not (args.out or args.csv)):
        print(text)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
