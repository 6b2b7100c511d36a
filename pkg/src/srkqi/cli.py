"""Command-line front end: tableau checks, tree audits, and batch studies.

Exit codes: 0 success, 1 bad input or study configuration, 2 internal error.
"""

from __future__ import annotations

import argparse
import math
import os
import re
import sys
import traceback
from pathlib import Path

import numpy as np

from .errors import ConfigError, Error
from .experiments import (
    circle_evolution,
    drift_order_study,
    fixed_point_rate_study,
    iteration_sweep,
    long_time_trajectory,
    strong_order_study,
)
from .integrator import IterationPolicy, StepKind
from .problems import cubic_hamiltonian_system, kubo_system
from .tableau import (
    BUILTIN_NAMES,
    builtin_tableau,
    defect_matrices,
    is_exactly_conservative,
    is_explicit,
    parse_tableau,
    satisfies_order_one,
)
from .trees import (
    enumerate_trees,
    qi_order,
    render_residual_table,
    residual_table,
    tree_to_text,
)

STUDIES = ("drift-order", "strong-order", "long-time", "iteration-sweep", "rate", "circle")


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; route through ConfigError so
    # the exit-code contract (1 for config errors) holds.
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="srkqi",
        description="Stochastic Runge-Kutta methods with quadratic-invariant "
        "conservation checks, colored-tree order audits, and experiment studies.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    check = sub.add_parser(
        "check",
        help="defect matrices, conservation, explicitness, order-1 conditions",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    check.add_argument("--scheme", required=True, help="builtin name or tableau file")
    check.add_argument("--tol", type=float, default=1e-12, help="check tolerance")

    trees = sub.add_parser(
        "trees",
        help="enumerate rooted colored trees by root color",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    trees.add_argument(
        "--max-order", type=float, required=True, help="tree order bound (multiple of 0.5)"
    )
    trees.add_argument("--format", choices=("text", "csv"), default="text")

    audit = sub.add_parser(
        "audit",
        help="near-conservation residual table and certified order",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    audit.add_argument("--scheme", required=True, help="builtin name or tableau file")
    audit.add_argument(
        "--max-order", type=float, required=True, help="pair order-sum bound (multiple of 0.5)"
    )
    audit.add_argument("--tol", type=float, default=1e-12, help="residual tolerance")
    audit.add_argument("--format", choices=("text", "csv"), default="text")

    run = sub.add_parser(
        "run",
        help="run a seeded study and emit CSV",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        epilog=(
            "study columns: drift-order -> h,mean_abs_drift,max_abs_drift,n_paths; "
            "strong-order -> h,rms_error,n_paths; "
            "long-time -> n,t,y_*,invariant,iterations,residual; "
            "iteration-sweep -> axis,value,mean_log_drift,n_paths; "
            "rate -> h,sqrt_h_log,mean_abs_drift,n_paths; "
            "circle -> index,p0,q0,p,q"
        ),
    )
    run.add_argument("study", choices=STUDIES)
    run.add_argument(
        "--problem", choices=("kubo", "cubic-hamiltonian"), default="kubo"
    )
    run.add_argument("--a", type=float, default=1.0, help="kubo drift coefficient")
    run.add_argument("--sigma", type=float, default=1.0, help="kubo noise coefficient")
    run.add_argument(
        "--scheme", default="midpoint",
        help="builtin name, tableau file, or 'milstein' (long-time only)",
    )
    run.add_argument("--h", type=float, help="step size")
    run.add_argument("--h-grid", help="dyadic range '2^-4:2^-9' or comma list")
    run.add_argument("--T", type=float, help="final time")
    run.add_argument("--paths", type=int, default=200, help="Monte Carlo paths")
    run.add_argument("--seed", type=int, default=42, help="base seed")
    run.add_argument(
        "--policy", choices=("explicit", "fixed-point", "newton"), default="explicit"
    )
    run.add_argument("--iters", type=int, help="fixed iteration count N")
    run.add_argument("--tol", type=float, help="iteration stopping tolerance")
    run.add_argument("--k", type=int, default=2, help="truncation exponent")
    run.add_argument(
        "--truncate", choices=("auto", "on", "off"), default="auto",
        help="auto: truncate for implicit policies only",
    )
    run.add_argument("--points", type=int, default=256, help="circle boundary points")
    run.add_argument("--axis", choices=("N", "h", "T"), help="iteration-sweep axis")
    run.add_argument("--values", help="comma list of iteration-sweep axis values")
    run.add_argument("--y0", help="initial state 'p,x'")
    run.add_argument("--ref-slope", type=float, help="reference slope for findings")
    run.add_argument("--out", help="write CSV here instead of stdout")
    run.add_argument(
        "--workers", type=int, default=os.cpu_count(), help="path-level parallelism"
    )
    return parser


def _resolve_scheme(label: str):
    try:
        return builtin_tableau(label)
    except ConfigError:
        path = Path(label)
        if path.is_file():
            return parse_tableau(path.read_text(), name=path.stem)
        raise ConfigError(
            f"unknown scheme {label!r}: not a builtin "
            f"({', '.join(BUILTIN_NAMES)}) and not a tableau file"
        ) from None


def _order2_arg(value: float) -> int:
    doubled = round(2 * value)
    if not math.isclose(2 * value, doubled, abs_tol=1e-9) or doubled < 1:
        raise ConfigError(f"order must be a positive multiple of 0.5, got {value}")
    return doubled


def _parse_h_grid(text: str) -> list[float]:
    match = re.fullmatch(r"2\^(-?\d+):2\^(-?\d+)", text.strip())
    if match:
        a, b = int(match.group(1)), int(match.group(2))
        step = 1 if b >= a else -1
        return [2.0**e for e in range(a, b + step, step)]
    try:
        grid = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse step-size grid {text!r}") from None
    if not grid:
        raise ConfigError(f"empty step-size grid {text!r}")
    return grid


def _parse_values(text: str) -> list[float]:
    try:
        vals = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse value list {text!r}") from None
    if not vals:
        raise ConfigError("empty value list")
    return vals


def _parse_y0(text: str) -> np.ndarray:
    try:
        vec = np.array([float(tok) for tok in text.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse initial state {text!r}") from None
    if vec.size != 2:
        raise ConfigError("initial state must have 2 components")
    return vec


def _build_policy(args) -> IterationPolicy:
    kind = StepKind(args.policy)
    if args.truncate == "on":
        k = args.k
    elif args.truncate == "off":
        k = None
    else:
        k = None if kind is StepKind.EXPLICIT else args.k
    if kind is StepKind.EXPLICIT:
        return IterationPolicy.explicit(truncation_k=k)
    if (args.iters is None) == (args.tol is None):
        raise ConfigError(
            f"{args.policy} policy needs exactly one of --iters / --tol"
        )
    make = (
        IterationPolicy.fixed_point
        if kind is StepKind.FIXED_POINT
        else IterationPolicy.newton
    )
    return make(iterations=args.iters, tol=args.tol, truncation_k=k)


def _require(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_").lstrip("_")) is None:
            raise ConfigError(f"study {args.study!r} requires --{name}")


def _study_csv(result) -> str:
    lines = [f"# {key}={result.config_echo[key]}" for key in sorted(result.config_echo)]
    if result.rows:
        cols = list(result.rows[0].keys())
        lines.append(",".join(cols))
        for row in result.rows:
            lines.append(",".join(_cell(row[c]) for c in cols))
    if result.fitted_slope is not None:
        lines.append(f"# fitted_slope={result.fitted_slope!r}")
        lines.append(f"# fit_residual={result.fit_residual!r}")
    for key in sorted(result.summary):
        lines.append(f"# summary.{key}={result.summary[key]!r}")
    for note in result.findings:
        lines.append(f"# finding: {note}")
    return "\n".join(lines) + "\n"


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cmd_check(args, out) -> int:
    tab = _resolve_scheme(args.scheme)
    defects = defect_matrices(tab)
    out.write(f"scheme={tab.name or args.scheme}\n")
    out.write(f"stages={tab.s}\n")
    out.write(f"defect_max_abs={defects.max_abs!r}\n")
    out.write(f"conservative={str(is_exactly_conservative(tab, args.tol)).lower()}\n")
    out.write(f"explicit={str(is_explicit(tab)).lower()}\n")
    out.write(f"order1={str(satisfies_order_one(tab, args.tol)).lower()}\n")
    return 0


def _cmd_trees(args, out) -> int:
    order2 = _order2_arg(args.max_order)
    gamma0, gamma1 = enumerate_trees(order2)
    if args.format == "csv":
        out.write("root_color,order,tree\n")
        for t in gamma0 + gamma1:
            out.write(f"{t.root_color},{t.order2 / 2:.1f},{tree_to_text(t)}\n")
        return 0
    out.write(f"# trees with order <= {order2 / 2:.1f}\n")
    out.write(f"gamma0 ({len(gamma0)}):\n")
    for t in gamma0:
        out.write(f"  {tree_to_text(t)}\n")
    out.write(f"gamma1 ({len(gamma1)}):\n")
    for t in gamma1:
        out.write(f"  {tree_to_text(t)}\n")
    return 0


def _cmd_audit(args, out) -> int:
    tab = _resolve_scheme(args.scheme)
    order2_sum = _order2_arg(args.max_order) * 2
    rows = residual_table(tab, order2_sum)
    out.write(render_residual_table(rows, args.format))
    certified = qi_order(tab, order2_sum - 1, args.tol)
    out.write(f"# qi_order2={certified} (gamma={certified / 2})\n")
    nonzero = [r for r in rows if abs(r.value) > args.tol]
    if not nonzero:
        out.write(f"# all residuals within tol={args.tol!r}\n")
    for r in nonzero:
        out.write(
            f"# finding: nonzero residual {r.value!r} at ({r.family.value}, "
            f"{tree_to_text(r.left)}, {tree_to_text(r.right)}), "
            f"order sum {r.order2_sum / 2:.1f}\n"
        )
    return 0


def _cmd_run(args, out) -> int:
    if args.study == "iteration-sweep":
        default_y0 = "1,0"
    elif args.study == "rate":
        default_y0 = "1,0"
    else:
        default_y0 = "0,1"
    y0 = _parse_y0(args.y0 or default_y0)
    problem = (
        kubo_system(args.a, args.sigma)
        if args.problem == "kubo"
        else cubic_hamiltonian_system()
    )

    if args.study == "drift-order":
        _require(args, "h-grid", "T")
        if not problem.invariants:
            raise ConfigError(f"problem {args.problem!r} has no quadratic invariant")
        tab = _resolve_scheme(args.scheme)
        result = drift_order_study(
            tab, problem, problem.invariants[0], args.T,
            _parse_h_grid(args.h_grid), args.paths, args.seed,
            _build_policy(args), y0=y0, reference_slope=args.ref_slope,
            workers=args.workers,
        )
    elif args.study == "strong-order":
        _require(args, "h-grid", "T")
        if args.problem != "kubo":
            raise ConfigError(
                "strong-order study: exact solution required, only the kubo "
                "problem is supported"
            )
        tab = _resolve_scheme(args.scheme)
        result = strong_order_study(
            tab, args.T, _parse_h_grid(args.h_grid), args.paths, args.seed,
            _build_policy(args), a=args.a, sigma=args.sigma, y0=y0,
            workers=args.workers,
        )
    elif args.study == "long-time":
        _require(args, "h", "T")
        scheme = (
            "milstein" if args.scheme.lower() == "milstein"
            else _resolve_scheme(args.scheme)
        )
        result = long_time_trajectory(
            scheme, problem, args.T, args.h, args.seed, _build_policy(args), y0=y0
        )
    elif args.study == "iteration-sweep":
        _require(args, "axis", "values", "h", "T", "iters")
        result = iteration_sweep(
            problem, args.axis, _parse_values(args.values), h=args.h, t_end=args.T,
            iterations=args.iters, seed=args.seed, n_paths=args.paths,
            truncation_k=args.k, y0=y0, workers=args.workers,
        )
    elif args.study == "rate":
        _require(args, "h-grid", "T", "iters")
        result = fixed_point_rate_study(
            args.iters, _parse_h_grid(args.h_grid), args.T, args.seed, args.paths,
            a=args.a, sigma=args.sigma, y0=y0, truncation_k=args.k,
            workers=args.workers,
        )
    else:
        _require(args, "h", "T")
        result = circle_evolution(
            problem, args.points, args.h, args.T, _build_policy(args), args.seed,
            tab=_resolve_scheme(args.scheme),
        )
    out.write(_study_csv(result))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        if args.command == "check":
            return _cmd_check(args, sys.stdout)
        if args.command == "trees":
            return _cmd_trees(args, sys.stdout)
        if args.command == "audit":
            return _cmd_audit(args, sys.stdout)
        out_path = getattr(args, "out", None)
        if out_path:
            with open(out_path, "w") as fh:
                return _cmd_run(args, fh)
        return _cmd_run(args, sys.stdout)
    except BrokenPipeError:
        return 0
    except Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
