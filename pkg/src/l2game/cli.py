"""Command-line interface.

Subcommands: ``check``, ``simulate``, ``optimal-time``, ``null-control``,
``pursuit`` and ``generate``.  Exit codes: 0 success, 2 validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from l2game import kernels
from l2game.control import null_control, solve_optimal_time
from l2game.errors import NonConvergence, NotPositiveDefinite, NumericalError, ValidationError
from l2game.game import EVADER_KINDS, EvaderStrategy, PursuitStrategy, play_game
from l2game.gramian import assemble_gramian, w_inv_bound_report
from l2game.scenario import atomic_write, generate_scenario, parse_scenario
from l2game.system import (
    ClosedFormControl,
    PiecewiseConstantControl,
    QuadratureSpec,
    ZeroControl,
    is_admissible,
    l2_energy,
    propagate,
    trajectory,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


def tool_version() -> str:
    try:
        return version("l2game")
    except PackageNotFoundError:
        return "0+unknown"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(path, times, states, per_block: bool = False):
    """CSV with header ``t,total_norm[,block_0,...]`` at 17 significant digits."""
    header = ["t", "total_norm"]
    if per_block and states:
        header += [f"block_{i}" for i in range(len(states[0].dims))]
    lines = [",".join(header)]
    for t, x in zip(times, states):
        row = [_fmt(t), _fmt(x.norm)]
        if per_block:
            row += [_fmt(v) for v in x.block_norms()]
        lines.append(",".join(row))
    atomic_write(path, "\n".join(lines) + "\n")


def load_control(path, size: int):
    """Control file: ``{"kind": "zero" | "closed_form" | "piecewise_constant", ...}``."""
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read control file {path}: {exc}") from exc
    kind = spec.get("kind")
    if kind == "zero":
        return ZeroControl(size, float(spec.get("horizon", math.inf)))
    if kind == "closed_form":
        sig = ClosedFormControl(spec["expression"], spec["value"], float(spec["horizon"]),
                                **spec.get("params", {}))
    elif kind == "piecewise_constant":
        sig = PiecewiseConstantControl(spec["times"], spec["values"])
    else:
        raise ValidationError(f"unknown control kind {kind!r}")
    if sig.size != size:
        raise ValidationError(f"control has {sig.size} components, state has {size}")
    return sig


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quad-panels", type=int, default=argparse.SUPPRESS,
                        help="Gauss-Legendre panels per unit time (overrides the scenario)")
    common.add_argument("--quad-nodes", type=int, default=argparse.SUPPRESS,
                        help="Gauss-Legendre nodes per panel (overrides the scenario)")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="print the run report as JSON")
    common.add_argument("--allow-dim1", action="store_true", default=argparse.SUPPRESS,
                        help="admit 1x1 blocks (oracle mode)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="l2game", parents=[common],
                                     description="Null control and pursuit for block-diagonal systems in l2.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="stability, shape and Gramian diagnostics")
    p.add_argument("scenario")
    p.add_argument("--tau", type=float, default=1.0, help="horizon for the inverse-Gramian bound")

    p = sub.add_parser("simulate", parents=[common], help="free or forced trajectory to CSV")
    p.add_argument("scenario")
    p.add_argument("--t-final", type=float, required=True)
    p.add_argument("--samples", type=int, default=101)
    p.add_argument("--control", default="zero", help="'zero' or a control JSON file")
    p.add_argument("--per-block", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("optimal-time", parents=[common], help="solve for the optimal translation time")
    p.add_argument("scenario")
    p.add_argument("--tol", type=float, default=1e-10)

    p = sub.add_parser("null-control", parents=[common], help="synthesize and apply the null control")
    p.add_argument("scenario")
    p.add_argument("--tau", required=True, help="horizon in seconds or 'optimal'")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--samples", type=int, default=65)
    p.add_argument("--per-block", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("pursuit", parents=[common], help="play the pursuit game")
    p.add_argument("scenario")
    p.add_argument("--evader", choices=EVADER_KINDS, default="zero")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=1.0, help="fraction of the evader budget spent")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--samples", type=int, default=65)
    p.add_argument("--per-block", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("generate", parents=[common], help="write a deterministic random scenario")
    p.add_argument("out")
    p.add_argument("--blocks", type=int, default=100)
    p.add_argument("--dim-range", type=int, nargs=2, default=(2, 4))
    p.add_argument("--abscissa-range", type=float, nargs=2, default=(-3.0, -0.3))
    p.add_argument("--decay-exponent", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--constraint", choices=("theta", "game"), default="theta")
    p.add_argument("--theta-factor", type=float, default=0.5)
    p.add_argument("--rho-factor", type=float, default=1.0)
    p.add_argument("--sigma-factor", type=float, default=0.5)
    return parser


def _quadrature(args, default: QuadratureSpec) -> QuadratureSpec:
    return QuadratureSpec(getattr(args, "quad_panels", default.panels_per_unit_time),
                          getattr(args, "quad_nodes", default.nodes))


def _load(args):
    sc = parse_scenario(args.scenario, allow_dim1=getattr(args, "allow_dim1", False))
    return sc, _quadrature(args, sc.quadrature)


def cmd_check(args):
    sc, q = _load(args)
    system, x0 = sc.system, sc.initial_state
    g = assemble_gramian(system, args.tau, q)
    report = w_inv_bound_report(g)
    return {
        "blocks": len(system),
        "dims": list(system.dims),
        "abscissae": system.abscissae.tolist(),
        "stable": bool(np.all(system.abscissae < 0)),
        "alpha_min": system.alpha_min,
        "x0_retained_norm": x0.retained_norm,
        "tail_bound": x0.tail_bound,
        "constraint": sc.kind,
        "inverse_bound_tau": g.tau,
        "inverse_bound_ok": all(r["ok"] for r in report),
        "inverse_bound": report,
    }, q


def cmd_simulate(args):
    sc, q = _load(args)
    system, x0 = sc.system, sc.initial_state
    if args.t_final < 0 or args.samples < 1:
        raise ValidationError("--t-final must be >= 0 and --samples >= 1")
    w = ZeroControl(system.size) if args.control == "zero" else load_control(args.control, system.size)
    times = np.linspace(0.0, args.t_final, args.samples) if args.samples > 1 else np.array([args.t_final])
    states = trajectory(system, x0, w, times, q, tail_decay=sc.tail_decay)
    if args.out:
        write_trajectory_csv(args.out, times, states, args.per_block)
    res = {"t_final": float(args.t_final), "samples": int(len(times)),
           "final_norm": states[-1].norm, "final_retained_norm": states[-1].retained_norm,
           "control": args.control, "out": args.out}
    if not isinstance(w, ZeroControl) and math.isfinite(w.horizon):
        res["control_energy"] = l2_energy(w, q)
    return res, q


def _theta(sc):
    if sc.theta is None:
        raise ValidationError("this command needs a theta constraint")
    return sc.theta


def cmd_optimal_time(args):
    sc, q = _load(args)
    r = solve_optimal_time(sc.system, sc.initial_state, _theta(sc), q, args.tol)
    return {"vartheta": r.vartheta, "cost": r.cost, "theta_sq": r.target, "bracket": r.bracket,
            "evaluations": r.evaluations, "tol": args.tol, "tail_bound": sc.tail_bound}, q


def cmd_null_control(args):
    sc, q = _load(args)
    system, x0 = sc.system, sc.initial_state
    if args.tau == "optimal":
        tau = solve_optimal_time(system, x0, _theta(sc), q, args.tol).vartheta
    else:
        try:
            tau = float(args.tau)
        except ValueError as exc:
            raise ValidationError(f"--tau must be a number or 'optimal', got {args.tau!r}") from exc
    if tau == 0.0 and x0.is_zero():
        states, times = [x0], np.array([0.0])
        res = {"tau": 0.0, "energy": 0.0, "gramian_cost": 0.0, "capture_norm": 0.0}
    else:
        u = null_control(system, x0, tau, q)
        x_end = propagate(system, x0, u, tau, q, tail_decay=sc.tail_decay)
        times = np.linspace(0.0, tau, max(args.samples, 2))
        states = trajectory(system, x0, u, times, q, tail_decay=sc.tail_decay)
        res = {"tau": tau, "energy": l2_energy(u, q), "gramian_cost": u.cost,
               "capture_norm": x_end.retained_norm}
    res["x0_retained_norm"] = x0.retained_norm
    res["capture_relative"] = res["capture_norm"] / x0.retained_norm if x0.retained_norm else 0.0
    res["tail_bound_at_tau"] = x0.tail_bound * math.exp(-sc.tail_decay * res["tau"])
    if sc.theta is not None:
        res["theta"] = sc.theta
        res["admissible"] = res["energy"] <= sc.theta ** 2 + 1e-9
    if args.out:
        write_trajectory_csv(args.out, times, states, args.per_block)
    res["out"] = args.out
    return res, q


def cmd_pursuit(args):
    sc, q = _load(args)
    cfg = sc.game_config()
    strategy = PursuitStrategy(cfg, q=q, tol=args.tol)
    evader = EvaderStrategy(args.evader, amplitude=args.amplitude, seed=args.seed)
    result = play_game(cfg, evader, q, args.tol, args.samples, strategy=strategy)
    if args.out:
        times = [t for t, _ in result.trajectory]
        write_trajectory_csv(args.out, times, result.states, args.per_block)
    res = result.as_dict()
    res.update({"rho": cfg.rho, "sigma": cfg.sigma, "evader": args.evader, "seed": args.seed,
                "amplitude": args.amplitude, "out": args.out})
    return res, q


def cmd_generate(args):
    q = _quadrature(args, QuadratureSpec())
    sc = generate_scenario(args.blocks, tuple(args.dim_range), tuple(args.abscissa_range),
                           args.decay_exponent, args.seed, args.constraint, args.theta_factor,
                           args.rho_factor, args.sigma_factor, quadrature=q)
    sc.write(args.out)
    return {"out": args.out, "blocks": args.blocks, "tail_bound": sc.tail_bound,
            "theta": sc.theta, "rho": sc.rho, "sigma": sc.sigma}, q


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "optimal-time": cmd_optimal_time,
    "null-control": cmd_null_control,
    "pursuit": cmd_pursuit,
    "generate": cmd_generate,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _print_human(command, results, out):
    if command == "optimal-time":
        print(repr(results["vartheta"]), file=out)
    for k, v in results.items():
        if k == "inverse_bound":
            for r in v:
                flag = "ok" if r["ok"] else "VIOLATED"
                print(f"  block {r['block']}: ||W^-1||={r['measured']:.6e} bound={r['bound']:.6e} {flag}", file=out)
            continue
        print(f"{k}: {v}", file=out)


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    start = time.perf_counter()
    try:
        results, q = COMMANDS[args.command](args)
    except ValidationError as exc:
        for line in getattr(exc, "errors", [str(exc)]):
            print(f"error: {line}", file=err)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=err)
        if isinstance(exc, NonConvergence) and exc.bracket is not None:
            print(f"bracket: {exc.bracket}", file=err)
        if isinstance(exc, NotPositiveDefinite) and exc.block is not None:
            print(f"block: {exc.block} pivot: {exc.pivot}", file=err)
        return EXIT_NUMERIC
    report = {
        "command": ["l2game"] + argv,
        "tool_version": tool_version(),
        "backend": kernels.BACKEND,
        "parameters": {k: v for k, v in vars(args).items() if k != "command"},
        "quadrature": {"panels_per_unit_time": q.panels_per_unit_time, "nodes": q.nodes},
        "results": results,
        "wall_time": time.perf_counter() - start,
    }
    if getattr(args, "json", False):
        json.dump(_jsonable(report), out, indent=1)
        out.write("\n")
    else:
        _print_human(args.command, results, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
