"""Command-line entry point: ``plan``, ``campaign`` and ``check-braking``."""

import argparse
import sys
from typing import Optional, Sequence

from .harness.campaign import batch_campaign, emit_campaign
from .harness.outputs import emit_outputs, fmt_float
from .harness.scenario import ScenarioError, load_scenario, with_overrides
from .harness.simulate import infeasible_braking_distance, run

EXIT_OK, EXIT_COLLISION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cilqr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="closed-loop run of one scenario")
    plan.add_argument("--scenario", required=True)
    plan.add_argument("--mode", choices=["mdr", "mrr", "mrr-slow"])
    plan.add_argument("--out", required=True)
    plan.add_argument("--seed", type=int)
    plan.add_argument("--replan-period", type=float)
    plan.add_argument("--horizon", type=float, help="planning horizon [s]")
    plan.add_argument("--dt", type=float)
    plan.add_argument("--plans", action="store_true", help="also write every cycle's planned trajectory")

    camp = sub.add_parser("campaign", help="randomized cut-in campaign against a braking baseline")
    camp.add_argument("--template", required=True)
    camp.add_argument("--cases", type=int, required=True)
    camp.add_argument("--seed", type=int, required=True)
    camp.add_argument("--out", required=True)
    camp.add_argument("--workers", type=int, default=1)

    brk = sub.add_parser("check-braking", help="minimum gap from which braking alone avoids a slower lead")
    names = ["v_ev", "v_tv", "a_min", "l_ev", "l_tv"]
    for n in names:
        brk.add_argument(n, nargs="?", type=float)
    for n in names:
        brk.add_argument("--" + n.replace("_", "-"), dest=f"opt_{n}", type=float)
    return parser


def _check_braking(args) -> int:
    vals = {}
    for n in ["v_ev", "v_tv", "a_min", "l_ev", "l_tv"]:
        pos, opt = getattr(args, n), getattr(args, f"opt_{n}")
        if pos is not None and opt is not None and pos != opt:
            print(f"error: {n} given twice with different values", file=sys.stderr)
            return EXIT_CONFIG
        val = pos if pos is not None else opt
        if val is None:
            print(f"error: missing {n}", file=sys.stderr)
            return EXIT_CONFIG
        vals[n] = val
    try:
        d = infeasible_braking_distance(**vals)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(fmt_float(d))
    return EXIT_OK


def _plan(args) -> int:
    try:
        scn = load_scenario(args.scenario)
        scn = with_overrides(scn, mode=args.mode, seed=args.seed, replan_period=args.replan_period,
                             horizon=args.horizon, dt=args.dt)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run(scn)
    paths = emit_outputs(result, args.out, include_plans=args.plans)
    m = result.metrics
    print(f"collision={m['collision']} min_clearance={m['min_clearance']:.4f} "
          f"max_lateral_offset={m['max_lateral_offset']:.4f} degraded={m['degraded']}")
    for p in paths.values():
        print(p)
    if m["collision"]:
        return EXIT_COLLISION
    if m["degraded"]:
        return EXIT_NUMERICAL
    return EXIT_OK


def _campaign(args) -> int:
    try:
        template = load_scenario(args.template)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = batch_campaign(template, args.cases, args.seed, workers=args.workers)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    paths = emit_campaign(result, args.out, template=template, seed=args.seed)
    s = result.summary
    for name in ("ilqr", "braking"):
        r = s[name]
        print(f"{name}: accidents={r['accidents']}/{r['cases']} avg|a|={r['avg_abs_accel']:.4f} "
              f"avg|jerk|={r['avg_abs_jerk']:.4f}")
    for p in paths.values():
        print(p)
    return EXIT_COLLISION if s["ilqr"]["accidents"] else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "check-braking":
        return _check_braking(args)
    if args.command == "plan":
        return _plan(args)
    return _campaign(args)


if __name__ == "__main__":
    sys.exit(main())
