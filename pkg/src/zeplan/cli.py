"""Command-line driver.

Verbs: gen (synthetic instances), solve (one method, one instance),
clearance (minimum clearance time search), validate (plan file against
instance file), compare (tabulate reports of several runs). Artifacts are
written to --out-dir: a plan file, a report JSON, a per-iteration trace
CSV, and a validation JSON. The solve/validate exit code is 0 only when
plan validation finds no violations. The ZEPLAN_BACKEND environment
variable selects the LP/MIP engine (only "highs" is available).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import backend
from .benders_conv import bc_solve
from .benders_nc import bn_solve
from .clearance import (ClearanceInfeasibleError, clearance_benders,
                        clearance_cg, clearance_cpg)
from .colgen import cg_solve
from .cpg import CpgCostParams, cpg_solve
from .direct_mip import build_zepp_mip, solve_zepp
from .evaluation import compare_methods, validate
from .instances import GenParams, Instance, generate_instance, load_plan, save_plan
from .results import SolveLimits, SolveReport, write_trace_csv

log = logging.getLogger(__name__)

METHODS = ("mip", "bn", "bc", "cpg", "cg")

TRACE_COLUMNS = {
    "mip": ["iter"],
    "bn": ["iter", "z_rmp", "z_sp", "z_sp_max", "wall"],
    "bc": ["iter", "z_rmp", "z_sp", "z_sp_max", "wall"],
    "cpg": ["iter", "pool", "critical", "objective"],
    "cg": ["iter", "columns_added", "lp_objective", "wall"],
}


def _limits(args):
    return SolveLimits(total=args.time_limit, per_solve=args.per_solve_limit,
                       per_probe=getattr(args, "per_probe_limit", None))


def _dispatch_solve(args, instance, graph):
    limits = _limits(args)
    horizon = args.horizon or instance.horizon_steps
    step = instance.step_minutes
    if args.method == "mip":
        teg = instance.build_teg(horizon)
        plan, report = solve_zepp(build_zepp_mip(teg, args.contraflow),
                                  time_limit=limits.total)
        return plan, report
    if args.method == "bn":
        plan, report, _ = bn_solve(graph, horizon, step, args.contraflow, limits)
        return plan, report
    if args.method == "bc":
        plan, report, _ = bc_solve(graph, horizon, step, args.contraflow,
                                   args.pareto, limits)
        return plan, report
    if args.method == "cpg":
        params = CpgCostParams(alpha_travel=args.alpha[0],
                               alpha_congestion=args.alpha[1],
                               alpha_utilization=args.alpha[2],
                               seed=args.seed)
        plan, report, _ = cpg_solve(graph, horizon, step, args.contraflow,
                                    limits, params)
        return plan, report
    plan, report, _ = cg_solve(graph, horizon, step, args.contraflow,
                               tuple(args.curves), limits,
                               elementary=args.elementary)
    return plan, report


def cmd_gen(args):
    params = GenParams(zones=args.zones, transit=args.transit, safe=args.safe,
                       scale=args.scale, horizon_steps=args.horizon,
                       step_minutes=args.step_minutes,
                       contraflow_prob=args.contraflow_prob)
    inst = generate_instance(params, args.seed, name=args.name)
    inst.save(args.out)
    print(f"wrote {args.out} ({args.zones} zones, {args.transit} transit, "
          f"{args.safe} safe)")
    return 0


def cmd_solve(args):
    instance = Instance.load(args.instance)
    graph = instance.build_graph()
    plan, report = _dispatch_solve(args, instance, graph)
    report.instance = instance.name

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = f"{instance.name}-{args.method}"
    report.to_json(out_dir / f"{prefix}-report.json")
    write_trace_csv(report.trace, out_dir / f"{prefix}-trace.csv",
                    TRACE_COLUMNS[args.method])
    ok = False
    if plan is not None:
        save_plan(plan, instance, args.method, args.contraflow,
                  out_dir / f"{prefix}-plan.yaml")
        teg = instance.build_teg(args.horizon or instance.horizon_steps,
                                 on_infeasible="allow")
        check = validate(plan, teg, contraflow_allowed=args.contraflow)
        with open(out_dir / f"{prefix}-validation.json", "w",
                  encoding="utf-8") as fh:
            json.dump(check.to_dict(), fh, indent=2, sort_keys=True)
        ok = check.ok
        print(f"{args.method}: evacuated {check.evacuated:.0f} "
              f"({check.evac_percent:.1f}%), status {report.status}, "
              f"validation {'ok' if ok else 'FAILED'}")
    else:
        print(f"{args.method}: no plan ({report.status})")
    return 0 if ok else 1


def cmd_clearance(args):
    instance = Instance.load(args.instance)
    graph = instance.build_graph()
    limits = _limits(args)
    max_horizon = args.max_horizon or instance.horizon_steps
    try:
        if args.method in ("bn", "bc"):
            result = clearance_benders(args.method, graph, max_horizon,
                                       instance.step_minutes, args.contraflow,
                                       args.pareto, limits)
        elif args.method == "cpg":
            params = CpgCostParams(seed=args.seed)
            result = clearance_cpg(graph, max_horizon, instance.step_minutes,
                                   args.contraflow, limits, params)
        elif args.method == "cg":
            plan, report, _ = cg_solve(graph, max_horizon, instance.step_minutes,
                                       args.contraflow, tuple(args.curves),
                                       limits, elementary=args.elementary)
            result = clearance_cg(plan, report, graph)
        else:
            print(f"clearance is not defined for method {args.method!r}",
                  file=sys.stderr)
            return 2
    except ClearanceInfeasibleError as exc:
        print(f"not fully evacuable: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = f"{instance.name}-{args.method}-clearance"
    write_trace_csv(result.probes, out_dir / f"{prefix}-probes.csv",
                    ["horizon", "phase", "value"])
    summary = {
        "method": result.method, "h_star": result.h_star,
        "h_dagger": result.h_dagger, "minutes": result.minutes,
        "certified": result.certified, "status": result.status,
    }
    with open(out_dir / f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    if result.plan is not None:
        save_plan(result.plan, instance, args.method, args.contraflow,
                  out_dir / f"{prefix}-plan.yaml")
    print(f"{args.method}: clearance {result.h_star} steps"
          f" ({result.minutes} min), lower bound {result.h_dagger},"
          f" certified {result.certified}")
    return 0 if result.h_star is not None else 1


def cmd_validate(args):
    instance = Instance.load(args.instance)
    plan, doc = load_plan(args.plan, instance)
    teg = instance.build_teg(on_infeasible="allow")
    check = validate(plan, teg, contraflow_allowed=doc.get("contraflow", True))
    print(json.dumps(check.to_dict(), indent=2, sort_keys=True))
    return 0 if check.ok else 1


def cmd_compare(args):
    reports = []
    for path in args.reports:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        reports.append(SolveReport(**doc))
    rows = compare_methods(reports)
    columns = ["method", "evac_percent", "clearance_steps", "upper_bound",
               "lower_bound", "gap", "wall_time", "replay_ratio"]
    print(",".join(columns))
    for row in rows:
        print(",".join("" if row[c] is None else f"{row[c]}" for c in columns))
    if args.out:
        write_trace_csv(rows, args.out, columns)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="zeplan",
        description="zone-based evacuation planning solvers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zones", type=int, default=3)
    p.add_argument("--transit", type=int, default=6)
    p.add_argument("--safe", type=int, default=2)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=16)
    p.add_argument("--step-minutes", type=float, default=5.0)
    p.add_argument("--contraflow-prob", type=float, default=0.25)
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    def common_solve_args(p):
        p.add_argument("--instance", required=True)
        p.add_argument("--method", choices=METHODS, required=True)
        p.add_argument("--contraflow", action="store_true")
        p.add_argument("--pareto", action="store_true",
                       help="Pareto-optimal cuts (bc only)")
        p.add_argument("--curves", type=int, nargs="+",
                       default=[2, 6, 10, 25, 50], help="step rates (cg only)")
        p.add_argument("--elementary", action="store_true",
                       help="restrict cg pricing to elementary paths")
        p.add_argument("--alpha", type=float, nargs=3,
                       default=[1 / 3, 1 / 3, 1 / 3],
                       help="cpg cost weights (travel congestion utilization)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--time-limit", type=float, default=None)
        p.add_argument("--per-solve-limit", type=float, default=None)
        p.add_argument("--out-dir", default="runs")
        p.add_argument("--dump-models", metavar="DIR", default=None,
                       help="write every LP/MIP as LP text into DIR")

    p = sub.add_parser("solve", help="solve one instance with one method")
    common_solve_args(p)
    p.add_argument("--horizon", type=int, default=None,
                   help="override the instance horizon")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("clearance", help="minimum clearance time search")
    common_solve_args(p)
    p.add_argument("--max-horizon", type=int, default=None)
    p.add_argument("--per-probe-limit", type=float, default=None)
    p.set_defaults(func=cmd_clearance)

    p = sub.add_parser("validate", help="validate a plan file")
    p.add_argument("--instance", required=True)
    p.add_argument("--plan", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare", help="tabulate solve reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    backend.selected_engine()
    if getattr(args, "dump_models", None):
        backend.set_dump_dir(args.dump_models)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
