"""Minimum clearance time: the smallest horizon evacuating everyone.

Convention, used everywhere: a clearance time in steps is the smallest
horizon step count containing the last arrival, i.e. last arrival index +
1; minutes are steps * step_minutes.

For the Benders methods the search has two phases: a binary search on the
master alone gives a lower bound (the master value is nondecreasing in the
horizon), then a sequential ascending search with the full method finds the
true clearance time, which tends to sit just above the bound. The path
generation heuristic gets a plain binary search over full runs; since it
may fail at feasible horizons, its result is only an upper bound and is
marked uncertified whenever a probe failed below the returned horizon. The
column generation method reports the last arrival of an existing run
instead of searching (its runs are too expensive to probe), always
uncertified.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import backend
from .benders_conv import bc_build_rmp, bc_contraflow_preprocess, bc_solve
from .benders_nc import bn_build_rmp, bn_solve
from .cpg import cpg_solve
from .network import ZeplanError, build_time_expanded
from .results import Budget, SolveLimits

log = logging.getLogger(__name__)

VALUE_TOL = 1e-6


class ClearanceInfeasibleError(ZeplanError):
    """The instance cannot be fully evacuated within the maximum horizon."""

    def __init__(self, max_horizon, achieved_percent):
        self.max_horizon = max_horizon
        self.achieved_percent = achieved_percent
        super().__init__(
            f"not fully evacuable within {max_horizon} steps "
            f"(best {achieved_percent:.1f}%)")


@dataclass
class ClearanceResult:
    method: str
    h_star: int | None
    h_dagger: int | None = None
    certified: bool = False
    status: str = "cleared"
    probes: list = field(default_factory=list)
    plan: object = None
    report: object = None
    step_minutes: float = 5.0

    @property
    def minutes(self):
        return None if self.h_star is None else self.h_star * self.step_minutes


def _rmp_value(g, horizon, step_minutes, contraflow, method, per_solve):
    """Master value at a probe horizon; stranded zones just lower it."""
    teg = build_time_expanded(g, horizon, step_minutes, on_infeasible="allow")
    if method == "bc":
        model = bc_build_rmp(teg)
    else:
        model = bn_build_rmp(teg, contraflow)
    sol = backend.solve_mip(model, time_limit=per_solve)
    if not sol.ok:
        raise RuntimeError(f"master probe failed at horizon {horizon}: {sol.status}")
    return sol.objective


def clearance_benders(method, g, max_horizon, step_minutes=5.0,
                      contraflow=False, pareto=False, limits=None):
    """Two-phase exact search for the bn/bc methods.

    Phase 1 binary-searches the master for the lower bound h_dagger; phase
    2 walks the full method upward from it. Raises
    ClearanceInfeasibleError when even the maximum horizon cannot evacuate
    everyone.
    """
    if method not in ("bn", "bc"):
        raise ValueError("method must be 'bn' or 'bc'")
    limits = limits or SolveLimits()
    budget = Budget(limits.total)
    total = g.total_demand()
    probes = []

    g_rmp = bc_contraflow_preprocess(g) if (method == "bc" and contraflow) else g

    def rmp_at(h):
        value = _rmp_value(g_rmp, h, step_minutes, contraflow, method,
                           budget.solve_limit(limits.per_solve))
        probes.append({"horizon": h, "phase": "rmp", "value": value})
        return value

    if rmp_at(max_horizon) < total - VALUE_TOL:
        _plan, report = _full_run(method, g, max_horizon, step_minutes,
                                  contraflow, pareto, limits, budget)
        raise ClearanceInfeasibleError(max_horizon, report.evac_percent or 0.0)

    lo, hi = 1, max_horizon
    while lo < hi:
        mid = (lo + hi) // 2
        if rmp_at(mid) >= total - VALUE_TOL:
            hi = mid
        else:
            lo = mid + 1
    h_dagger = lo

    h_star, plan, report = None, None, None
    for h in range(h_dagger, max_horizon + 1):
        if budget.exhausted():
            return ClearanceResult(method=method, h_star=None,
                                   h_dagger=h_dagger, certified=False,
                                   status="budget-exhausted", probes=probes,
                                   step_minutes=step_minutes)
        cand_plan, cand_report = _full_run(method, g, h, step_minutes,
                                           contraflow, pareto, limits, budget)
        achieved = cand_report.evacuated or 0.0
        probes.append({"horizon": h, "phase": "full", "value": achieved})
        if achieved >= total - VALUE_TOL:
            h_star, plan, report = h, cand_plan, cand_report
            break
    if h_star is None:
        raise ClearanceInfeasibleError(max_horizon,
                                       report.evac_percent if report else 0.0)
    return ClearanceResult(method=method, h_star=h_star, h_dagger=h_dagger,
                           certified=True, probes=probes, plan=plan,
                           report=report, step_minutes=step_minutes)


def _full_run(method, g, horizon, step_minutes, contraflow, pareto, limits,
              budget):
    per_probe = limits.per_probe
    sub_limits = SolveLimits(total=budget.solve_limit(per_probe),
                             per_solve=limits.per_solve)
    try:
        if method == "bc":
            plan, report, _ = bc_solve(g, horizon, step_minutes, contraflow,
                                       pareto, sub_limits)
        else:
            plan, report, _ = bn_solve(g, horizon, step_minutes, contraflow,
                                       sub_limits)
    except ZeplanError:
        return None, _empty_report(method, horizon)
    return plan, report


def _empty_report(method, horizon):
    from .results import SolveReport

    return SolveReport(method=method, horizon=horizon, status="infeasible",
                       evacuated=0.0, evac_percent=0.0)


def clearance_cpg(g, max_horizon, step_minutes=5.0, contraflow=False,
                  limits=None, params=None, max_rounds=None):
    """Binary search over full heuristic runs.

    The returned horizon is an upper bound on the true clearance time; it
    is certified only when no probe below it failed (the heuristic may miss
    feasible schedules). The plan returned is a fresh deterministic re-run
    at the returned horizon.
    """
    from .cpg import MAX_ROUNDS

    limits = limits or SolveLimits()
    budget = Budget(limits.total)
    total = g.total_demand()
    probes = []
    rounds = max_rounds or MAX_ROUNDS

    def probe(h):
        sub_limits = SolveLimits(total=budget.solve_limit(limits.per_probe),
                                 per_solve=limits.per_solve)
        try:
            _plan, report, _ = cpg_solve(g, h, step_minutes, contraflow,
                                         sub_limits, params, max_rounds=rounds)
        except ZeplanError:
            probes.append({"horizon": h, "phase": "full", "value": 0.0})
            return False, 0.0
        achieved = report.evacuated or 0.0
        probes.append({"horizon": h, "phase": "full", "value": achieved})
        return achieved >= total - VALUE_TOL, achieved

    ok, achieved = probe(max_horizon)
    if not ok:
        raise ClearanceInfeasibleError(max_horizon,
                                       100.0 * achieved / max(total, 1))
    lo, hi = 1, max_horizon
    while lo < hi:
        mid = (lo + hi) // 2
        ok, _ = probe(mid)
        if ok:
            hi = mid
        else:
            lo = mid + 1
    h_star = lo
    plan, report, _ = cpg_solve(g, h_star, step_minutes, contraflow,
                                SolveLimits(total=budget.solve_limit(limits.per_probe),
                                            per_solve=limits.per_solve), params,
                                max_rounds=rounds)
    failed_below = any(p["horizon"] < h_star and p["value"] < total - VALUE_TOL
                       for p in probes)
    return ClearanceResult(method="cpg", h_star=h_star, certified=not failed_below,
                           probes=probes, plan=plan, report=report,
                           step_minutes=step_minutes)


def clearance_cg(plan, report, graph):
    """Last arrival of an existing column-generation run; never certified."""
    if report.evac_percent is None or report.evac_percent < 100.0 - 1e-9 \
            or plan is None:
        return ClearanceResult(method="cg", h_star=None, certified=False,
                               status="not-cleared", report=report,
                               step_minutes=report.step_minutes)
    last = plan.last_arrival_step(graph)
    h = None if last is None else last + 1
    return ClearanceResult(method="cg", h_star=h, certified=False,
                           status="cleared", plan=plan, report=report,
                           step_minutes=report.step_minutes)
