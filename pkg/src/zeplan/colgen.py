"""Column generation over non-preemptive time-response plans.

A column is one plan <path, constant-rate curve, start time> for one zone.
The master is a set-partitioning LP: pick exactly one plan per zone subject
to per-copy arc capacities, minimizing a cost that penalizes each arrival
linearly in its arrival step and each stranded evacuee by a constant c_bar
large enough to dominate any arrival penalty, so the objective behaves
lexicographically: first evacuate as many as possible, then as early as
possible.

Pricing searches, per (zone, curve), for the plan minimizing the dual-
adjusted cost. Because a time-response plan repeats the same path wave
after wave, those costs aggregate per arc copy: the copy crossed by the
first wave at step t carries the summed cost of every later wave at t+j.
With a virtual super sink attached to every safe copy, the best plan is a
least-cost path from the zone's time-0 copy to the sink on the extended
time-expanded graph, found by topological-order dynamic programming (the
graph is acyclic; costs may be negative). Start time decodes as the step of
the first non-waiting arc.

Elementary pricing (no repeated transit node on the static projection)
enumerates paths in cost order via recursive k-shortest-path enumeration
and keeps the first elementary one; past a threshold on k it falls back to
a resource-constrained shortest-path MIP (one visit per transit node across
all its time copies). Both branches return a true minimum-cost elementary
plan.

Master plan costs are always recomputed from replayed flows; pricing
estimates only guide the search. Columns enter the pool only with true
reduced cost below -1e-6.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import backend
from .backend import EQ, GE, LE, Model
from .evaluation import validate
from .kshortest import KShortestPaths
from .network import (EvacuationPlan, StepCurve, TimeResponsePlan, ZeplanError,
                      add_super_sink, build_time_expanded)
from .results import Budget, SolveLimits, SolveReport

log = logging.getLogger(__name__)

REDUCED_COST_TOL = 1e-6
ELEMENTARY_K_THRESHOLD = 100_000
MAX_ROUNDS = 200
SINK = "sink"


class CgInfeasibleError(ZeplanError):
    """No usable plan exists for some zones with any offered curve."""

    def __init__(self, zones):
        self.zones = tuple(sorted(zones))
        super().__init__(f"zones {list(self.zones)} admit no time-response plan")


@dataclass
class Column:
    """One master column: a time-response plan, or a stay-home fallback.

    Stay-home columns (plan None, zero flows, full stranding cost) keep the
    integer master feasible when every generated plan of a zone conflicts
    with the others' capacity use; the stranding penalty dominates every
    arrival penalty, so they are never selected over a plan that moves
    anyone.
    """

    zone: int
    plan: TimeResponsePlan | None
    cost: float
    flows: dict
    shortfall: float


@dataclass
class PlanPool:
    columns: list = field(default_factory=list)
    by_zone: dict = field(default_factory=dict)
    _keys: set = field(default_factory=set)

    def key(self, trp):
        return (trp.path.zone, trp.path.arcs, trp.curve.rate, trp.start)

    def add(self, column):
        k = (self.key(column.plan) if column.plan is not None
             else (column.zone, None, None, None))
        if k in self._keys:
            return False
        self._keys.add(k)
        index = len(self.columns)
        self.columns.append(column)
        self.by_zone.setdefault(column.zone, []).append(index)
        return True

    def __contains__(self, trp):
        return self.key(trp) in self._keys

    def __len__(self):
        return len(self.columns)


class CgContext:
    """Shared pricing data: extended graph, arrival penalties, c_bar."""

    def __init__(self, teg):
        if not teg.has_super_sink:
            add_super_sink(teg)
        self.teg = teg
        self.graph = teg.graph
        self.horizon = teg.horizon
        penalties = [self.arrival_penalty(aid, t)
                     for (aid, t, _arr) in teg.safe_entering_copies()]
        if not penalties:
            raise CgInfeasibleError(self.graph.zones)
        max_demand = max(self.graph.demand.values()) if self.graph.demand else 0
        self.cbar = 100.0 * max(penalties) * max_demand

    def arrival_penalty(self, aid, t):
        """Cost per vehicle on a safe-entering copy: arrival step / horizon."""
        arc = self.graph.arc_by_id[aid]
        if not self.graph.is_safe(arc.head):
            return 0.0
        return (t + arc.travel_steps) / self.horizon


def cg_plan_cost(ctx, trp, duals=None):
    """True plan cost from replayed flows; reduced cost when duals given.

    cost = sum arrival penalties + c_bar * stranded. The reduced cost
    subtracts the zone's partitioning dual and the capacity duals of every
    copy the plan touches.
    """
    demand = ctx.graph.demand[trp.path.zone]
    flows = trp.induced_flows(demand)
    shortfall = trp.shortfall(demand)
    cost = ctx.cbar * shortfall
    for (aid, t), v in flows.items():
        cost += ctx.arrival_penalty(aid, t) * v
    if duals is None:
        return cost, None
    reduced = cost - duals.get(f"oneplan[{trp.path.zone}]", 0.0)
    for (aid, t), v in flows.items():
        reduced -= duals.get(f"cap[{aid},{t}]", 0.0) * v
    return cost, reduced


# -- pricing graph -----------------------------------------------------------


def _pricing_arcs(ctx, zone, curve, duals):
    """Arc list of the extended graph with aggregated wave costs.

    Movement copy (a,t): the first wave crosses it at t and wave j at t+j,
    so its cost sums (penalty - capacity dual) * wave size over every later
    copy that exists. Waiting arcs are free; the sink arc from a safe copy
    at t charges c_bar for every evacuee the remaining horizon cannot
    deliver at the curve's rate.
    """
    g = ctx.graph
    teg = ctx.teg
    demand = g.demand[zone]
    duals = duals or {}
    arcs = []
    for (aid, t) in sorted(teg.copies):
        a = g.arc_by_id[aid]
        cost = 0.0
        j = 0
        while True:
            size = curve.wave(j, demand)
            if size <= 0 or not teg.copy_exists(aid, t + j):
                break
            unit = ctx.arrival_penalty(aid, t + j) - duals.get(f"cap[{aid},{t + j}]", 0.0)
            cost += unit * size
            j += 1
        arcs.append(((a.tail, t), (a.head, t + a.travel_steps), cost,
                     ("m", aid, t)))
    for (n, t) in sorted(teg.waiting):
        arcs.append((((n, t)), (n, t + 1), 0.0, ("w", n, t)))
    for (s, t) in teg.sink_arcs:
        undeliverable = demand - curve.cumulative(ctx.horizon - t, demand)
        arcs.append(((s, t), SINK, ctx.cbar * max(0.0, undeliverable),
                     ("s", s, t)))
    return arcs


def _decode_pricing_path(ctx, zone, curve, arc_ids):
    movement = [(aid, t) for (kind, aid, t) in arc_ids if kind == "m"]
    if not movement:
        return None
    static_arcs = [aid for (aid, _t) in movement]
    start = movement[0][1]
    path = ctx.teg.make_path(zone, static_arcs)
    return TimeResponsePlan(path=path, curve=curve, start=start)


def _static_projection_elementary(ctx, arc_ids):
    """No transit node may host two distinct outgoing movement arcs."""
    g = ctx.graph
    visited = set()
    for (kind, aid, t) in arc_ids:
        if kind != "m":
            continue
        tail = g.arc_by_id[aid].tail
        if g.node_kinds[tail] == "transit":
            if tail in visited:
                return False
            visited.add(tail)
    return True


def cg_price(ctx, zone, curve, duals):
    """Least-cost plan for one (zone, curve) under the current duals.

    Returns (plan, pricing_cost, pricing_reduced) or (None, None, None)
    when the zone cannot reach the sink. pricing_reduced is the search's
    estimate (path cost minus the partitioning dual); admission decisions
    use the true replayed reduced cost.
    """
    arcs = _pricing_arcs(ctx, zone, curve, duals)
    search = KShortestPaths(arcs, (zone, 0), SINK)
    entry = search.path(0)
    if entry is None:
        return None, None, None
    cost, arc_ids = entry
    plan = _decode_pricing_path(ctx, zone, curve, arc_ids)
    if plan is None:
        return None, None, None
    reduced = cost - (duals or {}).get(f"oneplan[{zone}]", 0.0)
    return plan, cost, reduced


def cg_price_elementary(ctx, zone, curve, duals,
                        k_threshold=ELEMENTARY_K_THRESHOLD):
    """Least-cost plan whose static projection repeats no transit node.

    Enumerates paths in cost order and returns the first elementary one;
    after k_threshold paths, solves the resource-constrained MIP instead.
    Returns (plan, pricing_cost, pricing_reduced, info).
    """
    arcs = _pricing_arcs(ctx, zone, curve, duals)
    search = KShortestPaths(arcs, (zone, 0), SINK)
    k = 0
    while k < k_threshold:
        entry = search.path(k)
        if entry is None:
            if k == 0:
                return None, None, None, {"branch": "kshortest", "k": 0}
            break
        cost, arc_ids = entry
        if _static_projection_elementary(ctx, arc_ids):
            plan = _decode_pricing_path(ctx, zone, curve, arc_ids)
            reduced = cost - (duals or {}).get(f"oneplan[{zone}]", 0.0)
            return plan, cost, reduced, {"branch": "kshortest", "k": k + 1}
        k += 1
    else:
        log.info("elementary pricing for zone %s exceeded k threshold %d; "
                 "solving the resource-constrained model", zone, k_threshold)
    plan, cost = _elementary_pricing_mip(ctx, zone, curve, arcs)
    if plan is None:
        return None, None, None, {"branch": "mip", "k": k}
    reduced = cost - (duals or {}).get(f"oneplan[{zone}]", 0.0)
    return plan, cost, reduced, {"branch": "mip", "k": k}


def _elementary_pricing_mip(ctx, zone, curve, arcs):
    """Resource-constrained least-cost path: one visit per transit node."""
    g = ctx.graph
    m = Model("cg-psp", sense="min")
    out_of, into = {}, {}
    for idx, (tail, head, cost, aid) in enumerate(arcs):
        m.add_binary(f"use[{idx}]")
        out_of.setdefault(tail, []).append(idx)
        into.setdefault(head, []).append(idx)
    source = (zone, 0)
    if source not in out_of:
        return None, None
    m.add_constr("source", {f"use[{i}]": 1.0 for i in out_of[source]}, EQ, 1.0)
    m.add_constr("sink", {f"use[{i}]": 1.0 for i in into[SINK]}, EQ, 1.0)
    nodes = set(out_of) | set(into)
    for node in nodes:
        if node == source or node == SINK:
            continue
        coeffs = {f"use[{i}]": 1.0 for i in into.get(node, [])}
        for i in out_of.get(node, []):
            coeffs[f"use[{i}]"] = coeffs.get(f"use[{i}]", 0.0) - 1.0
        m.add_constr(f"cont[{node}]", coeffs, EQ, 0.0)
    by_transit = {}
    for idx, (tail, head, cost, aid) in enumerate(arcs):
        if aid[0] == "m":
            node = tail[0]
            if g.node_kinds[node] == "transit":
                by_transit.setdefault(node, []).append(idx)
    for node, indexes in sorted(by_transit.items()):
        m.add_constr(f"visit[{node}]", {f"use[{i}]": 1.0 for i in indexes},
                     LE, 1.0)
    m.set_objective({f"use[{idx}]": arcs[idx][2] for idx in range(len(arcs))})

    sol = backend.solve_mip(m)
    if sol.status != "optimal":
        return None, None
    chosen = {idx for idx in range(len(arcs))
              if sol.values.get(f"use[{idx}]", 0.0) > 0.5}
    ordered = []
    node = source
    guard = 0
    while node != SINK and guard <= len(arcs):
        guard += 1
        nxt = [idx for idx in out_of.get(node, []) if idx in chosen]
        if not nxt:
            return None, None
        idx = nxt[0]
        ordered.append(arcs[idx][3])
        node = arcs[idx][1]
    plan = _decode_pricing_path(ctx, zone, curve, ordered)
    return plan, sol.objective


# -- master ------------------------------------------------------------------


def build_cg_rmp(ctx, pool, contraflow, integer=False):
    g = ctx.graph
    teg = ctx.teg
    m = Model("cg-rmp", sense="min")
    for i, col in enumerate(pool.columns):
        if integer:
            m.add_binary(f"pick[{i}]")
        else:
            m.add_var(f"pick[{i}]", 0.0, None)
    if contraflow:
        for aid in sorted(g.paired_arcs):
            if integer:
                m.add_binary(f"y[{aid}]")
            else:
                m.add_var(f"y[{aid}]", 0.0, 1.0)

    for k in g.zones:
        members = pool.by_zone.get(k, [])
        if not members:
            raise CgInfeasibleError([k])
        m.add_constr(f"oneplan[{k}]", {f"pick[{i}]": 1.0 for i in members},
                     EQ, 1.0)

    users = {}
    for i, col in enumerate(pool.columns):
        for (aid, t), v in col.flows.items():
            if v > 0:
                users.setdefault((aid, t), []).append((i, v))
    for (aid, t), entries in sorted(users.items()):
        coeffs = {f"pick[{i}]": float(v) for (i, v) in entries}
        cap = teg.cap(aid, t)
        if contraflow and aid in g.paired_arcs:
            rev = g.reverse_of[aid]
            rev_cap = teg.reverse_cap(aid, t)
            coeffs[f"y[{aid}]"] = -float(cap)
            coeffs[f"y[{rev}]"] = float(rev_cap)
            m.add_constr(f"cap[{aid},{t}]", coeffs, LE, float(rev_cap))
        else:
            m.add_constr(f"cap[{aid},{t}]", coeffs, LE, float(cap))
    if contraflow:
        for (e, ebar) in g.contraflow_pairs:
            m.add_constr(f"pair[{e}]", {f"y[{e}]": 1.0, f"y[{ebar}]": 1.0},
                         GE, 1.0)

    m.set_objective({f"pick[{i}]": col.cost
                     for i, col in enumerate(pool.columns)})
    return m


def _make_column(ctx, trp):
    demand = ctx.graph.demand[trp.path.zone]
    cost, _ = cg_plan_cost(ctx, trp)
    return Column(zone=trp.path.zone, plan=trp, cost=cost,
                  flows=trp.induced_flows(demand),
                  shortfall=trp.shortfall(demand))


def seed_pool(ctx, curves, duals=None):
    """One zero-dual priced plan per (zone, curve) plus a stay-home column.

    A zone with no priced plan for any curve has no way to reach safety and
    is reported as a culprit.
    """
    pool = PlanPool()
    stuck = []
    for k in ctx.graph.zones:
        found = False
        for curve in curves:
            plan, _cost, _red = cg_price(ctx, k, curve, duals or {})
            if plan is not None:
                pool.add(_make_column(ctx, plan))
                found = True
        if not found:
            stuck.append(k)
        demand = ctx.graph.demand[k]
        pool.add(Column(zone=k, plan=None, cost=ctx.cbar * demand,
                        flows={}, shortfall=demand))
    if stuck:
        raise CgInfeasibleError(stuck)
    return pool


def cg_solve(g, horizon, step_minutes=5.0, contraflow=False, curves=(2, 6, 10, 25, 50),
             limits=None, elementary=False, k_threshold=ELEMENTARY_K_THRESHOLD,
             max_rounds=MAX_ROUNDS):
    """Column-generation loop plus final integer master.

    curves lists the step-curve rates offered to every zone. Returns
    (plan, report, pool). Pricing runs per (zone, curve) pair; pairs are
    independent and could be priced concurrently, the loop here prices them
    sequentially and deterministically.
    """
    limits = limits or SolveLimits()
    budget = Budget(limits.total)
    # zones without any usable plan surface as CgInfeasibleError from seeding
    teg = build_time_expanded(g, horizon, step_minutes, on_infeasible="allow")
    ctx = CgContext(teg)
    curve_objs = [StepCurve(rate) for rate in sorted(curves)]
    if not curve_objs:
        raise ValueError("curve set must be nonempty")

    pool = seed_pool(ctx, curve_objs)
    trace = []
    status = "optimal"
    lp_obj = None
    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        rmp = build_cg_rmp(ctx, pool, contraflow)
        lp = backend.solve_lp(rmp, time_limit=budget.solve_limit(limits.per_solve))
        if lp.status != "optimal":
            status = "time_limit" if lp.status == "time_limit" else "error"
            break
        lp_obj = lp.objective
        added = 0
        for k in g.zones:
            for curve in curve_objs:
                if elementary:
                    plan, _c, _r, _info = cg_price_elementary(
                        ctx, k, curve, lp.duals, k_threshold)
                else:
                    plan, _c, _r = cg_price(ctx, k, curve, lp.duals)
                if plan is None or plan in pool:
                    continue
                _cost, true_reduced = cg_plan_cost(ctx, plan, lp.duals)
                if true_reduced < -REDUCED_COST_TOL:
                    pool.add(_make_column(ctx, plan))
                    added += 1
        trace.append({"iter": rounds, "columns_added": added,
                      "lp_objective": lp_obj, "wall": budget.elapsed()})
        if added == 0:
            break
        if budget.exhausted():
            status = "time_limit"
            break
    else:
        status = "iteration_limit"

    final = backend.solve_mip(build_cg_rmp(ctx, pool, contraflow, integer=True),
                              time_limit=budget.solve_limit(limits.per_solve))
    if final.status in ("infeasible", "unbounded") or final.objective is None:
        report = SolveReport(
            method="cg", horizon=horizon, step_minutes=step_minutes,
            contraflow=contraflow, status="infeasible",
            lower_bound=lp_obj, iterations=rounds,
            wall_time=budget.elapsed(), trace=trace,
            extras={"columns": len(pool), "elementary": elementary},
        )
        return None, report, pool

    plan = _decode_plan(ctx, pool, final, contraflow)
    check = validate(plan, teg, contraflow_allowed=contraflow)
    if not check.ok:
        log.error("decoded plan failed validation: %s", check.violations)
    gap = None
    if lp_obj is not None and abs(final.objective) > 1e-12:
        gap = max(0.0, (final.objective - lp_obj) / final.objective)

    claimed = g.total_demand() - sum(
        col.shortfall for i, col in enumerate(pool.columns)
        if final.values.get(f"pick[{i}]", 0.0) > 0.5)
    report = SolveReport(
        method="cg", horizon=horizon, step_minutes=step_minutes,
        contraflow=contraflow, status=status,
        objective=final.objective,
        upper_bound=final.objective, lower_bound=lp_obj, gap=gap,
        evacuated_claimed=claimed,
        evacuated=check.evacuated, evac_percent=check.evac_percent,
        clearance_steps=check.clearance_steps,
        iterations=rounds, wall_time=budget.elapsed(), trace=trace,
        extras={"columns": len(pool), "elementary": elementary,
                "lp_objective": lp_obj, "mip_objective": final.objective,
                "validation_ok": check.ok},
    )
    return plan, report, pool


def _decode_plan(ctx, pool, sol, contraflow):
    zone_paths, response = {}, {}
    for k in ctx.graph.zones:
        zone_paths[k] = None
    for i, col in enumerate(pool.columns):
        if sol.values.get(f"pick[{i}]", 0.0) > 0.5 and col.plan is not None:
            zone_paths[col.zone] = col.plan.path
            response[col.zone] = col.plan
    orientation = {}
    for aid in ctx.graph.paired_arcs:
        if contraflow:
            orientation[aid] = 1 if sol.values.get(f"y[{aid}]", 1.0) > 0.5 else 0
        else:
            orientation[aid] = 1
    return EvacuationPlan(zone_paths=zone_paths, response=response,
                          orientation=orientation)
