"""Conflict-based path generation heuristic.

Alternates between a path generator and a scheduling master over a growing
path pool. The generator runs one cheapest-path computation per critical
zone (a zone not yet fully evacuated) on the static graph, under arc costs
that blend normalized travel time, how often the arc already appears in the
pool, and its scheduled utilization; a multiplicative noise factor on the
travel term activates once the master objective stalls, so repeated rounds
explore alternative corridors. The master is a MIP selecting one pool path
per zone and scheduling per-step departures along selected paths against
per-copy arc capacities (with contraflow orientation when enabled).

The loop stops when no critical zones remain or after a fixed iteration
cap, then re-solves the master with integer departures. Heuristic by
design: no optimality certificate, and the objective never exceeds the
direct MIP's.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import random
from dataclasses import dataclass, field

from . import backend
from .backend import EQ, GE, LE, Model
from .evaluation import validate
from .network import EvacuationPlan, build_time_expanded
from .results import Budget, SolveLimits, SolveReport

log = logging.getLogger(__name__)

MAX_ROUNDS = 10
FLOW_TOL = 1e-6


@dataclass
class CpgCostParams:
    """Arc-cost weights (must sum to 1), noise half-width, and seed."""

    alpha_travel: float = 1.0 / 3.0
    alpha_congestion: float = 1.0 / 3.0
    alpha_utilization: float = 1.0 / 3.0
    noise_halfwidth: float = 0.50
    seed: int = 0

    def __post_init__(self):
        total = self.alpha_travel + self.alpha_congestion + self.alpha_utilization
        if abs(total - 1.0) > 1e-9 or min(self.alpha_travel,
                                          self.alpha_congestion,
                                          self.alpha_utilization) < 0:
            raise ValueError("alpha weights must be nonnegative and sum to 1")


@dataclass
class PathPool:
    """Deduplicated pool of generated paths with per-zone and per-arc indexes."""

    paths: list = field(default_factory=list)
    by_zone: dict = field(default_factory=dict)
    by_arc: dict = field(default_factory=dict)
    _keys: set = field(default_factory=set)

    def add(self, path):
        if path.key() in self._keys:
            return False
        self._keys.add(path.key())
        index = len(self.paths)
        self.paths.append(path)
        self.by_zone.setdefault(path.zone, []).append(index)
        for aid in path.arcs:
            self.by_arc.setdefault(aid, []).append(index)
        return True

    def __len__(self):
        return len(self.paths)


def cpg_edge_cost(arc, pool, scheduled_by_path, params, teg, noise=1.0):
    """Blended arc cost for the generator.

    scheduled_by_path[i] is the total flow the last master put on pool path
    i. Congestion and utilization terms are zero on an empty pool; a
    zero-capacity arc carrying flow is a scheduling bug and raises.
    """
    g = teg.graph
    max_travel = max(a.travel_steps for a in g.arcs)
    cost = params.alpha_travel * (arc.travel_steps * noise) / max(max_travel, 1)
    if len(pool):
        uses = len(pool.by_arc.get(arc.id, ()))
        cost += params.alpha_congestion * uses / len(pool)
        agg_cap = teg.aggregate_cap(arc.id)
        through = sum(scheduled_by_path.get(i, 0.0)
                      for i in pool.by_arc.get(arc.id, ()))
        if agg_cap > 0:
            cost += params.alpha_utilization * through / agg_cap
        elif through > FLOW_TOL:
            raise RuntimeError(
                f"scheduled flow {through} on zero-capacity arc {arc.id}")
    return cost


def _shortest_path(g, zone, costs):
    """Dijkstra from one zone to the nearest safe node; deterministic ties."""
    for aid, c in costs.items():
        if c < -1e-12:
            raise AssertionError(f"negative generator cost on arc {aid}")
    dist = {zone: 0.0}
    parent = {}
    heap = [(0.0, zone)]
    settled = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if g.is_safe(node):
            arcs = []
            while node != zone:
                aid = parent[node]
                arcs.append(aid)
                node = g.arc_by_id[aid].tail
            return list(reversed(arcs))
        for aid in g.delta_out(node):
            head = g.arc_by_id[aid].head
            nd = d + costs[aid]
            if head not in settled and nd < dist.get(head, float("inf")) - 1e-15:
                dist[head] = nd
                parent[head] = aid
                heapq.heappush(heap, (nd, head))
    return None


def cpg_generate_paths(critical, pool, scheduled_by_path, params, teg,
                       rng=None, noisy=False):
    """One cheapest path per critical zone under the current costs.

    The multi-origin problem decomposes per zone, so each zone gets an
    independent run. Paths already in the pool are discarded. With noisy
    generation the travel term of every arc is scaled by a fresh factor in
    [1-eps, 1+eps].
    """
    g = teg.graph
    new_paths = []
    infeasible = []
    for k in sorted(critical):
        costs = {}
        for a in g.arcs:
            noise = 1.0
            if noisy and rng is not None:
                noise = 1.0 + params.noise_halfwidth * (2.0 * rng.random() - 1.0)
            costs[a.id] = cpg_edge_cost(a, pool, scheduled_by_path, params,
                                        teg, noise)
        arcs = _shortest_path(g, k, costs)
        if arcs is None:
            infeasible.append(k)
            continue
        path = teg.make_path(k, arcs)
        if path.key() not in pool._keys and all(p.key() != path.key()
                                                for p in new_paths):
            new_paths.append(path)
    return new_paths, infeasible


def _dep(i, t):
    return f"dep[{i},{t}]"


def build_cpg_rmp(teg, pool, contraflow, integer=False):
    """Master: select one pool path per zone and schedule departures."""
    g = teg.graph
    m = Model("cpg-rmp", sense="max")
    for i, path in enumerate(pool.paths):
        m.add_binary(f"pick[{i}]")
        for t in path.usable_steps:
            m.add_var(_dep(i, t), 0.0, None, integer=integer)
    for k in g.zones:
        m.add_var(f"short[{k}]", 0.0, None)
    for aid in sorted(g.paired_arcs):
        m.add_binary(f"y[{aid}]")
        if not contraflow:
            m.set_bounds(f"y[{aid}]", 1.0, 1.0)

    for k in g.zones:
        members = pool.by_zone.get(k, [])
        if not members:
            continue
        m.add_constr(f"onepath[{k}]",
                     {f"pick[{i}]": 1.0 for i in members}, EQ, 1.0)
        coeffs = {f"short[{k}]": 1.0}
        for i in members:
            for t in pool.paths[i].usable_steps:
                coeffs[_dep(i, t)] = 1.0
        m.add_constr(f"dem[{k}]", coeffs, EQ, float(g.demand[k]))

    # per-copy capacities: departures of path i at t-offset cross arc at t
    users = {}
    for i, path in enumerate(pool.paths):
        for aid, off in zip(path.arcs, path.offsets):
            for t0 in path.usable_steps:
                users.setdefault((aid, t0 + off), []).append((i, t0))
    for (aid, t), entries in sorted(users.items()):
        coeffs = {_dep(i, t0): 1.0 for (i, t0) in entries}
        cap = teg.cap(aid, t)
        if aid in g.paired_arcs:
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

    for i, path in enumerate(pool.paths):
        window = len(path.usable_steps)
        path_cap = _effective_path_capacity(g, path, contraflow)
        coeffs = {_dep(i, t): 1.0 for t in path.usable_steps}
        coeffs[f"pick[{i}]"] = -float(window * path_cap)
        m.add_constr(f"pathcap[{i}]", coeffs, LE, 0.0)

    m.set_objective({_dep(i, t): 1.0
                     for i, path in enumerate(pool.paths)
                     for t in path.usable_steps})
    return m


def _effective_path_capacity(g, path, contraflow):
    """Min per-step arc capacity along the path, contraflow-aware.

    With contraflow on, a pairable arc can run at u + u_reverse, so the
    selection gate must not clip below what the per-step capacity rows
    allow.
    """
    caps = []
    for aid in path.arcs:
        a = g.arc_by_id[aid]
        cap = a.capacity
        if contraflow and aid in g.paired_arcs:
            cap += g.arc_by_id[g.reverse_of[aid]].capacity
        caps.append(cap)
    return min(caps)


def _schedule_from(pool, values):
    by_path = {}
    for i, path in enumerate(pool.paths):
        total = sum(values.get(_dep(i, t), 0.0) for t in path.usable_steps)
        if total > FLOW_TOL:
            by_path[i] = total
    return by_path


def find_critical_zones(g, pool, values):
    """Zones whose scheduled arrivals fall short of their demand."""
    scheduled = {k: 0.0 for k in g.zones}
    for i, path in enumerate(pool.paths):
        for t in path.usable_steps:
            scheduled[path.zone] += values.get(_dep(i, t), 0.0)
    return sorted(k for k in g.zones
                  if scheduled[k] < g.demand[k] - FLOW_TOL)


def cpg_solve(g, horizon, step_minutes=5.0, contraflow=False, limits=None,
              params=None, max_rounds=MAX_ROUNDS):
    """Run the generate/schedule loop; returns (plan, report, trace_hash).

    Deterministic under the params seed; the returned hash digests the full
    iteration trace for reproducibility checks.
    """
    limits = limits or SolveLimits()
    params = params or CpgCostParams()
    budget = Budget(limits.total)
    rng = random.Random(params.seed)
    teg = build_time_expanded(g, horizon, step_minutes)

    pool = PathPool()
    trace = []
    status = "heuristic"
    scheduled_by_path = {}
    values = {}
    best_objective = float("-inf")
    stalled = 0
    critical = set(g.zones)
    sol = None

    for round_no in range(1, max_rounds + 1):
        new_paths, infeasible = cpg_generate_paths(
            critical, pool, scheduled_by_path, params, teg, rng,
            noisy=stalled >= 1)
        if infeasible and round_no == 1:
            raise RuntimeError(f"zones {infeasible} have no generatable path")
        for p in new_paths:
            pool.add(p)

        rmp = build_cpg_rmp(teg, pool, contraflow)
        sol = backend.solve_mip(rmp, time_limit=budget.solve_limit(limits.per_solve))
        if not sol.ok:
            status = "time_limit" if sol.status == "time_limit" else "error"
            break
        values = sol.values
        scheduled_by_path = _schedule_from(pool, values)
        critical = find_critical_zones(g, pool, values)
        trace.append({"iter": round_no, "pool": len(pool),
                      "critical": len(critical), "objective": sol.objective})
        if sol.objective > best_objective + FLOW_TOL:
            best_objective = sol.objective
            stalled = 0
        else:
            stalled += 1
        if not critical:
            break
        if budget.exhausted():
            status = "time_limit"
            break

    rounds = len(trace)
    final = backend.solve_mip(build_cpg_rmp(teg, pool, contraflow, integer=True),
                              time_limit=budget.solve_limit(limits.per_solve))
    plan = _decode_plan(g, teg, pool, final)
    check = validate(plan, teg, contraflow_allowed=contraflow)
    if not check.ok:
        log.error("decoded plan failed validation: %s", check.violations)

    digest = hashlib.sha256(repr(trace).encode()).hexdigest()
    report = SolveReport(
        method="cpg", horizon=horizon, step_minutes=step_minutes,
        contraflow=contraflow, status=status,
        objective=final.objective,
        evacuated_claimed=final.objective,
        evacuated=check.evacuated, evac_percent=check.evac_percent,
        clearance_steps=check.clearance_steps,
        iterations=rounds, wall_time=budget.elapsed(), trace=trace,
        extras={"pool_size": len(pool), "critical_left": len(critical),
                "trace_hash": digest, "validation_ok": check.ok},
    )
    return plan, report, digest


def _decode_plan(g, teg, pool, sol):
    zone_paths = {}
    departures = {}
    for i, path in enumerate(pool.paths):
        if sol.values.get(f"pick[{i}]", 0.0) > 0.5:
            zone_paths[path.zone] = path
            deps = {}
            for t in path.usable_steps:
                v = sol.values.get(_dep(i, t), 0.0)
                if v > 1e-9:
                    deps[t] = v
            departures[path.zone] = deps
    for k in g.zones:
        zone_paths.setdefault(k, None)
        departures.setdefault(k, {})
    orientation = {aid: (1 if sol.values.get(f"y[{aid}]", 1.0) > 0.5 else 0)
                   for aid in g.paired_arcs}
    return EvacuationPlan(zone_paths=zone_paths, departures=departures,
                          orientation=orientation)
