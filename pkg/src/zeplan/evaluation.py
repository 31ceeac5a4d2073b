"""Method-independent plan validation and comparison.

The validator re-derives every constraint family from the instance data and
the plan's raw schedule; it deliberately shares no code with the model
builders so it can serve as a differential check on them. Plans are stored
as per-zone departures (or time-response parameters) plus paths, so flows on
arc copies are replayed here from first principles: a wave leaving the zone
at step t crosses arc i of its path at t + offset_i (there is no waiting at
transit nodes, so propagation is deterministic).

Violation kinds: capacity, continuity, one-path, pair-exclusion, deadline,
block-time, demand, non-preemption. A zone that evacuates nobody may lack a
complete path (some masters legitimately leave zero-flow zones with partial
selections); a zone with positive flow must have one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

FLOW_TOL = 1e-6


@dataclass
class ValidationReport:
    ok: bool
    violations: list = field(default_factory=list)
    evacuated: float = 0.0
    evac_percent: float = 0.0
    clearance_steps: int | None = None
    peak_utilization: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "ok": self.ok,
            "violations": [
                {"kind": k, "location": str(loc), "amount": amt}
                for k, loc, amt in self.violations
            ],
            "evacuated": self.evacuated,
            "evac_percent": self.evac_percent,
            "clearance_steps": self.clearance_steps,
            "peak_utilization": {str(k): v for k, v in self.peak_utilization.items()},
        }


def _copy_allowed(graph, horizon, arc, t):
    """Existence of a departure slot, recomputed from static data alone."""
    if t < 0 or t + arc.travel_steps > horizon - 1:
        return False, "block-time"
    if arc.block_steps is not None and t >= arc.block_steps:
        return False, "block-time"
    if graph.is_zone(arc.tail):
        deadline = graph.deadline_steps.get(arc.tail)
        if deadline is not None and t >= deadline:
            return False, "deadline"
    return True, None


def _path_is_sound(graph, zone, path):
    if path is None or not path.arcs:
        return False
    arcs = [graph.arc_by_id.get(a) for a in path.arcs]
    if any(a is None for a in arcs):
        return False
    if arcs[0].tail != zone:
        return False
    for prev, nxt in zip(arcs, arcs[1:]):
        if prev.head != nxt.tail:
            return False
    return graph.is_safe(arcs[-1].head)


def validate(plan, teg, contraflow_allowed=True):
    """Check a plan against every constraint family of the instance."""
    graph = teg.graph
    horizon = teg.horizon
    violations = []

    orientation = dict(plan.orientation or {})
    for pair in graph.contraflow_pairs:
        e, ebar = pair
        ye = orientation.get(e, 1)
        yb = orientation.get(ebar, 1)
        if ye + yb < 1:
            violations.append(("pair-exclusion", pair, 1 - ye - yb))
        if not contraflow_allowed and (ye != 1 or yb != 1):
            violations.append(("pair-exclusion", pair, abs(1 - ye) + abs(1 - yb)))

    def effective_cap(arc, t):
        allowed, _ = _copy_allowed(graph, horizon, arc, t)
        if not allowed:
            return 0
        y_own = orientation.get(arc.id, 1)
        cap = y_own * arc.capacity
        rev_id = graph.reverse_of.get(arc.id)
        if rev_id is not None and orientation.get(rev_id, 1) == 0:
            rev = graph.arc_by_id[rev_id]
            # reversed lanes donate whenever the reverse road is unblocked
            if rev.block_steps is None or t < rev.block_steps:
                cap += rev.capacity
        return cap

    flows_by_zone = plan.flows_by_zone(graph)

    arrivals = {}
    departures = {}
    total_by_copy = {}
    clearance = None
    for k in graph.zones:
        path = plan.zone_paths.get(k)
        zone_flows = flows_by_zone.get(k, {})
        moved = sum(v for v in zone_flows.values() if v > 0)
        if plan.departures is not None:
            # declared departures count even when no path can replay them
            moved = max(moved, sum(v for v in plan.departures.get(k, {}).values()
                                   if v > 0))
        sound = _path_is_sound(graph, k, path)
        if moved > FLOW_TOL and not sound:
            violations.append(("one-path", k, moved))
            continue
        if path is not None and not sound:
            violations.append(("continuity", k, 0.0))
            continue

        dep = 0.0
        arr = 0.0
        for (aid, t), v in sorted(zone_flows.items()):
            if v <= FLOW_TOL:
                continue
            arc = graph.arc_by_id[aid]
            if aid not in (path.arcs if path else ()):
                violations.append(("continuity", (k, aid), v))
                continue
            allowed, why = _copy_allowed(graph, horizon, arc, t)
            if not allowed:
                violations.append((why, (aid, t), v))
            total_by_copy[(aid, t)] = total_by_copy.get((aid, t), 0.0) + v
            if arc.tail == k:
                dep += v
            if graph.is_safe(arc.head):
                arr += v
                arrive_t = t + arc.travel_steps
                clearance = arrive_t if clearance is None else max(clearance, arrive_t)
        departures[k] = dep
        arrivals[k] = arr
        if dep > graph.demand[k] + FLOW_TOL:
            violations.append(("demand", k, dep - graph.demand[k]))

        if plan.response is not None and k in plan.response:
            _check_single_window(plan.response[k], graph.demand[k], violations, k)

    for (aid, t), v in sorted(total_by_copy.items()):
        cap = effective_cap(graph.arc_by_id[aid], t)
        if v > cap + FLOW_TOL:
            violations.append(("capacity", (aid, t), v - cap))

    peak = {}
    for (aid, t), v in total_by_copy.items():
        arc = graph.arc_by_id[aid]
        cap = effective_cap(arc, t)
        if cap > 0:
            peak[aid] = max(peak.get(aid, 0.0), v / cap)

    total_demand = graph.total_demand()
    evacuated = sum(arrivals.values())
    report = ValidationReport(
        ok=not violations,
        violations=violations,
        evacuated=evacuated,
        evac_percent=(100.0 * evacuated / total_demand) if total_demand else 100.0,
        clearance_steps=None if clearance is None else clearance + 1,
        peak_utilization=peak,
    )
    return report


def _check_single_window(response_plan, demand, violations, zone):
    """Non-preemption: one contiguous window at the curve's constant rate."""
    flows = response_plan.induced_flows(demand)
    first_arc = response_plan.path.arcs[0]
    deps = sorted((t, v) for (aid, t), v in flows.items() if aid == first_arc)
    if not deps:
        return
    steps = [t for t, _ in deps]
    if steps != list(range(steps[0], steps[-1] + 1)):
        violations.append(("non-preemption", zone, len(steps)))
        return
    rate = response_plan.curve.rate
    for t, v in deps[:-1]:
        if abs(v - rate) > FLOW_TOL:
            violations.append(("non-preemption", (zone, t), abs(v - rate)))
            return
    if deps[-1][1] > rate + FLOW_TOL:
        violations.append(("non-preemption", (zone, deps[-1][0]), deps[-1][1] - rate))


def compare_methods(reports):
    """Tabulate reports of different methods on the same instance/setting.

    Returns a list of row dicts (one per method) including the replay ratio
    evacuated/claimed, which is 1.0 for any faithfully decoded plan.
    """
    if not reports:
        return []
    key = (reports[0].instance, reports[0].horizon, reports[0].contraflow)
    for r in reports:
        if (r.instance, r.horizon, r.contraflow) != key:
            raise ValueError("compare_methods needs reports from one instance and setting")
    rows = []
    for r in sorted(reports, key=lambda r: r.method):
        claimed = r.evacuated_claimed
        replayed = r.evacuated
        ratio = None
        if claimed is not None and replayed is not None:
            ratio = 1.0 if abs(claimed) < FLOW_TOL and abs(replayed) < FLOW_TOL \
                else replayed / claimed
        rows.append({
            "method": r.method,
            "evac_percent": r.evac_percent,
            "clearance_steps": r.clearance_steps,
            "upper_bound": r.upper_bound,
            "lower_bound": r.lower_bound,
            "gap": r.gap,
            "wall_time": r.wall_time,
            "replay_ratio": ratio,
        })
    return rows
