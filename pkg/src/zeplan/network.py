"""Evacuation network data model.

A static evacuation graph partitions nodes into evacuation zones (with a
vehicle demand and an optional departure deadline), transit nodes, and safe
nodes. Arcs carry a travel time in whole time steps, a per-step vehicle
capacity, and an optional block time after which the road is unavailable.
Pairs of opposite arcs may be marked as contraflow candidates: reversing one
side of a pair donates its capacity to the other side.

Time is discretized into `horizon` steps indexed 0..horizon-1. The
time-expanded graph replicates each arc once per feasible departure step: a
copy departing at t exists iff the arrival t + s_e fits within the horizon,
t is strictly before the arc's block time, and (for arcs leaving a zone)
strictly before the zone's deadline. Waiting arcs exist at evacuation and
safe nodes only. Transit copies that cannot be reached from any zone or
cannot reach safety within the horizon are pruned; zone and safe copies
persist at every step since evacuees may wait there.

All structures are immutable after construction and safe to share across
concurrent solver runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


EVAC = "evac"
TRANSIT = "transit"
SAFE = "safe"


class ZeplanError(Exception):
    """Base class for toolkit errors."""


class InfeasibleZoneError(ZeplanError):
    """Raised when one or more zones cannot reach safety within the horizon."""

    def __init__(self, zones, horizon):
        self.zones = tuple(sorted(zones))
        self.horizon = horizon
        super().__init__(
            f"zones {list(self.zones)} cannot reach a safe node within "
            f"{horizon} steps"
        )


@dataclass(frozen=True)
class Arc:
    """A directed road segment of the static graph.

    capacity is in vehicles per time step; block_steps is the first step at
    which the road is unavailable (departures require t < block_steps), or
    None if the road never blocks.
    """

    id: int
    tail: int
    head: int
    travel_steps: int
    capacity: int
    block_steps: int | None = None


class StaticGraph:
    """Static evacuation graph with zones, transit and safe nodes.

    Node and arc ids are dense integers. Construction validates the
    structural invariants:

    - node kind sets are disjoint and cover all ids,
    - zones have no incoming arcs, safe nodes no outgoing arcs,
    - each contraflow pair consists of an arc and its unique reverse, and
      no arc belongs to two pairs,
    - every zone can reach a safe node,
    - there is no directed cycle of zero-travel-time arcs.
    """

    def __init__(self, node_kinds, demand, deadline_steps, arcs,
                 contraflow_pairs=()):
        self.node_kinds = dict(node_kinds)
        self.demand = dict(demand)
        self.deadline_steps = dict(deadline_steps)
        self.arcs = tuple(sorted(arcs, key=lambda a: a.id))
        self.contraflow_pairs = tuple(tuple(p) for p in contraflow_pairs)

        self.zones = tuple(sorted(n for n, k in self.node_kinds.items() if k == EVAC))
        self.transit_nodes = tuple(sorted(n for n, k in self.node_kinds.items() if k == TRANSIT))
        self.safe_nodes = tuple(sorted(n for n, k in self.node_kinds.items() if k == SAFE))

        self.arc_by_id = {a.id: a for a in self.arcs}
        self.out_arcs = {n: [] for n in self.node_kinds}
        self.in_arcs = {n: [] for n in self.node_kinds}
        for a in self.arcs:
            self.out_arcs[a.tail].append(a.id)
            self.in_arcs[a.head].append(a.id)
        for n in self.node_kinds:
            self.out_arcs[n].sort()
            self.in_arcs[n].sort()

        # reverse_of maps each paired arc to its opposite; hat side listed first
        self.reverse_of = {}
        for e, ebar in self.contraflow_pairs:
            self.reverse_of[e] = ebar
            self.reverse_of[ebar] = e
        self.paired_arcs = frozenset(self.reverse_of)

        self._validate()

    # -- accessors ---------------------------------------------------------

    def kind(self, node):
        return self.node_kinds[node]

    def is_zone(self, node):
        return self.node_kinds.get(node) == EVAC

    def is_safe(self, node):
        return self.node_kinds.get(node) == SAFE

    def total_demand(self):
        return sum(self.demand.values())

    def delta_out(self, node):
        """Ids of arcs leaving node."""
        return self.out_arcs[node]

    def delta_in(self, node):
        """Ids of arcs entering node."""
        return self.in_arcs[node]

    # -- validation --------------------------------------------------------

    def _validate(self):
        node_ids = sorted(self.node_kinds)
        if node_ids != list(range(len(node_ids))):
            raise ValueError("node ids must be dense integers starting at 0")
        arc_ids = [a.id for a in self.arcs]
        if arc_ids != list(range(len(arc_ids))):
            raise ValueError("arc ids must be dense integers starting at 0")
        for n, k in self.node_kinds.items():
            if k not in (EVAC, TRANSIT, SAFE):
                raise ValueError(f"unknown node kind {k!r} for node {n}")
        for k in self.zones:
            if k not in self.demand or self.demand[k] < 0:
                raise ValueError(f"zone {k} needs a nonnegative demand")
        for n in self.demand:
            if not self.is_zone(n):
                raise ValueError(f"demand given for non-zone node {n}")
        for a in self.arcs:
            if a.tail not in self.node_kinds or a.head not in self.node_kinds:
                raise ValueError(f"arc {a.id} references unknown node")
            if a.travel_steps < 0 or a.capacity < 0:
                raise ValueError(f"arc {a.id} has negative travel time or capacity")
            if self.is_safe(a.tail):
                raise ValueError(f"safe node {a.tail} has outgoing arc {a.id}")
            if self.is_zone(a.head):
                raise ValueError(f"zone {a.head} has incoming arc {a.id}")

        seen = set()
        for e, ebar in self.contraflow_pairs:
            if e == ebar or e in seen or ebar in seen:
                raise ValueError("arc appears in more than one contraflow pair")
            seen.update((e, ebar))
            ae, ab = self.arc_by_id[e], self.arc_by_id[ebar]
            if (ae.tail, ae.head) != (ab.head, ab.tail):
                raise ValueError(f"contraflow pair ({e},{ebar}) is not a reverse pair")
            same_dir = [x.id for x in self.arcs
                        if (x.tail, x.head) == (ab.tail, ab.head)]
            if same_dir != [ebar]:
                raise ValueError(f"reverse of arc {e} is not unique")

        unreachable = [k for k in self.zones if not self._reaches_safe(k)]
        if unreachable:
            raise ValueError(f"zones {unreachable} have no path to a safe node")

        self._check_no_zero_cycle()

    def _reaches_safe(self, start):
        stack, seen = [start], {start}
        while stack:
            n = stack.pop()
            if self.is_safe(n):
                return True
            for aid in self.out_arcs[n]:
                h = self.arc_by_id[aid].head
                if h not in seen:
                    seen.add(h)
                    stack.append(h)
        return False

    def _check_no_zero_cycle(self):
        # Zero-travel arcs must not form a cycle, otherwise the time
        # expansion would not be acyclic.
        adj = {n: [] for n in self.node_kinds}
        for a in self.arcs:
            if a.travel_steps == 0:
                adj[a.tail].append(a.head)
        state = {}

        def visit(n):
            state[n] = 1
            for h in adj[n]:
                if state.get(h) == 1:
                    raise ValueError("zero-travel-time arcs form a cycle")
                if h not in state:
                    visit(h)
            state[n] = 2

        for n in adj:
            if n not in state:
                visit(n)


def minutes_to_travel_steps(minutes, step_minutes):
    """Travel times round up to whole steps (conservative arrivals)."""
    return int(math.ceil(minutes / step_minutes - 1e-9))

def minutes_to_cutoff_steps(minutes, step_minutes):
    """Block times and deadlines round down (conservative availability)."""
    if minutes is None:
        return None
    return int(math.floor(minutes / step_minutes + 1e-9))


class TimeExpandedGraph:
    """Per-step replication of a static graph over a finite horizon.

    copies maps (arc_id, departure_step) to the copy's capacity. Waiting
    arcs are stored as (node, t) meaning node_t -> node_{t+1}; they exist at
    evacuation and safe nodes only and are uncapacitated. After
    add_super_sink, sink_arcs lists the (safe_node, t) copies connected to
    the virtual super sink.
    """

    def __init__(self, graph, horizon, step_minutes, copies, nodes,
                 waiting, infeasible_zones=(), pruned_nodes=0):
        self.graph = graph
        self.horizon = horizon
        self.step_minutes = step_minutes
        self.copies = copies
        self.nodes = nodes
        self.waiting = waiting
        self.sink_arcs = ()
        self.has_super_sink = False
        self.infeasible_zones = tuple(infeasible_zones)
        self.pruned_nodes = pruned_nodes

        self.departures = {a.id: [] for a in graph.arcs}
        for (aid, t) in sorted(copies):
            self.departures[aid].append(t)

    # -- capacities --------------------------------------------------------

    def copy_exists(self, arc_id, t):
        return (arc_id, t) in self.copies

    def cap(self, arc_id, t):
        """Per-step capacity of a copy; 0 if the copy does not exist."""
        return self.copies.get((arc_id, t), 0)

    def reverse_cap(self, arc_id, t):
        """Capacity the reverse arc can donate at step t.

        Reversed lanes are physical capacity: they are available whenever
        the reverse road is not yet blocked, regardless of whether the
        reverse direction is routable (its own copies usually are not).
        """
        rev = self.graph.reverse_of.get(arc_id)
        if rev is None:
            return 0
        rev_arc = self.graph.arc_by_id[rev]
        if rev_arc.block_steps is not None and t >= rev_arc.block_steps:
            return 0
        return rev_arc.capacity

    def aggregate_cap(self, arc_id, with_reverse=False):
        """Capacity of an arc summed over all of its copies."""
        total = sum(self.copies[(arc_id, t)] for t in self.departures[arc_id])
        if with_reverse:
            total += sum(self.reverse_cap(arc_id, t) for t in self.departures[arc_id])
        return total

    def safe_entering_copies(self):
        """Copies whose head is a safe node, as (arc_id, depart_t, arrive_t)."""
        out = []
        for (aid, t) in sorted(self.copies):
            a = self.graph.arc_by_id[aid]
            if self.graph.is_safe(a.head):
                out.append((aid, t, t + a.travel_steps))
        return out

    def copy_count(self):
        return len(self.copies)

    # -- paths -------------------------------------------------------------

    def make_path(self, zone, arc_ids):
        """Build an EvacPath with offsets and the usable departure window."""
        arcs = [self.graph.arc_by_id[a] for a in arc_ids]
        if not arcs or arcs[0].tail != zone:
            raise ValueError("path must start at its zone")
        for prev, nxt in zip(arcs, arcs[1:]):
            if prev.head != nxt.tail:
                raise ValueError("path arcs are not consecutive")
        if not self.graph.is_safe(arcs[-1].head):
            raise ValueError("path must end at a safe node")

        offsets, t = [], 0
        for a in arcs:
            offsets.append(t)
            t += a.travel_steps
        window_end = -1
        cand = min(
            (self.departures[a.id][-1] - off if self.departures[a.id] else -1)
            for a, off in zip(arcs, offsets)
        )
        for t0 in range(cand, -1, -1):
            if all(self.copy_exists(a.id, t0 + off) for a, off in zip(arcs, offsets)):
                window_end = t0
                break
        visited = [arcs[0].tail] + [a.head for a in arcs]
        elementary = len(set(visited)) == len(visited)
        capacity = min(a.capacity for a in arcs)
        return EvacPath(
            zone=zone,
            arcs=tuple(arc_ids),
            nodes=tuple(visited),
            offsets=tuple(offsets),
            total_travel=t,
            capacity=capacity,
            window_end=window_end,
            elementary=elementary,
        )


def build_time_expanded(graph, horizon, step_minutes=5.0, *, prune=True,
                        on_infeasible="raise"):
    """Expand a static graph over `horizon` time steps.

    An arc copy departing at t exists iff t + s_e <= horizon - 1,
    t < block_steps, and t < deadline of the tail zone (strict cutoffs).
    Retained nodes must be reachable from some zone and reach some safe node
    within the horizon; everything else is pruned.

    on_infeasible: "raise" raises InfeasibleZoneError when a zone cannot
    reach safety (the default); "allow" records the zones on the result so
    search procedures can probe short horizons without exceptions.
    """
    if horizon < 1:
        err = InfeasibleZoneError(graph.zones, horizon)
        if on_infeasible == "raise":
            raise err
        return TimeExpandedGraph(graph, max(horizon, 0), step_minutes, {},
                                 set(), set(), graph.zones,
                                 len(graph.node_kinds) * max(horizon, 0))

    copies = {}
    for a in graph.arcs:
        last = horizon - 1 - a.travel_steps
        if a.block_steps is not None:
            last = min(last, a.block_steps - 1)
        deadline = graph.deadline_steps.get(a.tail)
        if graph.is_zone(a.tail) and deadline is not None:
            last = min(last, deadline - 1)
        for t in range(0, last + 1):
            copies[(a.id, t)] = a.capacity

    waiting_nodes = [n for n in graph.node_kinds
                     if graph.node_kinds[n] in (EVAC, SAFE)]

    out_adj = {}
    in_adj = {}

    def add_edge(u, v):
        out_adj.setdefault(u, []).append(v)
        in_adj.setdefault(v, []).append(u)

    for (aid, t) in copies:
        a = graph.arc_by_id[aid]
        add_edge((a.tail, t), (a.head, t + a.travel_steps))
    for n in waiting_nodes:
        for t in range(horizon - 1):
            add_edge((n, t), (n, t + 1))

    # forward sweep from every zone at time 0
    forward = set()
    stack = [(k, 0) for k in graph.zones]
    forward.update(stack)
    while stack:
        u = stack.pop()
        for v in out_adj.get(u, ()):
            if v not in forward:
                forward.add(v)
                stack.append(v)

    # backward sweep from every safe copy
    backward = set()
    stack = [(s, t) for s in graph.safe_nodes for t in range(horizon)]
    backward.update(stack)
    while stack:
        v = stack.pop()
        for u in in_adj.get(v, ()):
            if u not in backward:
                backward.add(u)
                stack.append(u)

    # Transit copies are useful only when they lie on some zone-to-safety
    # route; zone and safe copies always remain (evacuees can wait there).
    retained = forward & backward
    for n in waiting_nodes:
        for t in range(horizon):
            retained.add((n, t))
    infeasible = [k for k in graph.zones
                  if (k, 0) not in forward or (k, 0) not in backward]
    if infeasible and on_infeasible == "raise":
        raise InfeasibleZoneError(infeasible, horizon)

    all_nodes = {(n, t) for n in graph.node_kinds for t in range(horizon)}
    pruned = len(all_nodes - retained)
    if not prune:
        retained = all_nodes

    kept_copies = {}
    for (aid, t), cap in copies.items():
        a = graph.arc_by_id[aid]
        if (a.tail, t) in retained and (a.head, t + a.travel_steps) in retained:
            kept_copies[(aid, t)] = cap
    waiting = set()
    for n in waiting_nodes:
        for t in range(horizon - 1):
            if (n, t) in retained and (n, t + 1) in retained:
                waiting.add((n, t))

    return TimeExpandedGraph(graph, horizon, step_minutes, kept_copies,
                             retained, waiting, infeasible, pruned)


def add_super_sink(teg):
    """Connect every retained safe-node copy to a virtual super sink.

    Returns the same graph object with sink_arcs populated. Calling it twice
    is an error (the sink arcs would be duplicated).
    """
    if teg.has_super_sink:
        raise ValueError("time-expanded graph already has a super sink")
    sinks = []
    for s in teg.graph.safe_nodes:
        for t in range(teg.horizon):
            if (s, t) in teg.nodes:
                sinks.append((s, t))
    teg.sink_arcs = tuple(sorted(sinks))
    teg.has_super_sink = True
    return teg


@dataclass(frozen=True)
class EvacPath:
    """A zone's route to safety on the static graph.

    nodes is the visited node sequence (zone first, safe node last);
    offsets[i] is the number of steps needed to reach arc i from the zone;
    window_end is the last departure step for which every arc copy along
    the path exists (-1 when the path is unusable within the horizon), so
    the usable departure steps are 0..window_end.
    """

    zone: int
    arcs: tuple
    nodes: tuple
    offsets: tuple
    total_travel: int
    capacity: int
    window_end: int
    elementary: bool

    @property
    def usable_steps(self):
        return range(0, self.window_end + 1)

    def key(self):
        return (self.zone, self.arcs)


@dataclass(frozen=True)
class StepCurve:
    """Constant-rate response curve: `rate` vehicles leave per step."""

    rate: int

    def wave(self, index, demand):
        """Vehicles departing in the index-th step after the start."""
        return max(0, min(self.rate, demand - self.rate * index))

    def cumulative(self, steps, demand):
        """Total departures over the first `steps` steps, saturating at demand."""
        return min(demand, self.rate * max(0, steps))

    def waves_needed(self, demand):
        return int(math.ceil(demand / self.rate)) if demand > 0 else 0


@dataclass(frozen=True)
class TimeResponsePlan:
    """Non-preemptive plan: one path, one curve, one start time.

    Departures run at the curve's constant rate from `start` for consecutive
    steps while demand remains and the wave can still complete the full path
    (its departure step lies in the path's usable window).
    """

    path: EvacPath
    curve: StepCurve
    start: int

    def wave_count(self, demand):
        if self.start > self.path.window_end:
            return 0
        room = self.path.window_end - self.start + 1
        return min(room, self.curve.waves_needed(demand))

    def induced_flows(self, demand):
        """Map (arc_id, step) -> vehicles put on that arc copy by the plan."""
        if self.start not in self.path.usable_steps:
            raise ValueError(
                f"start step {self.start} outside usable window "
                f"0..{self.path.window_end}"
            )
        flows = {}
        for j in range(self.wave_count(demand)):
            size = self.curve.wave(j, demand)
            if size <= 0:
                break
            t0 = self.start + j
            for aid, off in zip(self.path.arcs, self.path.offsets):
                flows[(aid, t0 + off)] = flows.get((aid, t0 + off), 0) + size
        return flows

    def arrivals(self, demand):
        return self.curve.cumulative(self.wave_count(demand), demand)

    def shortfall(self, demand):
        return demand - self.arrivals(demand)

    def last_arrival(self, demand):
        """Step at which the final wave reaches safety, or None if nothing departs."""
        waves = min(self.wave_count(demand), self.curve.waves_needed(demand))
        if waves == 0:
            return None
        return self.start + (waves - 1) + self.path.total_travel


def induced_flows(plan, demand):
    """Flows on arc copies induced by a time-response plan (see the class)."""
    return plan.induced_flows(demand)


@dataclass
class EvacuationPlan:
    """A full evacuation plan: one path per zone plus a schedule.

    Exactly one of `departures` (preemptive: zone -> {step: vehicles leaving
    the zone}) and `response` (non-preemptive: zone -> TimeResponsePlan) is
    set. orientation maps each contraflow-pair arc to 1 (normal direction)
    or 0 (reversed); arcs outside pairs are implicitly 1.
    """

    zone_paths: dict = field(default_factory=dict)
    departures: dict | None = None
    response: dict | None = None
    orientation: dict = field(default_factory=dict)

    def flows_by_zone(self, graph):
        """Replay the schedule into per-zone flows on arc copies.

        Preemptive departures propagate deterministically along the zone's
        single path (there is no waiting at transit nodes).
        """
        flows = {}
        if self.response is not None:
            for k, plan in self.response.items():
                flows[k] = plan.induced_flows(graph.demand[k])
            return flows
        for k, deps in (self.departures or {}).items():
            path = self.zone_paths.get(k)
            zone_flows = {}
            if path is not None:
                for t, amount in deps.items():
                    if amount <= 0:
                        continue
                    for aid, off in zip(path.arcs, path.offsets):
                        key = (aid, t + off)
                        zone_flows[key] = zone_flows.get(key, 0.0) + amount
            flows[k] = zone_flows
        return flows

    def arrivals_by_zone(self, graph):
        out = {}
        for k, zone_flows in self.flows_by_zone(graph).items():
            path = self.zone_paths.get(k)
            total = 0.0
            if path is not None and path.arcs:
                last = path.arcs[-1]
                total = sum(v for (aid, _t), v in zone_flows.items() if aid == last)
            out[k] = total
        return out

    def evacuated(self, graph):
        return sum(self.arrivals_by_zone(graph).values())

    def last_arrival_step(self, graph):
        """Latest step at which any vehicle reaches a safe node, or None."""
        last = None
        for k, zone_flows in self.flows_by_zone(graph).items():
            path = self.zone_paths.get(k)
            if path is None or not path.arcs:
                continue
            final = path.arcs[-1]
            travel = graph.arc_by_id[final].travel_steps
            for (aid, t), v in zone_flows.items():
                if aid == final and v > 1e-9:
                    arrive = t + travel
                    last = arrive if last is None else max(last, arrive)
        return last


def is_convergent(paths):
    """Check that the union of paths gives outdegree <= 1 everywhere.

    Returns (True, None) when every evacuation/transit node has at most one
    distinct outgoing arc in the union of path arcs, else
    (False, first_violating_node) with nodes checked in ascending order.
    """
    out_sets = {}
    for p in paths:
        if p is None:
            continue
        for tail, aid in zip(p.nodes[:-1], p.arcs):
            out_sets.setdefault(tail, set()).add(aid)
    for node in sorted(out_sets):
        if len(out_sets[node]) > 1:
            return False, node
    return True, None
