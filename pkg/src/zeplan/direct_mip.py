"""Direct MIP for zone-based evacuation planning.

Joint model over path-selection binaries x[e,k] (arc e on zone k's path),
continuous flows on time-expanded arc copies, and contraflow orientation
binaries y[e]. Maximizes arrivals at safe nodes subject to one path per
zone, path continuity, flow conservation at transit copies, per-copy
capacities (with capacity donation from reversed arcs), gating of flows to
selected arcs, and mutual exclusion of reversing both sides of a pair.

This is the desk-scale ground truth the decomposition methods are measured
against; it does not scale and is not meant to. Builder flags expose the
oracle variants the test suites need: convergence side constraints,
integer flows, and full LP relaxation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import backend
from .backend import EQ, GE, LE, Model
from .decode import walk_path
from .evaluation import validate
from .network import EvacuationPlan
from .results import SolveReport

log = logging.getLogger(__name__)


@dataclass
class ZeppMipModel:
    model: Model
    teg: object
    contraflow: bool = False
    relaxed: bool = False


def _flow(aid, t, k):
    return f"flow[{aid},{t},{k}]"


def _x(aid, k):
    return f"x[{aid},{k}]"


def _y(aid):
    return f"y[{aid}]"


def build_zepp_mip(teg, contraflow, *, convergent=False, integer_flows=False,
                   relax_binaries=False):
    """Assemble the joint path/schedule model on a pruned expansion.

    convergent adds a shared-arc binary per arc and outdegree<=1 rows so the
    selected paths form a forest (oracle for the convergent method);
    integer_flows integerizes the flow variables; relax_binaries turns every
    binary into a [0,1] continuous variable (LP relaxation oracle).
    """
    g = teg.graph
    m = Model("zepp", sense="max")

    def binvar(name):
        if relax_binaries:
            m.add_var(name, 0.0, 1.0)
        else:
            m.add_binary(name)
        return name

    # A zone's path can never traverse another zone (zones have no incoming
    # arcs), so selection and flow variables of commodity k on arcs leaving a
    # different zone are pinned to zero; without the pin, a commodity can
    # "borrow" another zone's out-arc as a fake branch and split its flow.
    def foreign(arc, k):
        return g.is_zone(arc.tail) and arc.tail != k

    for a in g.arcs:
        for k in g.zones:
            binvar(_x(a.id, k))
            if foreign(a, k):
                m.set_bounds(_x(a.id, k), 0.0, 0.0)
    for (aid, t) in sorted(teg.copies):
        a = g.arc_by_id[aid]
        for k in g.zones:
            m.add_var(_flow(aid, t, k), 0.0,
                      0.0 if foreign(a, k) else None, integer=integer_flows)
    for aid in sorted(g.paired_arcs):
        binvar(_y(aid))
        if not contraflow:
            m.set_bounds(_y(aid), 1.0, 1.0)

    if convergent:
        for a in g.arcs:
            binvar(f"w[{a.id}]")
            for k in g.zones:
                m.add_constr(f"wgate[{a.id},{k}]",
                             {_x(a.id, k): 1.0, f"w[{a.id}]": -1.0}, LE, 0.0)
        for i in list(g.zones) + list(g.transit_nodes):
            coeffs = {f"w[{aid}]": 1.0 for aid in g.delta_out(i)}
            if coeffs:
                m.add_constr(f"conv[{i}]", coeffs, LE, 1.0)

    for k in g.zones:
        m.add_constr(f"onepath[{k}]",
                     {_x(aid, k): 1.0 for aid in g.delta_out(k)}, EQ, 1.0)
        for i in g.transit_nodes:
            coeffs = {_x(aid, k): 1.0 for aid in g.delta_in(i)}
            for aid in g.delta_out(i):
                coeffs[_x(aid, k)] = coeffs.get(_x(aid, k), 0.0) - 1.0
            m.add_constr(f"cont[{i},{k}]", coeffs, EQ, 0.0)
            # at most one outgoing selection per node and commodity: without
            # this, a selection can contain a cycle through the path that
            # lets flow delay itself by circling, which no single simple
            # path with a departure schedule can reproduce
            m.add_constr(f"preserve[{i},{k}]",
                         {_x(aid, k): 1.0 for aid in g.delta_out(i)}, LE, 1.0)

    # conservation per commodity at every retained transit copy
    in_copies = {}
    out_copies = {}
    for (aid, t) in teg.copies:
        a = g.arc_by_id[aid]
        out_copies.setdefault((a.tail, t), []).append((aid, t))
        in_copies.setdefault((a.head, t + a.travel_steps), []).append((aid, t))
    for i in g.transit_nodes:
        for t in range(teg.horizon):
            ins = in_copies.get((i, t), [])
            outs = out_copies.get((i, t), [])
            if not ins and not outs:
                continue
            for k in g.zones:
                coeffs = {_flow(aid, tt, k): 1.0 for (aid, tt) in ins}
                for (aid, tt) in outs:
                    coeffs[_flow(aid, tt, k)] = coeffs.get(_flow(aid, tt, k), 0.0) - 1.0
                m.add_constr(f"cons[{i},{t},{k}]", coeffs, EQ, 0.0)

    for k in g.zones:
        coeffs = {}
        for aid in g.delta_out(k):
            for t in teg.departures[aid]:
                coeffs[_flow(aid, t, k)] = 1.0
        m.add_constr(f"dem[{k}]", coeffs, LE, float(g.demand[k]))

    for (aid, t) in sorted(teg.copies):
        cap = teg.cap(aid, t)
        rev_cap = teg.reverse_cap(aid, t)
        total = {_flow(aid, t, k): 1.0 for k in g.zones}
        if aid in g.paired_arcs:
            rev = g.reverse_of[aid]
            total[_y(aid)] = -float(cap)
            total[_y(rev)] = float(rev_cap)
            m.add_constr(f"cap[{aid},{t}]", total, LE, float(rev_cap))
            gate_cap = cap + rev_cap
        else:
            m.add_constr(f"cap[{aid},{t}]", total, LE, float(cap))
            gate_cap = cap
        for k in g.zones:
            m.add_constr(f"gate[{aid},{t},{k}]",
                         {_flow(aid, t, k): 1.0, _x(aid, k): -float(gate_cap)},
                         LE, 0.0)

    if contraflow:
        for (e, ebar) in g.contraflow_pairs:
            m.add_constr(f"pair[{e}]", {_y(e): 1.0, _y(ebar): 1.0}, GE, 1.0)

    objective = {}
    for (aid, t, _arrive) in teg.safe_entering_copies():
        for k in g.zones:
            objective[_flow(aid, t, k)] = 1.0
    m.set_objective(objective)

    return ZeppMipModel(model=m, teg=teg, contraflow=contraflow,
                        relaxed=relax_binaries)


def decode_paths(teg, values, var_for_arc, flow_total=None):
    """Follow selected out-arcs from each zone to a safe node.

    var_for_arc(aid, k) names the selection variable; flow_total(aid, k)
    (optional) breaks ties toward flow-carrying arcs when the selection
    contains idle extras. A walk that dead-ends or revisits a node yields no
    path for that zone (possible only for zero-flow zones).
    """
    g = teg.graph
    paths = {}
    for k in g.zones:
        def selected(node, k=k):
            return [aid for aid in g.delta_out(node)
                    if values.get(var_for_arc(aid, k), 0.0) > 0.5]

        weight = None
        if flow_total is not None:
            weight = lambda aid, k=k: flow_total(aid, k)
        paths[k] = walk_path(teg, k, selected, weight)
    return paths


def decode_orientation(graph, values, default=1):
    orientation = {}
    for aid in sorted(graph.paired_arcs):
        v = values.get(_y(aid))
        orientation[aid] = default if v is None else int(round(v))
    return orientation


def solve_zepp(zm, time_limit=None):
    """Solve the model and decode a replay-validated plan.

    On a time limit the best incumbent is decoded and the report is flagged
    non-optimal. Relaxed models report their bound without a plan.
    """
    teg = zm.teg
    g = teg.graph
    sol = backend.solve_mip(zm.model, time_limit=time_limit)

    report = SolveReport(
        method="mip", horizon=teg.horizon, step_minutes=teg.step_minutes,
        contraflow=zm.contraflow, status=sol.status, objective=sol.objective,
        upper_bound=sol.bound, lower_bound=sol.objective, gap=sol.gap,
        wall_time=sol.wall_time, iterations=1,
    )
    if not sol.ok:
        return None, report
    if zm.relaxed:
        report.evacuated_claimed = sol.objective
        return None, report

    def flow_total(aid, k):
        return sum(sol.values.get(_flow(aid, t, k), 0.0)
                   for t in teg.departures[aid])

    paths = decode_paths(teg, sol.values, _x, flow_total)
    departures = {}
    for k in g.zones:
        path = paths.get(k)
        deps = {}
        if path is not None and path.arcs:
            first = path.arcs[0]
            for t in teg.departures[first]:
                v = sol.values.get(_flow(first, t, k), 0.0)
                if v > 1e-9:
                    deps[t] = v
        departures[k] = deps
    plan = EvacuationPlan(
        zone_paths=paths,
        departures=departures,
        orientation=decode_orientation(g, sol.values),
    )
    check = validate(plan, teg, contraflow_allowed=zm.contraflow)
    if not check.ok:
        log.error("decoded direct-MIP plan failed validation: %s", check.violations)
    report.evacuated_claimed = sol.objective
    report.evacuated = check.evacuated
    report.evac_percent = check.evac_percent
    report.clearance_steps = check.clearance_steps
    report.extras["validation_ok"] = check.ok
    return plan, report
