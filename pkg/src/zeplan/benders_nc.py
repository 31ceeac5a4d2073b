"""Benders decomposition with free (non-convergent) evacuation paths.

The master selects one path per zone on the static graph, reasoning about
aggregate flows against horizon-aggregated capacities, plus accumulated
optimality cuts; the subproblem schedules multi-commodity flows of the
selected paths on the time-expanded graph. Master and subproblem values
bound the flow-relaxed optimum from above and below; on convergence (gap 0)
the subproblem is re-solved with integer flows to produce the final
schedule.

The loop is seeded by first shrinking the horizon to the tightest prefix
t* that preserves the master optimum, which yields better paths in the
first iteration. The subproblem is always feasible (zero flow), so only
optimality cuts arise.
"""

from __future__ import annotations

import logging
import time

from . import backend
from .backend import EQ, GE, LE, Model
from .decode import walk_path
from .evaluation import validate
from .network import EvacuationPlan, build_time_expanded
from .results import Budget, SolveLimits, SolveReport

log = logging.getLogger(__name__)

MAX_ITERATIONS = 500
GAP_TOL = 1e-6


def _x(aid, k):
    return f"x[{aid},{k}]"


def _agg(aid, k):
    return f"agg[{aid},{k}]"


def _y(aid):
    return f"y[{aid}]"


def _flow(aid, t, k):
    return f"flow[{aid},{t},{k}]"


def _foreign(g, arc, k):
    return g.is_zone(arc.tail) and arc.tail != k


def bn_build_rmp(teg, contraflow):
    """Master: path selection with aggregate flows and capacities."""
    g = teg.graph
    m = Model("bn-rmp", sense="max")
    m.add_var("z", 0.0, None)

    for a in g.arcs:
        paired = a.id in g.paired_arcs
        agg_cap = teg.aggregate_cap(a.id, with_reverse=paired)
        for k in g.zones:
            m.add_binary(_x(a.id, k))
            m.add_var(_agg(a.id, k), 0.0, None)
            if _foreign(g, a, k):
                # commodity k cannot route through another zone's out-arcs
                m.set_bounds(_x(a.id, k), 0.0, 0.0)
                m.set_bounds(_agg(a.id, k), 0.0, 0.0)
            m.add_constr(f"gate[{a.id},{k}]",
                         {_agg(a.id, k): 1.0, _x(a.id, k): -float(agg_cap)},
                         LE, 0.0)
    for aid in sorted(g.paired_arcs):
        m.add_binary(_y(aid))
        if not contraflow:
            m.set_bounds(_y(aid), 1.0, 1.0)

    link = {"z": 1.0}
    for k in g.zones:
        for aid in g.delta_out(k):
            link[_agg(aid, k)] = link.get(_agg(aid, k), 0.0) - 1.0
    m.add_constr("link", link, LE, 0.0)

    for k in g.zones:
        m.add_constr(f"onepath[{k}]",
                     {_x(aid, k): 1.0 for aid in g.delta_out(k)}, EQ, 1.0)
        for i in g.transit_nodes:
            m.add_constr(f"preserve[{i},{k}]",
                         {_x(aid, k): 1.0 for aid in g.delta_out(i)}, LE, 1.0)
            coeffs = {_agg(aid, k): 1.0 for aid in g.delta_in(i)}
            for aid in g.delta_out(i):
                coeffs[_agg(aid, k)] = coeffs.get(_agg(aid, k), 0.0) - 1.0
            m.add_constr(f"cons[{i},{k}]", coeffs, EQ, 0.0)
        m.add_constr(f"dem[{k}]",
                     {_agg(aid, k): 1.0 for aid in g.delta_out(k)},
                     LE, float(g.demand[k]))

    for a in g.arcs:
        total = {_agg(a.id, k): 1.0 for k in g.zones}
        if a.id in g.paired_arcs:
            rev = g.reverse_of[a.id]
            own = teg.aggregate_cap(a.id)
            donated = sum(teg.reverse_cap(a.id, t) for t in teg.departures[a.id])
            total[_y(a.id)] = -float(own)
            total[_y(rev)] = float(donated)
            m.add_constr(f"sharedcap[{a.id}]", total, LE, float(donated))
        else:
            m.add_constr(f"sharedcap[{a.id}]", total, LE,
                         float(teg.aggregate_cap(a.id)))

    if contraflow:
        for (e, ebar) in g.contraflow_pairs:
            m.add_constr(f"pair[{e}]", {_y(e): 1.0, _y(ebar): 1.0}, GE, 1.0)

    m.set_objective({"z": 1.0})
    return m


def bn_build_sp(teg, xbar, ybar, integer=False):
    """Subproblem: schedule flows of every zone on its selected arcs."""
    g = teg.graph
    m = Model("bn-sp", sense="max")

    for (aid, t) in sorted(teg.copies):
        a = g.arc_by_id[aid]
        for k in g.zones:
            m.add_var(_flow(aid, t, k), 0.0,
                      0.0 if _foreign(g, a, k) else None, integer=integer)

    in_copies, out_copies = {}, {}
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
        paired = aid in g.paired_arcs
        for k in g.zones:
            gate_cap = (cap + rev_cap) if paired else cap
            tag = f"gatecf[{aid},{t},{k}]" if paired else f"gate[{aid},{t},{k}]"
            m.add_constr(tag, {_flow(aid, t, k): 1.0},
                         LE, float(gate_cap) * xbar.get((aid, k), 0.0))
        total = {_flow(aid, t, k): 1.0 for k in g.zones}
        if paired:
            rev = g.reverse_of[aid]
            rhs = ybar.get(aid, 1.0) * cap + (1.0 - ybar.get(rev, 1.0)) * rev_cap
            m.add_constr(f"capcf[{aid},{t}]", total, LE, float(rhs))
        else:
            m.add_constr(f"cap[{aid},{t}]", total, LE, float(cap))

    objective = {}
    for k in g.zones:
        for aid in g.delta_out(k):
            for t in teg.departures[aid]:
                objective[_flow(aid, t, k)] = 1.0
    m.set_objective(objective)
    return m


def bn_build_cut(duals, teg):
    """Assemble one optimality cut from the subproblem's dual groups.

    Returns (constant, x_coeffs, y_coeffs) for a row of the form
    z <= constant + sum x_coeffs * x + sum y_coeffs * y. The five groups
    (demand, gating plain/contraflow, shared capacity plain/contraflow) must
    all be present; a missing group means the backend returned no duals.
    """
    g = teg.graph
    if duals is None:
        raise RuntimeError("subproblem duals unavailable; cannot build cut")

    const = 0.0
    x_coeffs = {}
    y_coeffs = {}
    seen_groups = set()
    for k in g.zones:
        pi = duals.get(f"dem[{k}]")
        if pi is None:
            raise RuntimeError(f"missing demand dual for zone {k}")
        seen_groups.add("dem")
        const += g.demand[k] * pi

    for (aid, t) in sorted(teg.copies):
        cap = teg.cap(aid, t)
        rev_cap = teg.reverse_cap(aid, t)
        paired = aid in g.paired_arcs
        if paired:
            pi = duals.get(f"capcf[{aid},{t}]")
            if pi is None:
                raise RuntimeError(f"missing contraflow capacity dual ({aid},{t})")
            seen_groups.add("capcf")
            rev = g.reverse_of[aid]
            const += rev_cap * pi
            y_coeffs[aid] = y_coeffs.get(aid, 0.0) + cap * pi
            y_coeffs[rev] = y_coeffs.get(rev, 0.0) - rev_cap * pi
        else:
            pi = duals.get(f"cap[{aid},{t}]")
            if pi is None:
                raise RuntimeError(f"missing capacity dual ({aid},{t})")
            seen_groups.add("cap")
            const += cap * pi
        for k in g.zones:
            tag = f"gatecf[{aid},{t},{k}]" if paired else f"gate[{aid},{t},{k}]"
            pi = duals.get(tag)
            if pi is None:
                raise RuntimeError(f"missing gating dual ({aid},{t},{k})")
            seen_groups.add("gatecf" if paired else "gate")
            gate_cap = (cap + rev_cap) if paired else cap
            key = (aid, k)
            x_coeffs[key] = x_coeffs.get(key, 0.0) + gate_cap * pi
    return const, x_coeffs, y_coeffs


def evaluate_cut(cut, xbar, ybar):
    const, x_coeffs, y_coeffs = cut
    value = const
    value += sum(c * xbar.get(key, 0.0) for key, c in x_coeffs.items())
    value += sum(c * ybar.get(aid, 1.0) for aid, c in y_coeffs.items())
    return value


def _add_cut(rmp, cut, index):
    const, x_coeffs, y_coeffs = cut
    coeffs = {"z": 1.0}
    for (aid, k), c in x_coeffs.items():
        if c != 0.0:
            coeffs[_x(aid, k)] = coeffs.get(_x(aid, k), 0.0) - c
    for aid, c in y_coeffs.items():
        if c != 0.0:
            coeffs[_y(aid)] = coeffs.get(_y(aid), 0.0) - c
    rmp.add_constr(f"cut[{index}]", coeffs, LE, const)


def _decode_selection(g, values):
    xbar = {}
    for a in g.arcs:
        for k in g.zones:
            xbar[(a.id, k)] = 1.0 if values.get(_x(a.id, k), 0.0) > 0.5 else 0.0
    ybar = {}
    for aid in g.paired_arcs:
        v = values.get(_y(aid))
        ybar[aid] = 1.0 if v is None or v > 0.5 else 0.0
    return xbar, ybar


def bn_find_tstar(g, horizon, step_minutes=5.0, contraflow=False, limits=None,
                  rmp_builder=bn_build_rmp):
    """Smallest horizon prefix preserving the master optimum.

    Sequential search with progressively smaller horizons, stopping at the
    first strict drop. Returns (t_star, info) where info carries the full
    value, probe log, and a warning flag when the per-solve budget ran out
    before verification finished (then t_star is the smallest verified).
    """
    limits = limits or SolveLimits()
    teg = build_time_expanded(g, horizon, step_minutes)
    sol = backend.solve_mip(rmp_builder(teg, contraflow),
                            time_limit=limits.per_solve)
    if not sol.ok:
        raise RuntimeError(f"master infeasible or unsolved at full horizon: {sol.status}")
    full_value = sol.objective
    tol = GAP_TOL * max(1.0, abs(full_value))
    probes = [(horizon, full_value)]
    t_star, warning = horizon, False
    for t in range(horizon - 1, 0, -1):
        probe_teg = build_time_expanded(g, t, step_minutes, on_infeasible="allow")
        probe = backend.solve_mip(rmp_builder(probe_teg, contraflow),
                                  time_limit=limits.per_solve)
        if not probe.ok:
            warning = True
            break
        probes.append((t, probe.objective))
        if probe.objective < full_value - tol:
            break
        t_star = t
    return t_star, {"full_value": full_value, "probes": probes,
                    "warning": warning}


def bn_solve(g, horizon, step_minutes=5.0, contraflow=False, limits=None,
             max_iterations=MAX_ITERATIONS):
    """Run the full loop; returns (plan, report, audit).

    audit is a list of per-iteration dicts carrying the first-stage point,
    subproblem value, and cut, for external cut-validity checks.
    """
    limits = limits or SolveLimits()
    budget = Budget(limits.total)
    teg = build_time_expanded(g, horizon, step_minutes)

    t_star, tinfo = bn_find_tstar(g, horizon, step_minutes, contraflow, limits)
    seed_teg = (teg if t_star == horizon else
                build_time_expanded(g, t_star, step_minutes, on_infeasible="allow"))
    seed_sol = backend.solve_mip(bn_build_rmp(seed_teg, contraflow),
                                 time_limit=budget.solve_limit(limits.per_solve))
    if not seed_sol.ok:
        raise RuntimeError(f"seed master unsolved: {seed_sol.status}")

    rmp = bn_build_rmp(teg, contraflow)
    z_rmp = seed_sol.objective
    xbar, ybar = _decode_selection(g, seed_sol.values)

    z_sp_max = float("-inf")
    best_xy = (xbar, ybar)
    status = "optimal"
    trace, audit = [], []
    prev_xy = None
    iteration = 0
    while iteration < max_iterations:
        iteration += 1
        sp_sol = backend.solve_lp(bn_build_sp(teg, xbar, ybar),
                                  time_limit=budget.solve_limit(limits.per_solve))
        if sp_sol.status != "optimal":
            status = "time_limit" if sp_sol.status == "time_limit" else "error"
            break
        z_sp = sp_sol.objective
        if z_sp > z_sp_max:
            z_sp_max = z_sp
            best_xy = (xbar, ybar)

        cut = bn_build_cut(sp_sol.duals, teg)
        at_point = evaluate_cut(cut, xbar, ybar)
        if abs(at_point - z_sp) > GAP_TOL * max(1.0, abs(z_sp)):
            raise RuntimeError(
                f"cut fails strong duality at its generating point: "
                f"{at_point} vs {z_sp}"
            )
        audit.append({"iteration": iteration, "xbar": dict(xbar),
                      "ybar": dict(ybar), "z_sp": z_sp, "cut": cut})
        trace.append({"iter": iteration, "z_rmp": z_rmp, "z_sp": z_sp,
                      "z_sp_max": z_sp_max, "wall": budget.elapsed()})

        if z_rmp - z_sp_max <= GAP_TOL * max(1.0, abs(z_rmp)):
            break
        if budget.exhausted():
            status = "time_limit"
            break

        _add_cut(rmp, cut, iteration)
        rmp_sol = backend.solve_mip(rmp, time_limit=budget.solve_limit(limits.per_solve))
        if not rmp_sol.ok:
            status = "time_limit" if rmp_sol.status == "time_limit" else "error"
            break
        z_rmp = rmp_sol.objective
        xbar, ybar = _decode_selection(g, rmp_sol.values)
        if (prev_xy == (xbar, ybar)
                and z_rmp - z_sp_max > GAP_TOL * max(1.0, abs(z_rmp))):
            # a repeated point normally converges on the next check (its cut
            # caps the master there); a persistent gap means degenerate duals
            log.warning("master repeated a first-stage point with a positive "
                        "gap; aborting loop")
            status = "stalled"
            break
        prev_xy = (xbar, ybar)
    else:
        status = "iteration_limit"

    xbar, ybar = best_xy
    final_sp = backend.solve_mip(bn_build_sp(teg, xbar, ybar, integer=True),
                                 time_limit=budget.solve_limit(limits.per_solve))
    plan = _decode_plan(teg, xbar, ybar, final_sp)
    check = validate(plan, teg, contraflow_allowed=contraflow)
    if not check.ok:
        log.error("decoded plan failed validation: %s", check.violations)

    gap = None
    if z_sp_max > GAP_TOL:
        gap = max(0.0, (z_rmp - z_sp_max) / z_sp_max)
    report = SolveReport(
        method="bn", horizon=horizon, step_minutes=step_minutes,
        contraflow=contraflow, status=status,
        objective=final_sp.objective,
        upper_bound=z_rmp, lower_bound=z_sp_max, gap=gap,
        evacuated_claimed=final_sp.objective,
        evacuated=check.evacuated, evac_percent=check.evac_percent,
        clearance_steps=check.clearance_steps,
        iterations=iteration, wall_time=budget.elapsed(), trace=trace,
        extras={"t_star": t_star, "t_star_info": tinfo,
                "relaxed_value": z_sp_max, "validation_ok": check.ok,
                "cuts": iteration - 1 if status == "optimal" else len(audit)},
    )
    return plan, report, audit


def _decode_plan(teg, xbar, ybar, sp_sol):
    g = teg.graph
    paths = {}
    for k in g.zones:
        def selected(node, k=k):
            return [aid for aid in g.delta_out(node)
                    if xbar.get((aid, k), 0.0) > 0.5]

        def weight(aid, k=k):
            return sum(sp_sol.values.get(_flow(aid, t, k), 0.0)
                       for t in teg.departures[aid]) if sp_sol.values else 0.0

        paths[k] = walk_path(teg, k, selected, weight)

    departures = {}
    for k in g.zones:
        deps = {}
        path = paths.get(k)
        if path is not None and sp_sol.values:
            first = path.arcs[0]
            for t in teg.departures[first]:
                v = sp_sol.values.get(_flow(first, t, k), 0.0)
                if v > 1e-9:
                    deps[t] = v
        departures[k] = deps
    orientation = {aid: int(round(ybar.get(aid, 1.0))) for aid in g.paired_arcs}
    return EvacuationPlan(zone_paths=paths, departures=departures,
                          orientation=orientation)
