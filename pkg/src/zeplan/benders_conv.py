"""Benders decomposition with convergent evacuation paths.

Convergence (outdegree at most one at every non-safe node) collapses the
master to a single aggregate flow without commodity tracking and turns the
subproblem into a plain max-flow on the selected arcs, whose LP optimum is
integral: the method is exact for convergent planning. Cut strength can be
improved with Pareto-optimal cuts obtained from the dual of the
Magnanti-Wong problem at an interior core point.

Contraflow support is a preprocessing step: each pairable arc's per-step
capacity is replaced by the sum of both directions. Because selected paths
form a forest, at most one direction of a pair can carry flow, so after
solving, arcs whose flow exceeds their original capacity are exactly the
places where the reverse road must be reversed.
"""

from __future__ import annotations

import logging

from . import backend
from .backend import EQ, GE, LE, Model
from .decode import walk_path
from .evaluation import validate
from .network import Arc, EvacuationPlan, StaticGraph, build_time_expanded
from .results import Budget, SolveLimits, SolveReport

log = logging.getLogger(__name__)

MAX_ITERATIONS = 500
GAP_TOL = 1e-6
INT_TOL = 1e-6


def _x(aid):
    return f"x[{aid}]"


def _agg(aid):
    return f"agg[{aid}]"


def _flow(aid, t):
    return f"flow[{aid},{t}]"


def bc_core_point(g):
    """Interior point of the convergence polytope: 1/(outdeg+1) per arc."""
    return {a.id: 1.0 / (len(g.delta_out(a.tail)) + 1.0) for a in g.arcs}


def bc_contraflow_preprocess(g):
    """Merge pair capacities: every pairable arc gets u_e + u_reverse.

    Pair metadata is retained so the solved flows can be postprocessed into
    an orientation (arcs flowing beyond their original capacity need the
    reverse road reversed).
    """
    arcs = []
    for a in g.arcs:
        if a.id in g.paired_arcs:
            rev = g.arc_by_id[g.reverse_of[a.id]]
            arcs.append(Arc(a.id, a.tail, a.head, a.travel_steps,
                            a.capacity + rev.capacity, a.block_steps))
        else:
            arcs.append(a)
    return StaticGraph(g.node_kinds, g.demand, g.deadline_steps, arcs,
                       g.contraflow_pairs)


def bc_build_rmp(teg):
    """Master: aggregate flow on a convergent arc selection."""
    g = teg.graph
    m = Model("bc-rmp", sense="max")
    m.add_var("z", 0.0, None)
    for a in g.arcs:
        m.add_binary(_x(a.id))
        m.add_var(_agg(a.id), 0.0, None)
        m.add_constr(f"gate[{a.id}]",
                     {_agg(a.id): 1.0, _x(a.id): -float(teg.aggregate_cap(a.id))},
                     LE, 0.0)

    link = {"z": 1.0}
    for k in g.zones:
        for aid in g.delta_out(k):
            link[_agg(aid)] = link.get(_agg(aid), 0.0) - 1.0
    m.add_constr("link", link, LE, 0.0)

    for i in g.transit_nodes:
        coeffs = {_agg(aid): 1.0 for aid in g.delta_in(i)}
        for aid in g.delta_out(i):
            coeffs[_agg(aid)] = coeffs.get(_agg(aid), 0.0) - 1.0
        m.add_constr(f"cons[{i}]", coeffs, EQ, 0.0)

    for i in list(g.zones) + list(g.transit_nodes):
        coeffs = {_x(aid): 1.0 for aid in g.delta_out(i)}
        if coeffs:
            m.add_constr(f"conv[{i}]", coeffs, LE, 1.0)
    # every zone with demand receives a path even when its flow is zero
    for k in g.zones:
        if g.demand[k] > 0:
            m.add_constr(f"zonepath[{k}]",
                         {_x(aid): 1.0 for aid in g.delta_out(k)}, EQ, 1.0)

    for k in g.zones:
        m.add_constr(f"dem[{k}]", {_agg(aid): 1.0 for aid in g.delta_out(k)},
                     LE, float(g.demand[k]))

    m.set_objective({"z": 1.0})
    return m


def bc_build_sp(teg, xbar, integer=False):
    """Subproblem: max flow over time on the selected arcs."""
    g = teg.graph
    m = Model("bc-sp", sense="max")
    for (aid, t) in sorted(teg.copies):
        m.add_var(_flow(aid, t), 0.0, None, integer=integer)

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
            coeffs = {_flow(aid, tt): 1.0 for (aid, tt) in ins}
            for (aid, tt) in outs:
                coeffs[_flow(aid, tt)] = coeffs.get(_flow(aid, tt), 0.0) - 1.0
            m.add_constr(f"cons[{i},{t}]", coeffs, EQ, 0.0)

    for (aid, t) in sorted(teg.copies):
        m.add_constr(f"cap[{aid},{t}]", {_flow(aid, t): 1.0},
                     LE, float(teg.cap(aid, t)) * xbar.get(aid, 0.0))

    for k in g.zones:
        coeffs = {}
        for aid in g.delta_out(k):
            for t in teg.departures[aid]:
                coeffs[_flow(aid, t)] = 1.0
        m.add_constr(f"dem[{k}]", coeffs, LE, float(g.demand[k]))

    m.set_objective({_flow(aid, t): 1.0
                     for k in g.zones for aid in g.delta_out(k)
                     for t in teg.departures[aid]})
    return m


def bc_build_dmwp(teg, xbar, core, z_sp):
    """Dual Magnanti-Wong problem at the core point and subproblem optimum."""
    g = teg.graph
    m = Model("bc-dmwp", sense="max")
    for (aid, t) in sorted(teg.copies):
        m.add_var(_flow(aid, t), 0.0, None)
    m.add_var("xi", None, None)

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
            coeffs = {_flow(aid, tt): 1.0 for (aid, tt) in ins}
            for (aid, tt) in outs:
                coeffs[_flow(aid, tt)] = coeffs.get(_flow(aid, tt), 0.0) - 1.0
            m.add_constr(f"cons[{i},{t}]", coeffs, EQ, 0.0)

    for (aid, t) in sorted(teg.copies):
        cap = float(teg.cap(aid, t))
        m.add_constr(f"cap[{aid},{t}]",
                     {_flow(aid, t): 1.0, "xi": cap * xbar.get(aid, 0.0)},
                     LE, cap * core[aid])

    for k in g.zones:
        coeffs = {}
        for aid in g.delta_out(k):
            for t in teg.departures[aid]:
                coeffs[_flow(aid, t)] = 1.0
        coeffs["xi"] = float(g.demand[k])
        m.add_constr(f"dem[{k}]", coeffs, LE, float(g.demand[k]))

    objective = {_flow(aid, t): 1.0
                 for k in g.zones for aid in g.delta_out(k)
                 for t in teg.departures[aid]}
    objective["xi"] = float(z_sp)
    m.set_objective(objective)
    return m


def bc_build_cut(duals, teg):
    """Optimality cut z <= sum_a x_a * sum_t u_at * pi_at + sum_k d_k * pi_k."""
    g = teg.graph
    const = 0.0
    x_coeffs = {}
    for k in g.zones:
        pi = duals.get(f"dem[{k}]")
        if pi is None:
            raise RuntimeError(f"missing demand dual for zone {k}")
        const += g.demand[k] * pi
    for (aid, t) in teg.copies:
        pi = duals.get(f"cap[{aid},{t}]")
        if pi is None:
            raise RuntimeError(f"missing capacity dual ({aid},{t})")
        x_coeffs[aid] = x_coeffs.get(aid, 0.0) + teg.cap(aid, t) * pi
    return const, x_coeffs


def evaluate_cut(cut, xbar):
    const, x_coeffs = cut
    return const + sum(c * xbar.get(aid, 0.0) for aid, c in x_coeffs.items())


def _add_cut(rmp, cut, index):
    const, x_coeffs = cut
    coeffs = {"z": 1.0}
    for aid, c in x_coeffs.items():
        if c != 0.0:
            coeffs[_x(aid)] = coeffs.get(_x(aid), 0.0) - c
    rmp.add_constr(f"cut[{index}]", coeffs, LE, const)


def bc_find_tstar(g, horizon, step_minutes=5.0, limits=None):
    """Tightest horizon prefix preserving the convergent master optimum."""
    from .benders_nc import bn_find_tstar

    def builder(teg, contraflow):
        return bc_build_rmp(teg)

    return bn_find_tstar(g, horizon, step_minutes, False, limits,
                         rmp_builder=builder)


def bc_solve(g, horizon, step_minutes=5.0, contraflow=False, pareto=False,
             limits=None, max_iterations=MAX_ITERATIONS):
    """Run the convergent loop; returns (plan, report, audit).

    With pareto=True, cut coefficients come from the Magnanti-Wong dual
    unless it solves unbounded or fails the tightness guard, in which case
    that iteration falls back to the plain subproblem cut (logged).
    """
    limits = limits or SolveLimits()
    budget = Budget(limits.total)
    g_eff = bc_contraflow_preprocess(g) if contraflow else g
    teg = build_time_expanded(g_eff, horizon, step_minutes)
    core = bc_core_point(g_eff)

    t_star, tinfo = bc_find_tstar(g_eff, horizon, step_minutes, limits)
    seed_teg = (teg if t_star == horizon else
                build_time_expanded(g_eff, t_star, step_minutes,
                                    on_infeasible="allow"))
    seed_sol = backend.solve_mip(bc_build_rmp(seed_teg),
                                 time_limit=budget.solve_limit(limits.per_solve))
    if not seed_sol.ok:
        raise RuntimeError(f"seed master unsolved: {seed_sol.status}")

    rmp = bc_build_rmp(teg)
    z_rmp = seed_sol.objective
    xbar = _decode_selection(g_eff, seed_sol.values)

    z_sp_max = float("-inf")
    best_x = xbar
    status = "optimal"
    trace, audit = [], []
    pareto_fallbacks = 0
    prev_x = None
    iteration = 0
    while iteration < max_iterations:
        iteration += 1
        sp_sol = backend.solve_lp(bc_build_sp(teg, xbar),
                                  time_limit=budget.solve_limit(limits.per_solve))
        if sp_sol.status != "optimal":
            status = "time_limit" if sp_sol.status == "time_limit" else "error"
            break
        z_sp = sp_sol.objective
        if z_sp > z_sp_max:
            z_sp_max = z_sp
            best_x = xbar

        cut_duals = sp_sol.duals
        used_pareto = False
        if pareto:
            mw_sol = backend.solve_lp(bc_build_dmwp(teg, xbar, core, z_sp),
                                      time_limit=budget.solve_limit(limits.per_solve))
            if mw_sol.status == "optimal":
                candidate = bc_build_cut(mw_sol.duals, teg)
                tight = abs(evaluate_cut(candidate, xbar) - z_sp)
                if tight <= GAP_TOL * max(1.0, abs(z_sp)):
                    cut_duals = mw_sol.duals
                    used_pareto = True
                else:
                    pareto_fallbacks += 1
                    log.warning("Magnanti-Wong cut not tight at the current "
                                "point (off by %.3g); using the plain cut", tight)
            else:
                pareto_fallbacks += 1
                log.warning("Magnanti-Wong problem returned %s; using the "
                            "plain cut", mw_sol.status)

        cut = bc_build_cut(cut_duals, teg)
        at_point = evaluate_cut(cut, xbar)
        if abs(at_point - z_sp) > GAP_TOL * max(1.0, abs(z_sp)):
            raise RuntimeError(
                f"cut fails strong duality at its generating point: "
                f"{at_point} vs {z_sp}")
        audit.append({"iteration": iteration, "xbar": dict(xbar), "z_sp": z_sp,
                      "cut": cut, "pareto": used_pareto})
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
        xbar = _decode_selection(g_eff, rmp_sol.values)
        if (prev_x == xbar
                and z_rmp - z_sp_max > GAP_TOL * max(1.0, abs(z_rmp))):
            # a repeated selection normally converges on the next check; a
            # persistent gap means degenerate duals
            log.warning("master repeated a selection with a positive gap; "
                        "aborting loop")
            status = "stalled"
            break
        prev_x = xbar
    else:
        status = "iteration_limit"

    xbar = best_x
    final_sp = backend.solve_mip(bc_build_sp(teg, xbar, integer=True),
                                 time_limit=budget.solve_limit(limits.per_solve))
    integral = _flows_integral(final_sp)
    plan, conflict = _decode_plan(g, teg, xbar, final_sp, contraflow)
    orig_teg = build_time_expanded(g, horizon, step_minutes)
    check = validate(plan, orig_teg, contraflow_allowed=contraflow)
    if not check.ok:
        log.error("decoded plan failed validation: %s", check.violations)

    gap = None
    if z_sp_max > GAP_TOL:
        gap = max(0.0, (z_rmp - z_sp_max) / z_sp_max)
    report = SolveReport(
        method="bc", horizon=horizon, step_minutes=step_minutes,
        contraflow=contraflow, status=status,
        objective=final_sp.objective,
        upper_bound=z_rmp, lower_bound=z_sp_max, gap=gap,
        evacuated_claimed=final_sp.objective,
        evacuated=check.evacuated, evac_percent=check.evac_percent,
        clearance_steps=check.clearance_steps,
        iterations=iteration, wall_time=budget.elapsed(), trace=trace,
        extras={"t_star": t_star, "t_star_info": tinfo, "pareto": pareto,
                "pareto_fallbacks": pareto_fallbacks,
                "sp_flows_integral": integral,
                "orientation_conflict": conflict,
                "validation_ok": check.ok},
    )
    return plan, report, audit


def _decode_selection(g, values):
    return {a.id: (1.0 if values.get(_x(a.id), 0.0) > 0.5 else 0.0)
            for a in g.arcs}


def _flows_integral(sol):
    if not sol.values:
        return True
    return all(abs(v - round(v)) <= INT_TOL
               for name, v in sol.values.items() if name.startswith("flow["))


def _decode_plan(g, teg, xbar, sp_sol, contraflow):
    """Paths by following unique selected out-arcs; orientation from flows.

    An arc whose scheduled flow exceeds its original capacity at some step
    needs the extra lanes of its reverse road: the reverse is reversed
    (orientation 0). A pair needing both directions reversed cannot happen
    for flows that reach safety; it is detected and reported as a conflict.
    """
    paths = {}
    for k in g.zones:
        def selected(node):
            return [aid for aid in g.delta_out(node) if xbar.get(aid, 0.0) > 0.5]

        def weight(aid):
            return sum(sp_sol.values.get(_flow(aid, t), 0.0)
                       for t in teg.departures[aid]) if sp_sol.values else 0.0

        paths[k] = walk_path(teg, k, selected, weight)

    departures = {}
    for k in g.zones:
        deps = {}
        path = paths.get(k)
        if path is not None and sp_sol.values:
            first = path.arcs[0]
            for t in teg.departures[first]:
                v = sp_sol.values.get(_flow(first, t), 0.0)
                if v > 1e-9:
                    deps[t] = v
        departures[k] = deps

    orientation = {aid: 1 for aid in g.paired_arcs}
    conflict = False
    if contraflow and sp_sol.values:
        uses_extra = set()
        for (aid, t) in teg.copies:
            if aid in g.paired_arcs:
                original = g.arc_by_id[aid].capacity
                if sp_sol.values.get(_flow(aid, t), 0.0) > original + 1e-6:
                    uses_extra.add(aid)
        for aid in uses_extra:
            rev = g.reverse_of[aid]
            if rev in uses_extra:
                conflict = True
                log.error("pair (%s,%s) needs both directions reversed", aid, rev)
            orientation[rev] = 0
    return EvacuationPlan(zone_paths=paths, departures=departures,
                          orientation=orientation), conflict
