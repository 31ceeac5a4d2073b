from __future__ import annotations

import random

import pytest

from zeplan.colgen import (CgContext, CgInfeasibleError, cg_plan_cost,
                           cg_price, cg_price_elementary, cg_solve)
from zeplan.instances import GenParams, generate_instance
from zeplan.network import (Arc, StaticGraph, StepCurve, TimeResponsePlan,
                            add_super_sink, build_time_expanded,
                            EVAC, SAFE, TRANSIT)


def _ctx(g, horizon):
    return CgContext(build_time_expanded(g, horizon, on_infeasible="allow"))


def test_plan_cost_t1_hand_value(t1):
    # arrivals 5@t1 and 5@t2 over a 4-step horizon: 5/4 + 10/4 = 3.75
    ctx = _ctx(t1, 4)
    plan = TimeResponsePlan(ctx.teg.make_path(0, [0]), StepCurve(5), 0)
    cost, reduced = cg_plan_cost(ctx, plan)
    assert cost == pytest.approx(3.75)
    assert reduced is None


def test_cbar_formula_and_stranding_domination(t1):
    ctx = _ctx(t1, 4)
    max_pen = max(ctx.arrival_penalty(aid, t)
                  for (aid, t, _arr) in ctx.teg.safe_entering_copies())
    assert ctx.cbar == pytest.approx(100.0 * max_pen * 10)
    # a plan stranding 5 of 10 costs at least 5 * cbar
    plan = TimeResponsePlan(ctx.teg.make_path(0, [0]), StepCurve(5), 2)
    cost, _ = cg_plan_cost(ctx, plan)
    assert plan.shortfall(10) == 5
    assert cost >= 5 * ctx.cbar


def test_reduced_cost_zero_duals_equals_cost(t1):
    ctx = _ctx(t1, 4)
    plan = TimeResponsePlan(ctx.teg.make_path(0, [0]), StepCurve(5), 0)
    cost, reduced = cg_plan_cost(ctx, plan, duals={})
    assert reduced == pytest.approx(cost)
    cost2, reduced2 = cg_plan_cost(ctx, plan, duals={"oneplan[0]": 1.5})
    assert reduced2 == pytest.approx(cost2 - 1.5)


def _enumerate_pricing_cost(ctx, zone, curve, duals):
    """Brute-force minimum of the aggregated pricing cost over (path, t0)."""
    from zeplan.colgen import _pricing_arcs

    arcs = _pricing_arcs(ctx, zone, curve, duals)
    out = {}
    for (tail, head, cost, aid) in arcs:
        out.setdefault(tail, []).append((head, cost, aid))
    best = [None]

    def dfs(node, cost):
        if node == "sink":
            if best[0] is None or cost < best[0]:
                best[0] = cost
            return
        for (head, c, _aid) in out.get(node, ()):
            dfs(head, cost + c)

    dfs((zone, 0), 0.0)
    return best[0]


def test_zero_dual_pricing_returns_earliest_full_rate_plan(t1):
    ctx = _ctx(t1, 4)
    plan, cost, _reduced = cg_price(ctx, 0, StepCurve(5), {})
    assert plan.start == 0 and plan.path.arcs == (0,)
    oracle = _enumerate_pricing_cost(ctx, 0, StepCurve(5), {})
    assert cost == pytest.approx(oracle, abs=1e-9)


def test_pricing_matches_enumeration_with_random_duals():
    rng = random.Random(21)
    for seed in (70, 71, 72):
        inst = generate_instance(GenParams(zones=2, transit=4, safe=1,
                                           horizon_steps=10), seed)
        g = inst.build_graph()
        ctx = _ctx(g, inst.horizon_steps)
        duals = {f"cap[{aid},{t}]": -rng.uniform(0.0, 2.0)
                 for (aid, t) in ctx.teg.copies}
        for k in g.zones:
            for rate in (2, 5):
                got = cg_price(ctx, k, StepCurve(rate), duals)
                oracle = _enumerate_pricing_cost(ctx, k, StepCurve(rate), duals)
                if oracle is None:
                    assert got[0] is None
                else:
                    assert got[1] == pytest.approx(oracle, abs=1e-9)


def test_saturating_duals_make_nothing_improving(t1):
    # strongly negative capacity duals (binding in a minimization master)
    # price every arc above its raw cost: no plan can improve
    ctx = _ctx(t1, 4)
    duals = {f"cap[{aid},{t}]": -(ctx.arrival_penalty(aid, t) + 1.0)
             for (aid, t) in ctx.teg.copies}
    duals["oneplan[0]"] = 0.0
    plan, _cost, reduced = cg_price(ctx, 0, StepCurve(5), duals)
    assert reduced >= 0.0
    _c, true_reduced = cg_plan_cost(ctx, plan, duals)
    assert true_reduced >= 0.0


@pytest.fixture
def teaser():
    """Zone, junction with a 2-cycle detour, one exit.

    Used with duals that make the direct exit expensive early and cheap
    late: the cheapest plan kills time by looping junction -> neighbor ->
    junction, which revisits a transit node (non-elementary projection).
    """
    return StaticGraph(
        {0: EVAC, 1: TRANSIT, 2: TRANSIT, 3: SAFE}, {0: 1}, {},
        [Arc(0, 0, 1, 1, 5), Arc(1, 1, 2, 1, 5), Arc(2, 2, 1, 1, 5),
         Arc(3, 1, 3, 1, 5)])


def _teaser_duals(ctx):
    duals = {}
    for (aid, t) in ctx.teg.copies:
        if aid == 0 and t >= 1:  # leaving home late is expensive
            duals[f"cap[{aid},{t}]"] = -10.0
        if aid == 3 and t <= 2:  # the exit is saturated early
            duals[f"cap[{aid},{t}]"] = -10.0
    return duals


def test_non_elementary_shortest_path_detected(teaser):
    ctx = _ctx(teaser, 6)
    duals = _teaser_duals(ctx)
    plan, cost, _ = cg_price(ctx, 0, StepCurve(1), duals)
    assert not plan.path.elementary  # loops through the junction


def test_elementary_pricing_rejects_k1_and_agrees_with_mip(teaser):
    ctx = _ctx(teaser, 6)
    duals = _teaser_duals(ctx)
    plan, cost, _r, info = cg_price_elementary(ctx, 0, StepCurve(1), duals)
    assert info["branch"] == "kshortest" and info["k"] > 1
    assert plan.path.elementary
    mip_plan, mip_cost, _r2, info2 = cg_price_elementary(
        ctx, 0, StepCurve(1), duals, k_threshold=0)
    assert info2["branch"] == "mip"
    assert mip_cost == pytest.approx(cost, abs=1e-6)
    assert mip_plan.path.elementary


def test_already_elementary_accepted_at_k1(t1):
    ctx = _ctx(t1, 4)
    plan, _c, _r, info = cg_price_elementary(ctx, 0, StepCurve(5), {})
    assert info == {"branch": "kshortest", "k": 1}
    assert plan.path.elementary


def test_rea_and_mip_branches_agree_on_random_suite():
    rng = random.Random(33)
    agreements = 0
    seed = 150
    while agreements < 50 and seed < 300:
        inst = generate_instance(GenParams(zones=2, transit=4, safe=1,
                                           horizon_steps=8), seed)
        seed += 1
        g = inst.build_graph()
        try:
            ctx = _ctx(g, inst.horizon_steps)
        except CgInfeasibleError:
            continue  # nothing reaches safety at this horizon
        duals = {f"cap[{aid},{t}]": -rng.uniform(0.0, 2.0)
                 for (aid, t) in ctx.teg.copies}
        k = g.zones[seed % len(g.zones)]
        curve = StepCurve(rng.choice((1, 3, 6)))
        _p1, c1, _r1, _i1 = cg_price_elementary(ctx, k, curve, duals)
        _p2, c2, _r2, _i2 = cg_price_elementary(ctx, k, curve, duals,
                                                k_threshold=0)
        if c1 is None:
            assert c2 is None
        else:
            assert c2 == pytest.approx(c1, abs=1e-6)
        agreements += 1
    assert agreements == 50


def test_cg_t1_exact_with_matching_curve(t1):
    plan, report, pool = cg_solve(t1, 4, curves=(5,))
    assert report.status == "optimal"
    assert report.gap == pytest.approx(0.0)
    assert report.evac_percent == pytest.approx(100.0)
    trp = plan.response[0]
    assert (trp.start, trp.curve.rate, trp.path.arcs) == (0, 5, (0,))
    # full enumeration of (path, start) plans confirms optimality
    ctx = _ctx(t1, 4)
    best = min(cg_plan_cost(ctx, TimeResponsePlan(ctx.teg.make_path(0, [0]),
                                                  StepCurve(5), t0))[0]
               for t0 in range(0, 3))
    assert report.objective == pytest.approx(best)


def test_cg_t1_rate_capped_curve(t1):
    plan, report, _ = cg_solve(t1, 4, curves=(2,))
    assert report.evac_percent == pytest.approx(60.0)  # 3 waves of 2
    plan, report, _ = cg_solve(t1, 8, curves=(2,))
    assert report.evac_percent == pytest.approx(100.0)
    assert report.clearance_steps == 6  # last wave t=4 arrives at step 5


def test_lp_objective_monotone_and_final_gap_nonnegative(t2):
    plan, report, _ = cg_solve(t2, 6, curves=(2, 5))
    values = [row["lp_objective"] for row in report.trace]
    assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))
    assert report.gap is not None and report.gap >= 0.0
    assert report.objective >= report.lower_bound - 1e-9


def test_elementary_and_free_pricing_reach_same_lp():
    for seed in (210, 211, 212):
        inst = generate_instance(GenParams(zones=2, transit=4, safe=2,
                                           horizon_steps=10), seed)
        g = inst.build_graph()
        free = cg_solve(g, 10, curves=(2, 6))[1]
        elem = cg_solve(g, 10, curves=(2, 6), elementary=True)[1]
        assert free.extras["lp_objective"] == pytest.approx(
            elem.extras["lp_objective"], abs=1e-6)


def test_lexicographic_stranding_dominates():
    # among full assignments, fewer stranded always costs strictly less
    for seed in (220, 221):
        inst = generate_instance(GenParams(zones=3, transit=5, safe=2,
                                           horizon_steps=10), seed)
        g = inst.build_graph()
        ctx = _ctx(g, 10)
        per_zone = {}
        for k in g.zones:
            plans = []
            for rate in (2, 6, 25):
                plan, _c, _r = cg_price(ctx, k, StepCurve(rate), {})
                if plan is not None:
                    plans.append(plan)
            per_zone[k] = plans
        if not all(per_zone.values()):
            continue
        rng = random.Random(seed)
        assignments = []
        for _ in range(12):
            chosen = [rng.choice(per_zone[k]) for k in g.zones]
            stranded = sum(p.shortfall(g.demand[p.path.zone]) for p in chosen)
            cost = sum(cg_plan_cost(ctx, p)[0] for p in chosen)
            assignments.append((stranded, cost))
        for (s1, c1) in assignments:
            for (s2, c2) in assignments:
                if s1 < s2:
                    assert c1 < c2


def test_non_preemption_validated():
    for seed in (230, 231):
        inst = generate_instance(GenParams(zones=2, transit=4, safe=2), seed)
        g = inst.build_graph()
        plan, report, _ = cg_solve(g, inst.horizon_steps, curves=(2, 6, 10))
        if plan is None:
            continue
        assert report.extras["validation_ok"]
        for k, trp in plan.response.items():
            flows = trp.induced_flows(g.demand[k])
            first = trp.path.arcs[0]
            steps = sorted(t for (a, t), v in flows.items()
                           if a == first and v > 0)
            assert steps == list(range(steps[0], steps[-1] + 1)) if steps else True


def test_unreachable_zone_reported():
    g = StaticGraph({0: EVAC, 1: EVAC, 2: SAFE}, {0: 5, 1: 5}, {0: 0},
                    [Arc(0, 0, 2, 1, 5), Arc(1, 1, 2, 1, 5)])
    # zone 0's deadline of 0 steps leaves it no usable departure
    with pytest.raises(CgInfeasibleError) as err:
        cg_solve(g, 6, curves=(2,))
    assert err.value.zones == (0,)
