from __future__ import annotations

import itertools

import pytest

from zeplan import backend
from zeplan.backend import EQ, GE, LE, Model
from zeplan.network import build_time_expanded


def test_single_constraint_dual():
    m = Model(sense="max")
    m.add_var("x", 0.0, None)
    m.add_constr("cap", {"x": 1.0}, LE, 5.0)
    m.set_objective({"x": 1.0})
    sol = backend.solve_lp(m)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(5.0)
    assert sol.duals["cap"] == pytest.approx(1.0)  # max/<= duals >= 0


def test_t1_max_flow_lp(t1):
    # hand value: three departure slots x 5/step, demand 10 -> 10
    teg = build_time_expanded(t1, 4)
    m = Model(sense="max")
    for (aid, t) in sorted(teg.copies):
        m.add_var(f"f[{aid},{t}]", 0.0, None)
        m.add_constr(f"cap[{aid},{t}]", {f"f[{aid},{t}]": 1.0}, LE,
                     teg.cap(aid, t))
    m.add_constr("dem", {f"f[{aid},{t}]": 1.0 for (aid, t) in teg.copies},
                 LE, 10.0)
    m.set_objective({f"f[{aid},{t}]": 1.0 for (aid, t) in teg.copies})
    sol = backend.solve_lp(m)
    assert sol.objective == pytest.approx(10.0)


def test_infeasible_reported_not_raised():
    m = Model(sense="max")
    m.add_var("x", None, None)
    m.add_constr("lo", {"x": 1.0}, GE, 1.0)
    m.add_constr("hi", {"x": 1.0}, LE, 0.0)
    m.set_objective({"x": 1.0})
    assert backend.solve_lp(m).status == "infeasible"


def test_unbounded_reported():
    m = Model(sense="max")
    m.add_var("x", 0.0, None)
    m.set_objective({"x": 1.0})
    assert backend.solve_lp(m).status == "unbounded"


def test_solve_lp_rejects_integer_vars():
    m = Model(sense="max")
    m.add_binary("x")
    m.set_objective({"x": 1.0})
    with pytest.raises(ValueError):
        backend.solve_lp(m)


def test_knapsack_against_enumeration():
    values = [5.0, 4.0, 3.0]
    weights = [2.0, 3.0, 1.0]
    m = Model(sense="max")
    for i in range(3):
        m.add_binary(f"x[{i}]")
    m.add_constr("w", {f"x[{i}]": weights[i] for i in range(3)}, LE, 5.0)
    m.set_objective({f"x[{i}]": values[i] for i in range(3)})
    sol = backend.solve_mip(m)

    best = max(sum(v for v, take in zip(values, picks) if take)
               for picks in itertools.product((0, 1), repeat=3)
               if sum(w for w, take in zip(weights, picks) if take) <= 5.0)
    assert sol.objective == pytest.approx(best)
    assert sol.gap == pytest.approx(0.0)


def test_integral_max_flow_lp_equals_mip(t2):
    from zeplan.benders_conv import bc_build_sp

    teg = build_time_expanded(t2, 5)
    xbar = {a.id: 1.0 for a in t2.arcs}
    lp = backend.solve_lp(bc_build_sp(teg, xbar))
    mip = backend.solve_mip(bc_build_sp(teg, xbar, integer=True))
    assert lp.objective == pytest.approx(mip.objective)


def test_gap_target_honored():
    # 30-item knapsack; a 10% target must return with gap <= 10%
    m = Model(sense="max")
    coeffs = {}
    weights = {}
    for i in range(30):
        m.add_binary(f"x[{i}]")
        coeffs[f"x[{i}]"] = 10.0 + (i * 7) % 13
        weights[f"x[{i}]"] = 5.0 + (i * 11) % 17
    m.add_constr("w", weights, LE, 80.0)
    m.set_objective(coeffs)
    sol = backend.solve_mip(m, gap_target=0.10)
    assert sol.objective is not None
    assert sol.gap is not None and sol.gap <= 0.10 + 1e-9


def test_deterministic_objectives(t2):
    from zeplan.benders_nc import bn_build_rmp

    teg = build_time_expanded(t2, 5)
    first = backend.solve_mip(bn_build_rmp(teg, False)).objective
    second = backend.solve_mip(bn_build_rmp(teg, False)).objective
    assert first == second


def test_dual_feasibility_spot_check():
    # max c'x, Ax <= b: reduced costs c_j - sum_i A_ij y_i <= 1e-6 for all j
    m = Model(sense="max")
    rows = {"r0": ({"x[0]": 2.0, "x[1]": 1.0}, 10.0),
            "r1": ({"x[0]": 1.0, "x[2]": 3.0}, 9.0),
            "r2": ({"x[1]": 1.0, "x[2]": 1.0}, 4.0)}
    for j in range(3):
        m.add_var(f"x[{j}]", 0.0, None)
    for tag, (coeffs, rhs) in rows.items():
        m.add_constr(tag, coeffs, LE, rhs)
    objective = {"x[0]": 3.0, "x[1]": 2.0, "x[2]": 4.0}
    m.set_objective(objective)
    sol = backend.solve_lp(m)
    assert sol.status == "optimal"
    for j in range(3):
        var = f"x[{j}]"
        reduced = objective[var] - sum(
            coeffs.get(var, 0.0) * sol.duals[tag]
            for tag, (coeffs, _rhs) in rows.items())
        assert reduced <= 1e-6
        if sol.values[var] > 1e-6:  # complementary slackness
            assert reduced == pytest.approx(0.0, abs=1e-6)


def test_equality_duals_and_ge_sign():
    # min x + y s.t. x + y == 4, x >= 1: dual(==) = 1, dual(>=) = 0
    m = Model(sense="min")
    m.add_var("x", None, None)
    m.add_var("y", None, None)
    m.add_constr("sum", {"x": 1.0, "y": 1.0}, EQ, 4.0)
    m.add_constr("floor", {"x": 1.0}, GE, 1.0)
    m.set_objective({"x": 1.0, "y": 1.0})
    sol = backend.solve_lp(m)
    assert sol.objective == pytest.approx(4.0)
    assert sol.duals["sum"] == pytest.approx(1.0)
    assert sol.duals["floor"] == pytest.approx(0.0)


def test_duplicate_tags_rejected():
    m = Model()
    m.add_var("x")
    with pytest.raises(ValueError):
        m.add_var("x")
    m.add_constr("c", {"x": 1.0}, LE, 1.0)
    with pytest.raises(ValueError):
        m.add_constr("c", {"x": 1.0}, LE, 2.0)


def test_lp_dump(tmp_path):
    m = Model(sense="max")
    m.add_var("x", 0.0, 2.0)
    m.add_binary("b")
    m.add_constr("c", {"x": 1.0, "b": -2.0}, LE, 1.5)
    m.set_objective({"x": 1.0, "b": 1.0})
    out = tmp_path / "model.lp"
    backend.dump_lp(m, out)
    text = out.read_text()
    assert "Maximize" in text and "General" in text and "c:" in text
