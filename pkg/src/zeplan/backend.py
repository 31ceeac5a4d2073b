"""Linear/mixed-integer programming backend.

Every solver in this package builds models through this module's Model
handle and solves them with solve_lp / solve_mip. The handle is pure data
(variables, linear constraints, linear objective) and can be rebuilt or
mutated freely; one engine is wired in behind the contract: HiGHS, via
scipy.optimize. The ZEPLAN_BACKEND environment variable selects the engine
and currently accepts only "highs".

Dual sign convention (all cut formulas rely on it): duals are reported as
d(objective)/d(rhs) in the model's own sense. For a maximization problem
with <= constraints duals are therefore >= 0; for a minimization problem
with <= constraints they are <= 0. Duals are attached only when a
continuous model solves to optimality.

Warm-start hints can be stored on the handle for engines that support them;
the HiGHS backend ignores them (scipy exposes no warm-start API).

Numeric tolerances: 1e-6 for LP equality checks, 1e-4 for objective
comparisons across methods.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

LP_TOL = 1e-6
OBJ_TOL = 1e-4

LE = "<="
GE = ">="
EQ = "=="

_INF = float("inf")

_dump_dir = None
_dump_counter = 0


def set_dump_dir(path):
    """Gate model dumping: every subsequent solve writes its model as LP text."""
    global _dump_dir, _dump_counter
    _dump_dir = path
    _dump_counter = 0


def _maybe_dump(model):
    global _dump_counter
    if _dump_dir is None:
        return
    import os

    os.makedirs(_dump_dir, exist_ok=True)
    _dump_counter += 1
    dump_lp(model, os.path.join(_dump_dir,
                                f"{_sanitize(model.name)}-{_dump_counter:04d}.lp"))


def selected_engine():
    engine = os.environ.get("ZEPLAN_BACKEND", "highs").lower()
    if engine != "highs":
        raise ValueError(f"unsupported backend {engine!r}; only 'highs' is wired in")
    return engine


@dataclass
class _Var:
    name: str
    lb: float
    ub: float
    integer: bool


@dataclass
class _Constr:
    name: str
    coeffs: dict
    sense: str
    rhs: float


@dataclass
class LpSolution:
    """Result of one solve: status, objective, primal/dual values by tag."""

    status: str
    objective: float | None = None
    values: dict = field(default_factory=dict)
    duals: dict = field(default_factory=dict)
    bound: float | None = None
    gap: float | None = None
    wall_time: float = 0.0

    @property
    def ok(self):
        return self.status in ("optimal", "time_limit") and self.objective is not None


class Model:
    """A rebuildable LP/MIP description with uniquely tagged rows and columns."""

    def __init__(self, name="model", sense="max"):
        if sense not in ("max", "min"):
            raise ValueError("sense must be 'max' or 'min'")
        self.name = name
        self.sense = sense
        self._vars = []
        self._var_index = {}
        self._constrs = []
        self._constr_index = {}
        self._objective = {}
        self.warm_start = {}

    # -- building ----------------------------------------------------------

    def add_var(self, name, lb=0.0, ub=None, integer=False):
        if name in self._var_index:
            raise ValueError(f"duplicate variable tag {name!r}")
        self._var_index[name] = len(self._vars)
        self._vars.append(_Var(name, -_INF if lb is None else float(lb),
                               _INF if ub is None else float(ub), integer))
        return name

    def add_binary(self, name):
        return self.add_var(name, 0.0, 1.0, integer=True)

    def has_var(self, name):
        return name in self._var_index

    def add_constr(self, name, coeffs, sense, rhs):
        if name in self._constr_index:
            raise ValueError(f"duplicate constraint tag {name!r}")
        if sense not in (LE, GE, EQ):
            raise ValueError(f"unknown constraint sense {sense!r}")
        coeffs = {v: float(c) for v, c in coeffs.items() if c != 0.0}
        for v in coeffs:
            if v not in self._var_index:
                raise ValueError(f"constraint {name!r} references unknown variable {v!r}")
        self._constr_index[name] = len(self._constrs)
        self._constrs.append(_Constr(name, coeffs, sense, float(rhs)))
        return name

    def set_objective(self, coeffs):
        for v in coeffs:
            if v not in self._var_index:
                raise ValueError(f"objective references unknown variable {v!r}")
        self._objective = {v: float(c) for v, c in coeffs.items()}

    def set_bounds(self, name, lb=None, ub=None):
        var = self._vars[self._var_index[name]]
        if lb is not None:
            var.lb = float(lb)
        if ub is not None:
            var.ub = float(ub)

    def make_integer(self, name, integer=True):
        self._vars[self._var_index[name]].integer = integer

    @property
    def num_vars(self):
        return len(self._vars)

    @property
    def num_constrs(self):
        return len(self._constrs)

    def var_names(self):
        return [v.name for v in self._vars]

    def has_integer_vars(self):
        return any(v.integer for v in self._vars)

    # -- matrix assembly ----------------------------------------------------

    def _cost_vector(self):
        c = np.zeros(len(self._vars))
        for v, coef in self._objective.items():
            c[self._var_index[v]] = coef
        return -c if self.sense == "max" else c

    def _row(self, constr):
        cols = [self._var_index[v] for v in constr.coeffs]
        vals = list(constr.coeffs.values())
        return cols, vals


def _assemble_rows(model, constrs, flip_ge=True):
    """COO triplets for the given rows; GE rows are negated when flip_ge."""
    rows, cols, vals, rhs = [], [], [], []
    for i, con in enumerate(constrs):
        sign = -1.0 if (flip_ge and con.sense == GE) else 1.0
        ccols, cvals = model._row(con)
        rows.extend([i] * len(ccols))
        cols.extend(ccols)
        vals.extend(sign * v for v in cvals)
        rhs.append(sign * con.rhs)
    mat = sp.csr_matrix((vals, (rows, cols)),
                        shape=(len(constrs), model.num_vars))
    return mat, np.array(rhs)


_LP_STATUS = {0: "optimal", 1: "time_limit", 2: "infeasible", 3: "unbounded",
              4: "error"}


def solve_lp(model, time_limit=None):
    """Solve a continuous model; duals attached at optimality.

    Raises ValueError when the model still contains integer variables.
    """
    selected_engine()
    _maybe_dump(model)
    if model.has_integer_vars():
        raise ValueError("solve_lp requires all variables continuous")

    ineq = [c for c in model._constrs if c.sense in (LE, GE)]
    eq = [c for c in model._constrs if c.sense == EQ]
    a_ub, b_ub = _assemble_rows(model, ineq) if ineq else (None, None)
    a_eq, b_eq = _assemble_rows(model, eq, flip_ge=False) if eq else (None, None)
    bounds = [(v.lb if v.lb > -_INF else None, v.ub if v.ub < _INF else None)
              for v in model._vars]

    options = {"presolve": True}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)

    start = time.perf_counter()
    res = linprog(model._cost_vector(), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq,
                  b_eq=b_eq, bounds=bounds, method="highs", options=options)
    if res.status in (2, 3, 4):
        # presolve has been observed to misreport feasible models; confirm
        # negative outcomes with presolve disabled before trusting them
        res = linprog(model._cost_vector(), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq,
                      b_eq=b_eq, bounds=bounds, method="highs",
                      options={**options, "presolve": False})
    wall = time.perf_counter() - start

    status = _LP_STATUS.get(res.status, "error")
    sol = LpSolution(status=status, wall_time=wall)
    if res.x is not None and status in ("optimal", "time_limit"):
        sol.values = {v.name: float(x) for v, x in zip(model._vars, res.x)}
        sol.objective = float(-res.fun if model.sense == "max" else res.fun)
    if status == "optimal":
        flip = -1.0 if model.sense == "max" else 1.0
        duals = {}
        if ineq:
            for con, marg in zip(ineq, res.ineqlin.marginals):
                sign = -1.0 if con.sense == GE else 1.0
                duals[con.name] = flip * sign * float(marg)
        if eq:
            for con, marg in zip(eq, res.eqlin.marginals):
                duals[con.name] = flip * float(marg)
        sol.duals = duals
    return sol


_MIP_STATUS = {0: "optimal", 1: "time_limit", 2: "infeasible", 3: "unbounded",
               4: "error"}


def solve_mip(model, time_limit=None, gap_target=None):
    """Solve with integrality; returns best incumbent, bound, and gap.

    The gap is (bound - incumbent) / max(1, |incumbent|) for maximization
    problems and its mirror image for minimization.
    """
    selected_engine()
    _maybe_dump(model)
    n = model.num_vars
    integrality = np.array([1 if v.integer else 0 for v in model._vars])
    lb = np.array([v.lb for v in model._vars])
    ub = np.array([v.ub for v in model._vars])

    constraints = []
    if model._constrs:
        rows, cols, vals = [], [], []
        lo, hi = [], []
        for i, con in enumerate(model._constrs):
            ccols, cvals = model._row(con)
            rows.extend([i] * len(ccols))
            cols.extend(ccols)
            vals.extend(cvals)
            if con.sense == LE:
                lo.append(-_INF)
                hi.append(con.rhs)
            elif con.sense == GE:
                lo.append(con.rhs)
                hi.append(_INF)
            else:
                lo.append(con.rhs)
                hi.append(con.rhs)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(model._constrs), n))
        constraints.append(LinearConstraint(mat, np.array(lo), np.array(hi)))

    options = {}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    if gap_target is not None:
        options["mip_rel_gap"] = float(gap_target)

    start = time.perf_counter()
    res = milp(c=model._cost_vector(), constraints=constraints,
               integrality=integrality, bounds=Bounds(lb, ub), options=options)
    if res.status in (2, 3, 4):
        # engine presolve has declared provably feasible integer models
        # infeasible; confirm negative outcomes with presolve disabled
        res = milp(c=model._cost_vector(), constraints=constraints,
                   integrality=integrality, bounds=Bounds(lb, ub),
                   options={**options, "presolve": False})
    wall = time.perf_counter() - start

    status = _MIP_STATUS.get(res.status, "error")
    sol = LpSolution(status=status, wall_time=wall)
    if res.x is not None:
        sol.values = {v.name: float(x) for v, x in zip(model._vars, res.x)}
        incumbent = float(-res.fun if model.sense == "max" else res.fun)
        sol.objective = incumbent
        raw_bound = getattr(res, "mip_dual_bound", None)
        if raw_bound is not None:
            bound = float(-raw_bound if model.sense == "max" else raw_bound)
            sol.bound = bound
            diff = (bound - incumbent) if model.sense == "max" else (incumbent - bound)
            sol.gap = max(0.0, diff) / max(1.0, abs(incumbent))
    return sol


def dump_lp(model, path):
    """Write the model in CPLEX LP text format (debugging aid)."""

    def term(coef, name):
        return f"{'+' if coef >= 0 else '-'} {abs(coef):.12g} {_sanitize(name)} "

    lines = [f"\\ {model.name}", "Maximize" if model.sense == "max" else "Minimize"]
    obj = " obj: " + "".join(term(c, v) for v, c in sorted(model._objective.items()))
    lines.append(obj if model._objective else " obj: 0 dummy")
    lines.append("Subject To")
    op = {LE: "<=", GE: ">=", EQ: "="}
    for con in model._constrs:
        expr = "".join(term(c, v) for v, c in sorted(con.coeffs.items()))
        lines.append(f" {_sanitize(con.name)}: {expr}{op[con.sense]} {con.rhs:.12g}")
    lines.append("Bounds")
    for v in model._vars:
        lo = "-inf" if v.lb <= -_INF else f"{v.lb:.12g}"
        hi = "+inf" if v.ub >= _INF else f"{v.ub:.12g}"
        lines.append(f" {lo} <= {_sanitize(v.name)} <= {hi}")
    general = [_sanitize(v.name) for v in model._vars if v.integer]
    if general:
        lines.append("General")
        lines.append(" " + " ".join(general))
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _sanitize(tag):
    for ch in " ,[]()":
        tag = tag.replace(ch, "_")
    return tag
