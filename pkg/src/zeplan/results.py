"""Solve reports, time limits, and iteration traces shared by all methods."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict


@dataclass
class SolveLimits:
    """Wall-clock budgets in seconds; None means unlimited.

    total bounds a whole method run, per_solve a single LP/MIP solve inside
    it, per_probe one horizon probe of a clearance search.
    """

    total: float | None = None
    per_solve: float | None = None
    per_probe: float | None = None


class Budget:
    """Tracks a running method's share of a total wall-clock budget.

    Solves always receive a minimum slice so a method can return its
    mandatory artifacts (seed master, final schedule) even under an
    exhausted budget; iteration loops stop via exhausted().
    """

    MIN_SLICE = 0.1

    def __init__(self, total=None):
        self.total = total
        self.started = time.perf_counter()

    def elapsed(self):
        return time.perf_counter() - self.started

    def remaining(self):
        if self.total is None:
            return None
        return max(0.0, self.total - self.elapsed())

    def exhausted(self):
        rem = self.remaining()
        return rem is not None and rem <= 0.0

    def solve_limit(self, per_solve=None):
        """Time limit for the next solve given a per-solve cap."""
        rem = self.remaining()
        if rem is None:
            return per_solve
        if per_solve is None:
            return max(rem, self.MIN_SLICE)
        return max(min(per_solve, rem), self.MIN_SLICE)


@dataclass
class SolveReport:
    """Uniform summary of one solver run on one instance."""

    method: str
    instance: str = ""
    horizon: int = 0
    step_minutes: float = 5.0
    contraflow: bool = False
    status: str = "optimal"
    objective: float | None = None
    upper_bound: float | None = None
    lower_bound: float | None = None
    gap: float | None = None
    evacuated_claimed: float | None = None
    evacuated: float | None = None
    evac_percent: float | None = None
    clearance_steps: int | None = None
    iterations: int = 0
    wall_time: float = 0.0
    trace: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def write_trace_csv(rows, path, columns):
    """Write an iteration trace as CSV with the given column order."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})
