from __future__ import annotations

import pytest

from zeplan.network import Arc, StaticGraph, EVAC, SAFE, TRANSIT


@pytest.fixture
def t1():
    """One zone (demand 10) straight to safety: s=1, u=5."""
    return StaticGraph({0: EVAC, 1: SAFE}, {0: 10}, {}, [Arc(0, 0, 1, 1, 5)])


@pytest.fixture
def t2():
    """Two zones (demand 5 each) sharing a bottleneck corridor (u=5/step)."""
    return StaticGraph(
        {0: EVAC, 1: EVAC, 2: TRANSIT, 3: SAFE}, {0: 5, 1: 5}, {},
        [Arc(0, 0, 2, 1, 5), Arc(1, 1, 2, 1, 5), Arc(2, 2, 3, 1, 5)])


@pytest.fixture
def t3():
    """One zone (demand 20) behind a contraflow pair (5+5 per step)."""
    return StaticGraph(
        {0: EVAC, 1: TRANSIT, 2: TRANSIT, 3: SAFE}, {0: 20}, {},
        [Arc(0, 0, 1, 1, 10), Arc(1, 1, 2, 1, 5), Arc(2, 2, 1, 1, 5),
         Arc(3, 2, 3, 1, 10)],
        contraflow_pairs=[(1, 2)])


@pytest.fixture
def fork():
    """Two zones, one junction, two exits: optimal free paths diverge."""
    return StaticGraph(
        {0: EVAC, 1: EVAC, 2: TRANSIT, 3: SAFE, 4: SAFE}, {0: 10, 1: 10}, {},
        [Arc(0, 0, 2, 1, 5), Arc(1, 1, 2, 1, 5), Arc(2, 2, 3, 1, 5),
         Arc(3, 2, 4, 1, 5)])


def small_suite(count, seed0=100, **overrides):
    """Deterministic batch of small random instances for sweep tests."""
    from zeplan.instances import GenParams, generate_instance

    params = GenParams(**overrides) if overrides else GenParams()
    out = []
    for i in range(count):
        out.append(generate_instance(params, seed0 + i))
    return out
