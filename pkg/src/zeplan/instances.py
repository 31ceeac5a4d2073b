"""Instance files, plan files, and the synthetic instance generator.

Formats are versioned YAML documents (see FORMATS.md at the repo root for
the frozen field names). Instances carry travel/block/deadline values in
minutes; conversion to steps happens at graph build time: travel times
round up, block times and deadlines round down (both conservative).

The generator builds layered random networks (zones, transit layers, safe
nodes), repairs connectivity deterministically, and optionally adds
reverse arcs as contraflow pairs. All randomness flows through one seeded
generator, so equal seeds give byte-identical files. Demands scale
linearly with the scale factor before integer rounding.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import yaml

from .network import (Arc, EvacuationPlan, StaticGraph, StepCurve,
                      TimeResponsePlan, build_time_expanded,
                      minutes_to_cutoff_steps, minutes_to_travel_steps,
                      EVAC, SAFE, TRANSIT)

INSTANCE_FORMAT = "evac-instance/1"
PLAN_FORMAT = "evac-plan/1"


@dataclass
class Instance:
    """A named scenario: graph data in minutes plus run geometry."""

    name: str
    step_minutes: float
    horizon_steps: int
    scale: float
    nodes: list
    arcs: list
    contraflow_pairs: list = field(default_factory=list)

    def build_graph(self):
        kinds, demand, deadline = {}, {}, {}
        for n in self.nodes:
            kinds[n["id"]] = n["kind"]
            if n["kind"] == EVAC:
                demand[n["id"]] = int(n["demand"])
                deadline[n["id"]] = minutes_to_cutoff_steps(
                    n.get("deadline_minutes"), self.step_minutes)
        arcs = []
        for a in self.arcs:
            arcs.append(Arc(
                id=a["id"], tail=a["tail"], head=a["head"],
                travel_steps=minutes_to_travel_steps(a["travel_minutes"],
                                                     self.step_minutes),
                capacity=int(a["capacity_per_step"]),
                block_steps=minutes_to_cutoff_steps(a.get("block_minutes"),
                                                    self.step_minutes),
            ))
        return StaticGraph(kinds, demand, deadline, arcs,
                           [tuple(p) for p in self.contraflow_pairs])

    def build_teg(self, horizon=None, **kwargs):
        return build_time_expanded(self.build_graph(),
                                   horizon or self.horizon_steps,
                                   self.step_minutes, **kwargs)

    def to_document(self):
        return {
            "format": INSTANCE_FORMAT,
            "name": self.name,
            "step_minutes": self.step_minutes,
            "horizon_steps": self.horizon_steps,
            "scale": self.scale,
            "nodes": self.nodes,
            "arcs": self.arcs,
            "contraflow_pairs": [list(p) for p in self.contraflow_pairs],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_document(), fh, sort_keys=False)

    @classmethod
    def from_document(cls, doc):
        if doc.get("format") != INSTANCE_FORMAT:
            raise ValueError(f"unsupported instance format {doc.get('format')!r}")
        return cls(
            name=doc["name"], step_minutes=float(doc["step_minutes"]),
            horizon_steps=int(doc["horizon_steps"]), scale=float(doc["scale"]),
            nodes=doc["nodes"], arcs=doc["arcs"],
            contraflow_pairs=[tuple(p) for p in doc.get("contraflow_pairs", [])],
        )

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_document(yaml.safe_load(fh))


@dataclass
class GenParams:
    """Size and shape knobs for the synthetic generator."""

    zones: int = 3
    transit: int = 6
    safe: int = 2
    layers: int = 2
    extra_arc_prob: float = 0.3
    demand_range: tuple = (4, 20)
    capacity_range: tuple = (2, 8)
    travel_step_choices: tuple = (1, 1, 2, 3)
    block_prob: float = 0.15
    deadline_prob: float = 0.2
    contraflow_prob: float = 0.25
    step_minutes: float = 5.0
    horizon_steps: int = 16
    scale: float = 1.0

    @classmethod
    def regional(cls):
        """Preset with the shape of a large real-world river-valley region."""
        return cls(zones=80, transit=184, safe=5, layers=5,
                   demand_range=(200, 760), capacity_range=(10, 60),
                   travel_step_choices=(1, 2, 3, 4, 6),
                   horizon_steps=120, step_minutes=5.0)


def generate_instance(params, seed, name=None):
    """Deterministic layered random instance; see the module docstring."""
    if params.zones < 1 or params.safe < 1:
        raise ValueError("need at least one zone and one safe node")
    rng = random.Random(seed)
    zone_ids = list(range(params.zones))
    transit_ids = list(range(params.zones, params.zones + params.transit))
    safe_ids = list(range(params.zones + params.transit,
                          params.zones + params.transit + params.safe))

    layers = [[] for _ in range(max(1, params.layers))]
    for i, node in enumerate(transit_ids):
        layers[i % len(layers)].append(node)
    layers = [layer for layer in layers if layer]
    stages = [zone_ids] + layers + [safe_ids]

    horizon_minutes = params.horizon_steps * params.step_minutes
    arcs = []
    seen_pairs = set()

    def travel_minutes():
        return rng.choice(params.travel_step_choices) * params.step_minutes

    def block_minutes():
        if rng.random() < params.block_prob:
            return round(rng.uniform(horizon_minutes * 0.4, horizon_minutes), 1)
        return None

    def add_arc(tail, head):
        if tail == head or (tail, head) in seen_pairs:
            return None
        seen_pairs.add((tail, head))
        arc = {
            "id": len(arcs), "tail": tail, "head": head,
            "travel_minutes": travel_minutes(),
            "capacity_per_step": rng.randint(*params.capacity_range),
            "block_minutes": block_minutes(),
        }
        arcs.append(arc)
        return arc

    for si in range(len(stages) - 1):
        for tail in stages[si]:
            targets = stages[si + 1]
            add_arc(tail, rng.choice(targets))
            if rng.random() < params.extra_arc_prob:
                later = [n for stage in stages[si + 1:] for n in stage]
                add_arc(tail, rng.choice(later))

    # deterministic connectivity repair: every zone must reach a safe node
    def reaches_safe(start):
        out = {}
        for a in arcs:
            out.setdefault(a["tail"], []).append(a["head"])
        stack, seen = [start], {start}
        while stack:
            n = stack.pop()
            if n in safe_ids:
                return True
            for h in out.get(n, ()):
                if h not in seen:
                    seen.add(h)
                    stack.append(h)
        return False

    for k in zone_ids:
        if not reaches_safe(k):
            add_arc(k, safe_ids[k % len(safe_ids)])

    # contraflow pairs on transit-to-transit arcs lacking a reverse arc
    pairs = []
    for a in list(arcs):
        if (a["tail"] in transit_ids and a["head"] in transit_ids
                and (a["head"], a["tail"]) not in seen_pairs
                and rng.random() < params.contraflow_prob):
            rev = add_arc(a["head"], a["tail"])
            if rev is not None:
                pairs.append((a["id"], rev["id"]))

    nodes = []
    for k in zone_ids:
        demand = int(round(rng.randint(*params.demand_range) * params.scale))
        deadline = None
        if rng.random() < params.deadline_prob:
            deadline = round(rng.uniform(horizon_minutes * 0.5,
                                         horizon_minutes), 1)
        nodes.append({"id": k, "kind": EVAC, "demand": demand,
                      "deadline_minutes": deadline})
    for n in transit_ids:
        nodes.append({"id": n, "kind": TRANSIT})
    for s in safe_ids:
        nodes.append({"id": s, "kind": SAFE})

    inst = Instance(
        name=name or f"gen-{seed}",
        step_minutes=params.step_minutes,
        horizon_steps=params.horizon_steps,
        scale=params.scale,
        nodes=nodes, arcs=arcs, contraflow_pairs=pairs,
    )
    inst.build_graph()  # raises if any invariant failed
    return inst


# -- plan files ---------------------------------------------------------------


def plan_to_document(plan, instance, method, contraflow):
    zones_doc = []
    for k in sorted(plan.zone_paths):
        path = plan.zone_paths[k]
        entry = {"zone": k,
                 "path": list(path.arcs) if path is not None else None}
        if plan.response is not None and k in plan.response:
            trp = plan.response[k]
            entry["response"] = {"rate": trp.curve.rate, "start": trp.start}
        elif plan.departures is not None:
            entry["departures"] = {int(t): float(v)
                                   for t, v in sorted(plan.departures.get(k, {}).items())}
        zones_doc.append(entry)
    return {
        "format": PLAN_FORMAT,
        "instance": instance.name,
        "method": method,
        "contraflow": bool(contraflow),
        "orientation": {int(a): int(v) for a, v in sorted(plan.orientation.items())},
        "zones": zones_doc,
    }


def save_plan(plan, instance, method, contraflow, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(plan_to_document(plan, instance, method, contraflow),
                       fh, sort_keys=False)


def load_plan(path, instance):
    """Rebuild an EvacuationPlan against the instance's expansion."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if doc.get("format") != PLAN_FORMAT:
        raise ValueError(f"unsupported plan format {doc.get('format')!r}")
    teg = instance.build_teg(on_infeasible="allow")
    zone_paths, departures, response = {}, {}, {}
    for entry in doc.get("zones", []):
        k = int(entry["zone"])
        path = None
        if entry.get("path"):
            path = teg.make_path(k, [int(a) for a in entry["path"]])
        zone_paths[k] = path
        if "response" in entry and path is not None:
            response[k] = TimeResponsePlan(
                path=path, curve=StepCurve(int(entry["response"]["rate"])),
                start=int(entry["response"]["start"]))
        else:
            departures[k] = {int(t): float(v)
                             for t, v in (entry.get("departures") or {}).items()}
    orientation = {int(a): int(v)
                   for a, v in (doc.get("orientation") or {}).items()}
    if response:
        return EvacuationPlan(zone_paths=zone_paths, response=response,
                              orientation=orientation), doc
    return EvacuationPlan(zone_paths=zone_paths, departures=departures,
                          orientation=orientation), doc
