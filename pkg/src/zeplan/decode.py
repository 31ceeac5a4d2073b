"""Shared decoding of solver solutions into evacuation plans."""

from __future__ import annotations


def walk_path(teg, zone, selected_out, flow_weight=None):
    """Follow selected out-arcs from a zone to a safe node.

    selected_out(node) yields candidate arc ids; ties (possible when the
    selection contains idle cycles) are broken toward the arc carrying the
    most flow per flow_weight(arc_id), then by arc id. Returns an EvacPath,
    or None when the walk dead-ends or revisits a node.
    """
    g = teg.graph
    node, arcs, seen = zone, [], {zone}
    while not g.is_safe(node):
        candidates = sorted(selected_out(node))
        if not candidates:
            return None
        if flow_weight is not None and len(candidates) > 1:
            candidates.sort(key=lambda aid: (-flow_weight(aid), aid))
        aid = candidates[0]
        arcs.append(aid)
        node = g.arc_by_id[aid].head
        if node in seen:
            return None
        seen.add(node)
    return teg.make_path(zone, arcs)
