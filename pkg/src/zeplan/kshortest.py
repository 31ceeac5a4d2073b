"""K-shortest paths on a DAG by recursive enumeration.

Produces source-to-target paths in nondecreasing cost order, computing the
k-th path incrementally from candidate one-arc deviations of the previous
paths (Jimenez/Marzal style). Works with arbitrary (including negative) arc
costs since the graph is acyclic. Ties are broken deterministically on the
lexicographic arc-id sequence.

The graph is given as arc tuples (tail, head, cost, arc_id); nodes may be
any hashable values.
"""

from __future__ import annotations

import heapq


class KShortestPaths:
    """Incremental k-shortest-path enumerator for a DAG."""

    def __init__(self, arcs, source, target):
        self.source = source
        self.target = target
        self.in_arcs = {}
        nodes = {source, target}
        for (tail, head, cost, aid) in arcs:
            self.in_arcs.setdefault(head, []).append((tail, float(cost), aid))
            nodes.add(tail)
            nodes.add(head)
        self.order = self._topological(arcs, nodes)
        # paths[v][k] = (cost, arc_ids, pred_entry); pred_entry = (u, k_at_u, aid)
        self.paths = {v: [] for v in nodes}
        self.candidates = {v: [] for v in nodes}
        self._first_paths()

    def _topological(self, arcs, nodes):
        out = {v: [] for v in nodes}
        indeg = {v: 0 for v in nodes}
        for (tail, head, _c, _a) in arcs:
            out[tail].append(head)
            indeg[head] += 1
        ready = sorted(v for v in nodes if indeg[v] == 0)
        order = []
        heap = list(ready)
        heapq.heapify(heap)
        while heap:
            v = heapq.heappop(heap)
            order.append(v)
            for w in out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    heapq.heappush(heap, (w))
        if len(order) != len(nodes):
            raise ValueError("pricing graph contains a cycle")
        return order

    def _first_paths(self):
        best = {self.source: (0.0, (), None)}
        for v in self.order:
            if v != self.source and v in self.in_arcs:
                options = []
                for (u, cost, aid) in self.in_arcs[v]:
                    if u in best:
                        c, arcs, _ = best[u]
                        options.append((c + cost, arcs + (aid,), (u, 0, aid)))
                if options:
                    best[v] = min(options, key=lambda e: (e[0], e[1]))
            if v in best and v in self.paths:
                self.paths[v].append(best[v])

    def _ensure(self, v, k):
        """Make the k-th shortest path to v available (0-indexed)."""
        while len(self.paths[v]) <= k:
            if len(self.paths[v]) == 0:
                return False  # unreachable
            if len(self.paths[v]) == 1 and not self.candidates[v]:
                # second path: candidates are every one-arc deviation; the
                # arc the best path used continues with its tail's 2nd path
                best_pred = self.paths[v][0][2]
                for (u, cost, aid) in self.in_arcs.get(v, []):
                    is_best = (best_pred is not None
                               and (u, aid) == (best_pred[0], best_pred[2]))
                    self._push_candidate(v, u, 1 if is_best else 0, cost, aid)
            else:
                # later paths: extend the predecessor of the newest path
                u, k_at_u, aid = self.paths[v][-1][2]
                cost = next(c for (uu, c, aa) in self.in_arcs[v]
                            if uu == u and aa == aid)
                self._push_candidate(v, u, k_at_u + 1, cost, aid)
            if not self.candidates[v]:
                return False
            cost, arcs, entry = heapq.heappop(self.candidates[v])
            self.paths[v].append((cost, arcs, entry))
        return True

    def _push_candidate(self, v, u, k_at_u, cost, aid):
        if not self._ensure(u, k_at_u):
            return
        base_cost, base_arcs, _ = self.paths[u][k_at_u]
        heapq.heappush(self.candidates[v],
                       (base_cost + cost, base_arcs + (aid,), (u, k_at_u, aid)))

    def path(self, k):
        """The k-th shortest source-to-target path (0-indexed).

        Returns (cost, arc_ids) or None when fewer than k+1 paths exist.
        """
        if not self._ensure(self.target, k):
            return None
        cost, arcs, _ = self.paths[self.target][k]
        return cost, arcs

    def __iter__(self):
        k = 0
        while True:
            entry = self.path(k)
            if entry is None:
                return
            yield entry
            k += 1
