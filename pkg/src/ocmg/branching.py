"""Optimum branchings (Chu-Liu/Edmonds) and longest paths in forests.

Edges are ``(u, v, cost)`` triples over nodes ``0..n-1``. A branching is
an edge subset where every node has at most one incoming edge and there
is no cycle. With non-negative costs the empty branching is trivially
cheapest, so the optimum used here is: as many edges as possible, then
the lowest total cost. That is exactly a minimum spanning arborescence
of the graph extended by a virtual root joined to every node at a cost
larger than any real branching.
"""
from __future__ import annotations

from itertools import product

import numpy as np


def _min_arborescence(n: int, edges: list, root: int) -> list:
    """Indices into ``edges`` of a minimum spanning arborescence rooted at ``root``.

    ``edges`` is a list of ``(u, v, cost)``; every non-root node must be
    reachable. Ties go to the lowest edge index.
    """
    best = [None] * n
    for k, (u, v, c) in enumerate(edges):
        if u == v or v == root:
            continue
        if best[v] is None or c < edges[best[v]][2]:
            best[v] = k
    for v in range(n):
        if v != root and best[v] is None:
            raise ValueError(f"node {v} is unreachable from the root")

    # find cycles among the chosen in-edges
    comp = [-1] * n
    n_comp = 0
    state = [0] * n  # 0 unseen, 1 on current walk, 2 done
    cycles = []
    for s in range(n):
        walk = []
        v = s
        while v != root and state[v] == 0:
            state[v] = 1
            walk.append(v)
            v = edges[best[v]][0]
        if v != root and state[v] == 1:
            cyc = walk[walk.index(v):]
            cycles.append(cyc)
            for x in cyc:
                comp[x] = n_comp
            n_comp += 1
        for x in walk:
            state[x] = 2
    if not cycles:
        return [best[v] for v in range(n) if v != root]

    for v in range(n):
        if comp[v] == -1:
            comp[v] = n_comp
            n_comp += 1

    on_cycle = {v for cyc in cycles for v in cyc}
    new_edges, origin = [], []
    for k, (u, v, c) in enumerate(edges):
        cu, cv = comp[u], comp[v]
        if cu == cv:
            continue
        if v in on_cycle:
            c = c - edges[best[v]][2]
        new_edges.append((cu, cv, c))
        origin.append(k)
    chosen = _min_arborescence(n_comp, new_edges, comp[root])

    result = [origin[k] for k in chosen]
    entered = {edges[k][1] for k in result}
    for cyc in cycles:
        for v in cyc:
            if v not in entered:
                result.append(best[v])
    return result


def edmonds_branching(n: int, edges) -> list:
    """Maximum-cardinality branching of minimum total cost.

    Returns the selected ``(u, v, cost)`` edges sorted by target node.
    """
    edges = [(int(u), int(v), float(c)) for u, v, c in edges if u != v]
    if n <= 1 or not edges:
        return []
    big = 1.0 + 2.0 * sum(abs(c) for _, _, c in edges)
    root = n
    ext = edges + [(root, v, big) for v in range(n)]
    chosen = _min_arborescence(n + 1, ext, root)
    picked = [ext[k] for k in chosen if ext[k][0] != root]
    return sorted(picked, key=lambda e: (e[1], e[0]))


def branching_cost(edges) -> float:
    return float(sum(c for _, _, c in sorted(edges, key=lambda e: (e[1], e[0]))))


def is_branching(n: int, edges) -> bool:
    parent = [-1] * n
    for u, v, _ in edges:
        if parent[v] != -1:
            return False
        parent[v] = u
    for s in range(n):
        seen = set()
        v = s
        while v != -1:
            if v in seen:
                return False
            seen.add(v)
            v = parent[v]
    return True


def brute_force_branching(n: int, edges) -> tuple:
    """Exhaustive optimum over all branchings: ``(edge_count, cost, edges)``."""
    edges = [(int(u), int(v), float(c)) for u, v, c in edges if u != v]
    incoming = [[None] + [e for e in edges if e[1] == v] for v in range(n)]
    best = None
    for choice in product(*incoming):
        picked = [e for e in choice if e is not None]
        if not is_branching(n, picked):
            continue
        key = (-len(picked), branching_cost(picked))
        if best is None or key < best[0]:
            best = (key, picked)
    (neg, cost), picked = best
    return -neg, cost, sorted(picked, key=lambda e: (e[1], e[0]))


def longest_path(n: int, edges) -> list:
    """Node list of the longest directed path in a branching.

    Length counts hops; ties go to the lower total cost, then to the
    lexicographically smaller node sequence.
    """
    if n == 0:
        return []
    children = [[] for _ in range(n)]
    indeg = [0] * n
    for u, v, c in edges:
        children[u].append((v, c))
        indeg[v] += 1
    order = []
    stack = [v for v in range(n) if indeg[v] == 0]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(c for c, _ in children[v])
    if len(order) != n:
        raise ValueError("input has a cycle")

    best = [None] * n  # (-hops, cost, nodes)
    for v in reversed(order):
        cand = (0, 0.0, [v])
        for c, w in children[v]:
            h, cost, nodes = best[c]
            alt = (h - 1, cost + w, [v] + nodes)
            if alt < cand:
                cand = alt
        best[v] = cand
    return min(best)[2]


def path_graph_costs(cost: np.ndarray, k: int = 5) -> list:
    """Edges of the k-nearest-successor graph of a dense cost matrix."""
    n = cost.shape[0]
    edges = []
    for j in range(n):
        row = cost[j].copy()
        row[j] = np.inf
        order = np.argsort(row, kind="stable")[: min(k, n - 1)]
        edges.extend((j, int(t), float(cost[j, t])) for t in order)
    return edges
