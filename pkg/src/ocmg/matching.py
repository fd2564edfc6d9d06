"""Square assignment problem solved with the Hungarian method."""
from __future__ import annotations

import numpy as np

from .core import ContractError


def _solve(cost: np.ndarray) -> tuple:
    """Shortest augmenting path Hungarian, O(n^3). Returns (row->col, total)."""
    n = cost.shape[0]
    INF = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[col] = row matched to col (1-based)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    sigma = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        sigma[p[j] - 1] = j - 1
    total = float(sum(cost[i, sigma[i]] for i in range(n)))
    return sigma, total, u[1:], v[1:]


def assignment_cost(cost: np.ndarray) -> float:
    cost = np.asarray(cost, dtype=float)
    if cost.shape[0] == 0:
        return 0.0
    return _solve(cost)[1]


def _has_perfect_matching(adj: np.ndarray, rows: list, cols: set) -> bool:
    """Kuhn's augmenting paths restricted to ``rows`` x ``cols``."""
    match = {}

    def augment(r, seen):
        for c in np.flatnonzero(adj[r]):
            if c not in cols or c in seen:
                continue
            seen.add(c)
            if c not in match or augment(match[c], seen):
                match[c] = r
                return True
        return False

    return all(augment(r, set()) for r in rows)


def hungarian(cost, tol: float = 1e-9) -> np.ndarray:
    """Optimal permutation ``sigma`` (row i -> column sigma[i]).

    Among optimal permutations (within ``tol`` relative) the
    lexicographically smallest one is returned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ContractError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    sigma, best, u, v = _solve(cost)
    # every optimal assignment uses only zero-reduced-cost edges of an optimal dual
    slack = tol * max(1.0, float(np.abs(cost).max()))
    tight = (cost - u[:, None] - v[None, :]) <= slack
    if tight.sum() == n:
        return sigma
    out = np.zeros(n, dtype=int)
    cols = set(range(n))
    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            if j in cols and _has_perfect_matching(tight, list(range(i + 1, n)), cols - {j}):
                out[i] = j
                cols.discard(j)
                break
        else:  # pragma: no cover - unreachable: sigma itself is feasible
            return sigma
    return out


def brute_force_assignment(cost) -> tuple:
    """Exhaustive minimum over all permutations; for tests and small n."""
    from itertools import permutations

    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    perms = np.array(list(permutations(range(n))), dtype=int)
    totals = cost[np.arange(n), perms].sum(axis=1)
    k = int(np.argmin(totals))
    return perms[k], float(totals[k])
