"""Exact balanced transportation problems by network simplex.

The bipartite graph rows -> columns is dense, so the spanning-tree basis is
kept as a set of cells with exactly ``m + n - 1`` members (zero-flow cells
allowed, which is how degeneracy is represented).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_PIVOTS = 10_000


class TransportError(ValueError):
    pass


@dataclass
class TransportPlan:
    flows: np.ndarray
    total_cost: float
    pivots: int = 0


def _northwest_corner(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int]]]:
    m, n = len(a), len(b)
    x = np.zeros((m, n))
    supply, demand = a.copy(), b.copy()
    basis = []
    i = j = 0
    while True:
        q = min(supply[i], demand[j])
        x[i, j] = q
        basis.append((i, j))
        supply[i] -= q
        demand[j] -= q
        if i == m - 1 and j == n - 1:
            break
        # move down when the row is spent, otherwise right; never leave the grid
        if (supply[i] <= demand[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return x, basis


def _potentials(cost: np.ndarray, basis: list[tuple[int, int]], m: int, n: int
                ) -> tuple[np.ndarray, np.ndarray, list[list[tuple[int, int]]]]:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append((m + j, i * n + j))
        adj[m + j].append((i, i * n + j))
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [0]
    while stack:
        node = stack.pop()
        for other, _ in adj[node]:
            if node < m:
                j = other - m
                if np.isnan(v[j]):
                    v[j] = cost[node, j] - u[node]
                    stack.append(other)
            elif np.isnan(u[other]):
                u[other] = cost[other, node - m] - v[node - m]
                stack.append(other)
    if np.isnan(u).any() or np.isnan(v).any():
        raise TransportError("basis is not a spanning tree")
    return u, v, adj


def _tree_path(adj, start: int, goal: int) -> list[int]:
    """Node path from ``start`` to ``goal`` in the basis tree."""
    parent = {start: -1}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for other, _ in adj[node]:
            if other not in parent:
                parent[other] = node
                stack.append(other)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def solve_transport(a, b, cost, tol: float = 1e-12) -> TransportPlan:
    """Minimum-cost flow moving mass ``a`` (rows) onto ``b`` (columns).

    ``a`` and ``b`` must be non-negative with equal totals.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        raise TransportError("empty support")
    if cost.shape != (m, n):
        raise TransportError(f"cost shape {cost.shape} != ({m}, {n})")
    if (a < 0).any() or (b < 0).any():
        raise TransportError("negative mass")
    if abs(a.sum() - b.sum()) > 1e-9 * max(1.0, a.sum()):
        raise TransportError("unbalanced problem")
    if m == 1 or n == 1:
        x = (b[None, :] if m == 1 else a[:, None]) * np.ones((m, n))
        return TransportPlan(x, float((x * cost).sum()), 0)

    x, basis = _northwest_corner(a, b)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    scale = max(1.0, float(np.abs(cost).max()))
    degenerate_run = 0
    for pivots in range(MAX_PIVOTS):
        u, v, adj = _potentials(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        if reduced.min() >= -tol * scale:
            return TransportPlan(x, float((x * cost).sum()), pivots)
        if degenerate_run > m + n:
            # Bland's rule: first improving cell; prevents cycling on degenerate pivots
            p, q = divmod(int(np.flatnonzero(reduced.reshape(-1) < -tol * scale)[0]), n)
        else:
            p, q = divmod(int(np.argmin(reduced)), n)

        path = _tree_path(adj, p, m + q)
        cells = [(p, q)]
        for k in range(len(path) - 1):
            r, c = path[k], path[k + 1]
            cells.append((r, c - m) if r < m else (c, r - m))
        minus = cells[1::2]
        theta = min(x[c] for c in minus)
        leave = min((c for c in minus if x[c] <= theta), key=lambda c: c[0] * n + c[1])
        for k, c in enumerate(cells):
            x[c] += theta if k % 2 == 0 else -theta
        x[leave] = 0.0
        degenerate_run = degenerate_run + 1 if theta == 0 else 0
        basis[basis.index(leave)] = (p, q)
        in_basis[leave] = False
        in_basis[p, q] = True
    raise TransportError(f"no optimum after {MAX_PIVOTS} pivots")
