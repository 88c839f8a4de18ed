"""Minimum-cost bipartite assignment."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

# batched matching enumerates permutations up to this many per problem
MAX_ENUMERATED = 40_320


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]  # (row, col), sorted by row
    total: float


def _check(cost) -> np.ndarray:
    c = np.asarray(cost, np.float64)
    if c.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost must be finite")
    return c


def _solve(a: np.ndarray) -> list[int]:
    """Column of every row for an n x m matrix with n <= m (shortest
    augmenting paths with row and column potentials)."""
    n, m = a.shape
    inf = math.inf
    u, v = [0.0] * (n + 1), [0.0] * (m + 1)
    p, way = [0] * (m + 1), [0] * (m + 1)
    for i in range(1, n + 1):
        p[0], j0 = i, 0
        minv, used = [inf] * (m + 1), [False] * (m + 1)
        while True:
            used[j0] = True
            i0, delta, j1 = p[j0], inf, 0
            row = a[i0 - 1]
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j], way[j] = cur, j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = [0] * n
    for j in range(1, m + 1):
        if p[j]:
            col[p[j] - 1] = j - 1
    return col


def _optimum(a: np.ndarray) -> float:
    if a.shape[0] == 0:
        return 0.0
    col = _solve(a)
    return float(sum(a[r, c] for r, c in enumerate(col)))


def _lexicographic(a: np.ndarray) -> list[int]:
    """Among optimal assignments (n <= m) the one whose column sequence is
    lexicographically smallest."""
    n, m = a.shape
    tol = 1e-12 * (1.0 + float(np.abs(a).max(initial=0.0)) * n)
    free = list(range(m))
    rest = _optimum(a)
    chosen = []
    for r in range(n):
        for c in free:
            cols = [j for j in free if j != c]
            sub = _optimum(a[r + 1:][:, cols])
            if a[r, c] + sub <= rest + tol:
                chosen.append(c)
                free, rest = cols, sub
                break
    return chosen


def hungarian_match(cost) -> Matching:
    """Minimum-total-cost matching that covers the smaller side of a
    rectangular cost matrix.  Ties are broken towards the lexicographically
    smallest sequence of partners of the smaller side."""
    c = _check(cost)
    n, m = c.shape
    if n <= m:
        pairs = tuple((r, col) for r, col in enumerate(_lexicographic(c)))
    else:
        pairs = tuple(sorted((row, col) for col, row in enumerate(_lexicographic(c.T))))
    total = 0.0
    for r, col in pairs:
        total += c[r, col]
    return Matching(pairs, float(total))


def brute_force_minimum(cost) -> float:
    """Exhaustive minimum over all matchings of the smaller side."""
    c = _check(cost)
    flip = c.shape[0] > c.shape[1]
    n, m = (c.shape[1], c.shape[0]) if flip else c.shape
    best = math.inf
    for perm in itertools.permutations(range(m), n):
        pairs = sorted((col, r) for r, col in enumerate(perm)) if flip else enumerate(perm)
        total = 0.0  # summed in row order of the original matrix
        for r, col in pairs:
            total += c[r, col]
        best = min(best, total)
    return best if n else 0.0


def batched_match(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Match a stack of (N, n, m) cost matrices at once.

    Returns (rows, cols, totals) where rows/cols are (N, min(n, m)) partner
    indices sorted by row and totals is (N,).  Results agree with
    ``hungarian_match`` on every matrix, tie-breaking included.
    """
    c = np.asarray(cost, np.float64)
    if c.ndim != 3:
        raise ValueError("cost must be (N, n, m)")
    transposed = c.shape[1] > c.shape[2]
    if transposed:
        c = c.transpose(0, 2, 1)
    big, n, m = c.shape
    if math.perm(m, n) > MAX_ENUMERATED:
        rows, cols, totals = [], [], []
        for mat in np.asarray(cost, np.float64):
            res = hungarian_match(mat)
            rows.append([p[0] for p in res.pairs])
            cols.append([p[1] for p in res.pairs])
            totals.append(res.total)
        return np.array(rows, np.int64).reshape(big, -1), np.array(cols, np.int64).reshape(big, -1), \
            np.array(totals)
    perms = np.array(list(itertools.permutations(range(m), n)), np.int64).reshape(-1, n)
    totals = np.zeros((big, len(perms)))
    for r in range(n):
        totals += c[:, r, :][:, perms[:, r]]
    best = np.argmin(totals, axis=1)  # first minimum is the lexicographically smallest
    partner = perms[best]
    small = np.broadcast_to(np.arange(n), partner.shape)
    if not transposed:
        return np.array(small), partner, totals[np.arange(big), best]
    order = np.argsort(partner, axis=1)
    return (np.take_along_axis(partner, order, 1), np.take_along_axis(small, order, 1),
            _row_order_totals(np.asarray(cost, np.float64), partner, small, order))


def _row_order_totals(cost, rows, cols, order) -> np.ndarray:
    # sum in row order, as hungarian_match does, so totals agree bit for bit
    r = np.take_along_axis(rows, order, 1)
    c = np.take_along_axis(cols, order, 1)
    total = np.zeros(len(cost))
    for k in range(r.shape[1]):
        total += cost[np.arange(len(cost)), r[:, k], c[:, k]]
    return total
