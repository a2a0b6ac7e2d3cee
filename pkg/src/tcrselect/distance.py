"""Edit-distance and sequence-identity kernels shared by dedup and splitting."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        append = current.append
        for j, cb in enumerate(b, start=1):
            cost = previous[j - 1] + (ca != cb)
            dele = previous[j] + 1
            ins = current[j - 1] + 1
            append(cost if cost < dele and cost < ins else (dele if dele < ins else ins))
        previous = current
    return previous[-1]


def levenshtein_bounded(a: str, b: str, limit: int) -> int:
    """Edit distance if it is <= limit, else limit + 1. Banded DP, O(len * limit)."""
    if limit < 0:
        raise ValueError("limit must be >= 0")
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if abs(la - lb) > limit:
        return limit + 1
    if lb > la:
        a, b, la, lb = b, a, lb, la
    if lb == 0:
        return la
    cap = limit + 1
    previous = [j if j <= limit else cap for j in range(lb + 1)]
    for i in range(1, la + 1):
        lo = max(1, i - limit)
        hi = min(lb, i + limit)
        current = [cap] * (lb + 1)
        if i <= limit:
            current[0] = i
        ca = a[i - 1]
        best = current[0]
        for j in range(lo, hi + 1):
            v = previous[j - 1] + (ca != b[j - 1])
            dele = previous[j] + 1
            if dele < v:
                v = dele
            ins = current[j - 1] + 1
            if ins < v:
                v = ins
            if v > cap:
                v = cap
            current[j] = v
            if v < best:
                best = v
        if best >= cap:
            return cap
        previous = current
    return previous[lb] if previous[lb] <= limit else cap


def identity(a: str, b: str) -> float:
    """1 - levenshtein / max length. Two empty strings are identical (1.0)."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def max_edits_for_identity(threshold: float, longest: int) -> int:
    # identity >= t  <=>  distance <= (1-t)*longest; 1e-9 snap so decimal
    # thresholds (0.9 on length 20 -> 2) are not shifted by binary float error.
    return math.floor((1.0 - threshold) * longest + 1e-9)


def identity_at_least(a: str, b: str, threshold: float) -> bool:
    """True when identity(a, b) >= threshold, via the banded kernel."""
    longest = max(len(a), len(b))
    if longest == 0:
        return True
    allowed = max_edits_for_identity(threshold, longest)
    if abs(len(a) - len(b)) > allowed:
        return False
    return levenshtein_bounded(a, b, allowed) <= allowed


class _UnionFind:
    __slots__ = ("parent", "rank")

    def __init__(self, n: int) -> None:
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return
        if self.rank[rx] < self.rank[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        if self.rank[rx] == self.rank[ry]:
            self.rank[rx] += 1


def _edges_for_rows(strings: Sequence[str], lo: int, hi: int, threshold: float) -> list[tuple[int, int]]:
    edges = []
    n = len(strings)
    for i in range(lo, hi):
        si = strings[i]
        for j in range(i + 1, n):
            if identity_at_least(si, strings[j], threshold):
                edges.append((i, j))
    return edges


def cluster_by_identity(
    strings: Sequence[str], min_identity: float, workers: int = 1
) -> list[list[int]]:
    """Single-linkage components of the identity >= min_identity graph.

    Returns index clusters ordered by smallest member. Cross-cluster pairs are
    guaranteed identity < min_identity. workers > 1 fans the pairwise scan out
    over row chunks; the reduction is order-stable so results match serial runs.
    """
    if not 0.0 < min_identity <= 1.0:
        raise ValueError("min_identity must be in (0, 1]")
    n = len(strings)
    uf = _UnionFind(n)
    if workers > 1 and n > 2 * workers:
        bounds = [round(k * n / workers) for k in range(workers + 1)]
        chunks = [(strings, bounds[k], bounds[k + 1], min_identity) for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for edges in pool.map(_edges_for_rows_star, chunks):
                for i, j in edges:
                    uf.union(i, j)
    else:
        for i, j in _edges_for_rows(strings, 0, n, min_identity):
            uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    return sorted(groups.values(), key=lambda members: members[0])


def _edges_for_rows_star(args: tuple) -> list[tuple[int, int]]:
    return _edges_for_rows(*args)
