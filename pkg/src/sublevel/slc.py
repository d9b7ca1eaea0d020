"""Exact single-linkage clustering via Prim's minimum spanning tree.

Merge heights of single linkage are the MST edge weights in ascending order;
each merge records the MST edge that realises it, which is the boundary pair
used later by the interpolation rescue.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import UnionFind
from .metric import CallablePoints


@dataclass(frozen=True)
class Dendrogram:
    """Single-linkage merges over ``n`` items.

    Merge ``t`` joins clusters ``a[t]`` and ``b[t]`` (ids ``< n`` are items,
    ``n + s`` is the cluster made by merge ``s``) at height ``heights[t]``;
    ``pairs[t]`` is the item pair realising that height.
    """

    n: int
    a: np.ndarray
    b: np.ndarray
    heights: np.ndarray
    pairs: np.ndarray

    @property
    def merges(self) -> list[tuple[int, int, float, tuple[int, int]]]:
        return [
            (int(self.a[t]), int(self.b[t]), float(self.heights[t]), (int(self.pairs[t, 0]), int(self.pairs[t, 1])))
            for t in range(len(self.heights))
        ]


@dataclass
class Cluster:
    members: np.ndarray
    max_nnd: float


@dataclass
class RingPartition:
    """Clusters of one empirical level set.

    ``split_pairs`` holds the boundary pair of every merge that was undone,
    ``rescued`` the ones kept only because of the interpolation rescue.
    """

    clusters: list[Cluster]
    ring: int = -1
    split_pairs: list[tuple[int, int]] = field(default_factory=list)
    rescued: list[tuple[int, int]] = field(default_factory=list)
    K_L: int = 1
    K_H: int = 1
    K_upper: int = 1

    @property
    def K(self) -> int:
        return len(self.clusters)


def minimum_spanning_tree(points) -> tuple[np.ndarray, np.ndarray]:
    """Prim's algorithm with O(n) memory. Returns ``(edges (n-1, 2), weights)``.

    ``points`` must provide ``len()`` and ``dist_all(i)`` (distances from item
    ``i`` to every item). Ties go to the smallest index.
    """
    n = len(points)
    if n == 0:
        raise ValueError("no items to cluster")
    edges = np.empty((max(n - 1, 0), 2), dtype=np.int64)
    weights = np.empty(max(n - 1, 0))
    if n == 1:
        return edges, weights
    outside = np.ones(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.zeros(n, dtype=np.int64)
    cur = 0
    outside[0] = False
    for step in range(n - 1):
        d = points.dist_all(cur)
        upd = outside & (d < best)
        best[upd] = d[upd]
        parent[upd] = cur
        nxt = int(np.argmin(np.where(outside, best, np.inf)))
        edges[step] = (parent[nxt], nxt)
        weights[step] = best[nxt]
        outside[nxt] = False
        cur = nxt
    return edges, weights


def single_linkage(items, distance_fn: Callable | None = None) -> Dendrogram:
    """Single-linkage dendrogram.

    ``items`` is either a point set from :mod:`sublevel.metric` or a plain
    sequence together with ``distance_fn``. Merges are ordered by height, ties
    broken by the smaller (sorted) item pair.
    """
    points = items if distance_fn is None else CallablePoints(items, distance_fn)
    n = len(points)
    edges, weights = minimum_spanning_tree(points)
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    order = np.lexsort((hi, lo, weights))
    uf = UnionFind(n)
    label = list(range(n))  # union-find root -> current cluster id
    a = np.empty(n - 1, dtype=np.int64)
    b = np.empty(n - 1, dtype=np.int64)
    pairs = np.empty((n - 1, 2), dtype=np.int64)
    for t, e in enumerate(order):
        i, j = int(lo[e]), int(hi[e])
        ri, rj = uf.find(i), uf.find(j)
        ca, cb = sorted((label[ri], label[rj]))
        a[t], b[t] = ca, cb
        pairs[t] = (i, j)
        label[uf.union(ri, rj)] = n + t
    return Dendrogram(n=n, a=a, b=b, heights=weights[order].copy(), pairs=pairs)


def components_without(n: int, pairs: np.ndarray, heights: np.ndarray, active: np.ndarray) -> list[Cluster]:
    """Connected components using only the ``active`` merge edges.

    Clusters are ordered by their smallest member; ``max_nnd`` is the heaviest
    active edge inside the cluster (0 for singletons).
    """
    uf = UnionFind(n)
    for t in np.flatnonzero(active):
        uf.union(int(pairs[t, 0]), int(pairs[t, 1]))
    roots = np.fromiter((uf.find(i) for i in range(n)), dtype=np.int64, count=n)
    top = {}
    for t in np.flatnonzero(active):
        r = roots[pairs[t, 0]]
        top[r] = max(top.get(r, 0.0), float(heights[t]))
    _, first, inv = np.unique(roots, return_index=True, return_inverse=True)
    order = np.argsort(first)
    out = []
    for c in order:
        members = np.flatnonzero(inv == c)
        out.append(Cluster(members=members, max_nnd=top.get(roots[members[0]], 0.0)))
    return out


def cut(dendrogram: Dendrogram, K: int) -> RingPartition:
    """Undo the last ``K - 1`` merges."""
    n = dendrogram.n
    if not 1 <= K <= n:
        raise ValueError(f"K={K} out of range 1..{n}")
    active = np.zeros(n - 1, dtype=bool)
    active[: n - K] = True
    clusters = components_without(n, dendrogram.pairs, dendrogram.heights, active)
    undone = [tuple(int(v) for v in dendrogram.pairs[t]) for t in range(n - K, n - 1)]
    return RingPartition(clusters=clusters, split_pairs=undone, K_L=K, K_H=K, K_upper=K)


def set_to_set_nnd(A: Sequence[int], B: Sequence[int], points, distance_fn: Callable | None = None):
    """Smallest cross distance between item sets ``A`` and ``B`` and its argmin pair.

    With ``distance_fn`` given, ``points`` is a plain item sequence; ties go to
    the lexicographically smallest ``(a, b)``.
    """
    A = np.asarray(A, dtype=np.int64)
    B = np.asarray(B, dtype=np.int64)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("set_to_set_nnd needs two nonempty sets")
    if distance_fn is not None:
        points = CallablePoints(points, distance_fn)
    if hasattr(points, "nearest"):
        d, i, j = points.nearest(A, B)
        return d, (int(A[i]), int(B[j]))
    D = points.cross(A, B)
    flat = int(np.argmin(D))
    i, j = divmod(flat, len(B))
    return float(D[i, j]), (int(A[i]), int(B[j]))
