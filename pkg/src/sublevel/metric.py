"""Distances and connectedness for continuous boxes and segmentation spaces.

Besides the scalar distance functions, this module provides *point sets*:
thin wrappers around a batch of states that answer the vectorised queries the
clustering code needs (one-to-all rows, cross blocks, threshold tests).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.spatial import cKDTree

from .core import Segmentation


@dataclass(frozen=True)
class ContinuousSpace:
    """Box ``[lo, hi]`` in R^p with the Euclidean metric."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or len(lo) == 0:
            raise ValueError("lo and hi must be equal-length vectors")
        if np.any(lo >= hi):
            raise ValueError("need lo < hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "ContinuousSpace":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self) -> int:
        return len(self.lo)

    min_distance = 0.0

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def points(self, coords) -> "EuclideanPoints":
        return EuclideanPoints(coords)


@dataclass(frozen=True)
class SegmentationSpace:
    """Segmentations of a length-``L`` sequence with at most ``N`` change points."""

    L: int
    N: int

    def __post_init__(self):
        if not 1 <= self.N < self.L:
            raise ValueError("need 1 <= N < L")

    dim = None
    # distinct segmentations are at least one position apart
    min_distance = 1.0

    def points(self, segs: Sequence[Segmentation]) -> "SegmentationPoints":
        return SegmentationPoints(segs)


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def segmentation_distance(Z: Segmentation, X: Segmentation) -> int:
    """``L`` minus the largest total overlap of a one-to-one segment matching.

    Overlapping pairs of ordered disjoint intervals cannot cross, so the best
    matching is monotone and an LCS-style table over the overlap matrix is exact.
    """
    if Z.seq_len != X.seq_len:
        raise ValueError("segmentations of different sequence lengths")
    zs, xs = Z.segments(), X.segments()
    prev = [0] * (len(xs) + 1)
    for a0, a1 in zs:
        cur = [0] * (len(xs) + 1)
        for j, (b0, b1) in enumerate(xs, 1):
            ov = max(0, min(a1, b1) - max(a0, b0))
            cur[j] = max(prev[j], cur[j - 1], prev[j - 1] + ov)
        prev = cur
    return Z.seq_len - prev[-1]


def neighbors_distance_one(Z: Segmentation) -> list[Segmentation]:
    """All valid segmentations at distance exactly one from ``Z`` (sorted)."""
    L, N = Z.seq_len, Z.max_points
    cps = list(Z.change_points)
    p = len(cps)
    out: set[tuple[int, ...]] = set()
    edges = [1] + cps + [L + 1]
    # shift one change point by one position
    for i in range(p):
        for s in (-1, 1):
            z = cps[i] + s
            if edges[i] < z < edges[i + 2] and 2 <= z <= L:
                out.add(tuple(cps[:i] + [z] + cps[i + 1 :]))
    # split a length-1 segment off either end of a segment
    if p < N:
        for k in range(p + 1):
            a, b = edges[k], edges[k + 1]
            if b - a >= 2:
                for z in (a + 1, b - 1):
                    out.add(tuple(sorted(cps + [z])))
    # merge a length-1 segment into a neighbour by deleting one of its change points
    for i in range(p):
        left_len = edges[i + 1] - edges[i]
        right_len = edges[i + 2] - edges[i + 1]
        if left_len == 1 or right_len == 1:
            out.add(tuple(cps[:i] + cps[i + 1 :]))
    out.discard(tuple(cps))
    return [Segmentation(c, L, N) for c in sorted(out)]


def interpolate_max_energy(x_a, x_b, energy_fn: Callable, n_points: int = 100) -> float:
    """Largest energy over ``n_points`` evenly spaced points on the closed segment.

    ``energy_fn`` must accept an ``(n, p)`` array and return ``n`` energies.
    """
    if n_points < 2:
        raise ValueError("need at least two interpolation points")
    x_a = np.atleast_1d(np.asarray(x_a, dtype=float))
    x_b = np.atleast_1d(np.asarray(x_b, dtype=float))
    t = np.linspace(0.0, 1.0, n_points)[:, None]
    # reversed weights keep the point set exactly symmetric under swapping ends
    pts = t[::-1] * x_a + t * x_b
    return float(np.max(energy_fn(pts)))


# --- batched point sets ------------------------------------------------------


class EuclideanPoints:
    """Coordinates ``(n, p)`` with Euclidean distance queries."""

    min_distance = 0.0

    def __init__(self, coords):
        X = np.asarray(coords, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.X = np.ascontiguousarray(X)

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx) -> "EuclideanPoints":
        return EuclideanPoints(self.X[np.asarray(idx)])

    def dist_all(self, i: int) -> np.ndarray:
        diff = self.X - self.X[i]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def cross(self, ia, ib) -> np.ndarray:
        A, B = self.X[np.asarray(ia)], self.X[np.asarray(ib)]
        d2 = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
        np.maximum(d2, 0.0, out=d2)
        return np.sqrt(d2)

    def probe(self, idx) -> "_KDProbe":
        return _KDProbe(self, idx)

    def unique(self):
        """Distinct rows (first-occurrence order), inverse map and multiplicities."""
        _, first, inv, counts = np.unique(self.X, axis=0, return_index=True, return_inverse=True, return_counts=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        return first[order], rank[inv.ravel()], counts[order]


class _KDProbe:
    """Exact threshold queries against a fixed subset via a k-d tree."""

    def __init__(self, points: EuclideanPoints, idx):
        self.points = points
        self.tree = cKDTree(points.X[np.asarray(idx)])

    def within(self, query_idx, t: float) -> bool:
        q = self.points.X[np.asarray(query_idx)]
        d, _ = self.tree.query(q, k=1, distance_upper_bound=np.nextafter(t, np.inf))
        return bool(np.any(d <= t))


@numba.njit(cache=True)
def _seg_dist(a, pa, b, pb, L):
    # sweep the merged boundaries; state = (current Z-segment used, current X-segment used)
    NEG = -(1 << 40)
    s00, s01, s10, s11 = 0, NEG, NEG, NEG
    i = 0
    j = 0
    pos = 1
    while pos <= L:
        na = a[i] if i < pa else L + 1
        nb = b[j] if j < pb else L + 1
        nxt = na if na < nb else nb
        w = nxt - pos
        # optionally match the piece [pos, nxt) if neither segment is used yet
        cand = s00 + w
        if cand > s11:
            s11 = cand
        adv_a = na == nxt
        adv_b = nb == nxt
        if adv_a and adv_b:
            best = max(max(s00, s01), max(s10, s11))
            s00, s01, s10, s11 = best, NEG, NEG, NEG
        elif adv_a:
            t0 = max(s00, s10)
            t1 = max(s01, s11)
            s00, s01, s10, s11 = t0, t1, NEG, NEG
        else:
            t0 = max(s00, s01)
            t1 = max(s10, s11)
            s00, s01, s10, s11 = t0, NEG, t1, NEG
        if adv_a:
            i += 1
        if adv_b:
            j += 1
        pos = nxt
    best = max(max(s00, s01), max(s10, s11))
    return L - best


@numba.njit(cache=True)
def _seg_dist_all(C, P, i, L):
    n = C.shape[0]
    out = np.empty(n)
    a = C[i]
    pa = P[i]
    for k in range(n):
        out[k] = _seg_dist(a, pa, C[k], P[k], L)
    return out


@numba.njit(cache=True)
def _seg_cross(C, P, ia, ib, L):
    out = np.empty((len(ia), len(ib)))
    for x in range(len(ia)):
        u = ia[x]
        for y in range(len(ib)):
            v = ib[y]
            out[x, y] = _seg_dist(C[u], P[u], C[v], P[v], L)
    return out


@numba.njit(cache=True)
def _seg_within(C, P, ia, ib, L, t):
    for x in range(len(ia)):
        u = ia[x]
        for y in range(len(ib)):
            v = ib[y]
            # changing the segment count by one costs at least one position
            if abs(P[u] - P[v]) > t:
                continue
            if _seg_dist(C[u], P[u], C[v], P[v], L) <= t:
                return True
    return False


@numba.njit(cache=True)
def _seg_nearest(C, P, ia, ib, L):
    best = np.inf
    bu = -1
    bv = -1
    for x in range(len(ia)):
        u = ia[x]
        for y in range(len(ib)):
            v = ib[y]
            if abs(P[u] - P[v]) >= best:
                continue
            d = _seg_dist(C[u], P[u], C[v], P[v], L)
            if d < best:
                best = d
                bu = x
                bv = y
    return best, bu, bv


class SegmentationPoints:
    """Segmentations packed into a padded int array for compiled distance loops."""

    min_distance = 1.0

    def __init__(self, segs: Sequence[Segmentation]):
        segs = list(segs)
        if not segs:
            raise ValueError("empty segmentation set")
        L = segs[0].seq_len
        if any(s.seq_len != L for s in segs):
            raise ValueError("segmentations of different sequence lengths")
        width = max(1, max(s.p for s in segs))
        C = np.full((len(segs), width), L + 1, dtype=np.int64)
        P = np.zeros(len(segs), dtype=np.int64)
        for k, s in enumerate(segs):
            P[k] = s.p
            C[k, : s.p] = s.change_points
        self.segs = segs
        self.C, self.P, self.L = C, P, L

    def __len__(self) -> int:
        return len(self.segs)

    def subset(self, idx) -> "SegmentationPoints":
        return SegmentationPoints([self.segs[i] for i in np.asarray(idx)])

    def dist_all(self, i: int) -> np.ndarray:
        return _seg_dist_all(self.C, self.P, int(i), self.L)

    def cross(self, ia, ib) -> np.ndarray:
        return _seg_cross(self.C, self.P, np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64), self.L)

    def probe(self, idx) -> "_SegProbe":
        return _SegProbe(self, idx)

    def nearest(self, ia, ib):
        d, i, j = _seg_nearest(self.C, self.P, np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64), self.L)
        return float(d), int(i), int(j)

    def unique(self):
        index: dict[tuple[int, ...], int] = {}
        first, inv = [], np.empty(len(self.segs), dtype=np.int64)
        for k, s in enumerate(self.segs):
            u = index.get(s.change_points)
            if u is None:
                u = index[s.change_points] = len(first)
                first.append(k)
            inv[k] = u
        return np.asarray(first, dtype=np.int64), inv, np.bincount(inv, minlength=len(first))


class _SegProbe:
    def __init__(self, points: SegmentationPoints, idx):
        self.points = points
        self.idx = np.asarray(idx, dtype=np.int64)

    def within(self, query_idx, t: float) -> bool:
        pts = self.points
        return bool(_seg_within(pts.C, pts.P, np.asarray(query_idx, dtype=np.int64), self.idx, pts.L, float(t)))


class CallablePoints:
    """Arbitrary items with a user-supplied symmetric distance (pure Python, slow)."""

    min_distance = 0.0

    def __init__(self, items: Sequence, distance_fn: Callable):
        self.items = list(items)
        self.fn = distance_fn

    def __len__(self) -> int:
        return len(self.items)

    def dist_all(self, i: int) -> np.ndarray:
        a = self.items[i]
        return np.array([self.fn(a, b) for b in self.items], dtype=float)

    def cross(self, ia, ib) -> np.ndarray:
        return np.array([[self.fn(self.items[u], self.items[v]) for v in ib] for u in ia], dtype=float)
