"""Connected components of one empirical level set.

Within a connected region the single-linkage NNDs of roughly uniform samples
behave like an exponential (continuous) or geometric (discrete) sample, so the
between-component NNDs show up as outliers. The censored MLE of the mean,
recomputed while hiding the largest ``k`` NNDs, detects how many there are.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .metric import SegmentationPoints, interpolate_max_energy
from .slc import Cluster, RingPartition, components_without, single_linkage

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterParams:
    """Level-set clustering settings.

    ``complete_coverage`` declares that the samples enumerate the whole state
    space (e.g. every segmentation of a short sequence). Clusters are then the
    exact components under the space's minimum distance and no statistical
    model is used.
    """

    delta_L: float = 0.5
    delta_H: float = 0.95
    K_max: int = 100
    N_min: int = 50
    alpha: float = 10.0
    interp_points: int = 100
    interpolation: bool = False
    complete_coverage: bool = False

    def __post_init__(self):
        if not 0 < self.delta_L < self.delta_H < 1:
            raise ValueError("need 0 < delta_L < delta_H < 1")
        if self.K_max < 2:
            raise ValueError("K_max must be >= 2")
        if self.N_min < 0:
            raise ValueError("N_min must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.interp_points < 2:
            raise ValueError("interp_points must be >= 2")


class InsufficientSamples(ValueError):
    pass


def _censored_means(v: np.ndarray, ks: np.ndarray) -> np.ndarray:
    n = len(v)
    cs = np.cumsum(v)
    obs = n - ks
    return (cs[obs - 1] + ks * v[obs - 1]) / obs


def censored_exponential_theta(y, k: int) -> float:
    """MLE of an exponential mean when the largest ``k`` of ``y`` are censored.

    ``y`` is the full sorted sample; the censored values are only known to be
    at least ``y_(n-k)``.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    if not 0 <= k < n:
        raise ValueError(f"need 0 <= k < n, got k={k}, n={n}")
    return float(_censored_means(y, np.array([k]))[0])


def continuous_component_bounds(nnds, p: int, params: ClusterParams = ClusterParams()):
    """Lower/upper bounds on the number of components from SLC merge heights.

    Returns ``(K_L, K_H, P)`` where ``P[k]`` is proportional to the inverse
    censored mean with ``k`` values hidden, normalised over ``k < K_max``. A
    bound that no ``k`` satisfies is reported as ``K_max`` with a warning.
    """
    r = np.asarray(nnds, dtype=float)
    n = len(r)
    if n <= params.K_max:
        raise InsufficientSamples(f"{n} NNDs, need more than K_max={params.K_max}")
    if p < 1:
        raise ValueError("dimension must be >= 1")
    y = np.sort(n * r**p)
    theta = _censored_means(y, np.arange(params.K_max))
    theta = np.maximum(theta, np.finfo(float).tiny)
    P = 1.0 / theta
    P /= P.sum()
    bounds = []
    for delta in (params.delta_L, params.delta_H):
        hit = np.flatnonzero(P > delta / params.K_max)
        if len(hit):
            bounds.append(1 + int(hit[0]))
        else:
            warnings.warn(f"no k passes delta={delta}; using K_max", RuntimeWarning, stacklevel=2)
            bounds.append(params.K_max)
    return bounds[0], bounds[1], P


def censored_geometric_estimates(d, k: int) -> tuple[float, float]:
    """``(beta_k, theta_k)`` for a geometric sample with the largest ``k`` censored."""
    d = np.asarray(d, dtype=float)
    n = len(d)
    if not 0 <= k < n:
        raise ValueError(f"need 0 <= k < n, got k={k}, n={n}")
    s = float(np.sum(d[: n - k]) + k * d[n - k - 1])
    if s == 0:
        return 0.0, 0.0
    return s / (s + (n - k)), s / (n - k)


def discrete_component_upper_bound(d, params: ClusterParams = ClusterParams()) -> int:
    """Upper bound ``K_H`` from gaps in the sorted integer NNDs.

    ``k`` ranges over ``1..K_max-1`` (fewer when the sample is small). A gap
    whose top NND is at least 2 and whose size exceeds ``alpha`` censored
    means counts as a component break.
    """
    d = np.sort(np.asarray(d, dtype=float))
    n = len(d)
    kmax = min(params.K_max - 1, n - 1)
    if kmax < 1:
        return 1
    ks = np.arange(1, kmax + 1)
    theta = _censored_means(d, ks)
    gap = d[n - ks] - d[n - ks - 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(theta > 0, gap / np.where(theta > 0, theta, 1.0), np.where(gap > 0, np.inf, 0.0))
    ok = (gamma > params.alpha) & (d[n - ks] >= 2)
    return 1 + (int(ks[ok].max()) if ok.any() else 0)


def _side_sizes(n, pairs, active, weights, i, j):
    rows = pairs[active, 0]
    cols = pairs[active, 1]
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    size = np.bincount(labels, weights=weights)
    return size[labels[i]], size[labels[j]]


def partition_ring(
    points,
    params: ClusterParams = ClusterParams(),
    K_prev: int = 0,
    energy_fn=None,
    u_upper: float = np.inf,
    weights=None,
    ring: int = -1,
) -> RingPartition:
    """Partition the (distinct) states of one ring into clusters.

    ``weights`` are multiplicities of the distinct states; pruning sizes use
    them. ``energy_fn`` (vectorised over coordinates) enables the
    interpolation rescue when ``params.interpolation`` is set.
    """
    n = len(points)
    if n == 0:
        raise ValueError("empty ring")
    if K_prev < 0:
        raise ValueError("K_prev must be >= 0")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    discrete = isinstance(points, SegmentationPoints)
    min_d = points.min_distance
    if n == 1:
        return RingPartition(clusters=[Cluster(np.arange(1), 0.0)], ring=ring)
    dend = single_linkage(points)
    h, pairs = dend.heights, dend.pairs
    if params.complete_coverage:
        active = h <= min_d
        clusters = components_without(n, pairs, h, active)
        split = [tuple(int(v) for v in pairs[t]) for t in np.flatnonzero(~active)]
        return RingPartition(clusters, ring, split, [], len(clusters), len(clusters), len(clusters))

    if discrete:
        extra = int(round(w.sum())) - n
        d = np.concatenate([np.zeros(max(extra, 0)), h])
        K_L, K_H = 1, discrete_component_upper_bound(d, params)
    else:
        try:
            K_L, K_H, _ = continuous_component_bounds(h, points.X.shape[1], params)
        except InsufficientSamples:
            log.warning("ring %d: %d distinct samples <= K_max, kept as one cluster", ring, n)
            clusters = components_without(n, pairs, h, np.ones(n - 1, dtype=bool))
            return RingPartition(clusters, ring)
    K_up = min(max(K_H, K_prev, K_L), n)

    removed = np.zeros(n - 1, dtype=bool)
    split, rescued = [], []
    for rank in range(K_up - 1):
        t = n - 2 - rank
        if h[t] <= min_d:
            break
        i, j = int(pairs[t, 0]), int(pairs[t, 1])
        if rank < K_L - 1:
            removed[t] = True
            split.append((i, j))
            continue
        trial = ~removed
        trial[t] = False
        sa, sb = _side_sizes(n, pairs, trial, w, i, j)
        keep = False
        if min(sa, sb) > params.N_min:
            keep = True
        elif max(sa, sb) > params.N_min and params.interpolation and energy_fn is not None and not discrete:
            peak = interpolate_max_energy(points.X[i], points.X[j], energy_fn, params.interp_points)
            if peak > u_upper:
                keep = True
                rescued.append((i, j))
        if keep:
            removed[t] = True
            split.append((i, j))
    clusters = components_without(n, pairs, h, ~removed)
    return RingPartition(clusters, ring, split, rescued, K_L, K_H, K_up)
