"""Test energies, local optimisers and brute-force reference trees.

The oracles here deliberately avoid the clustering code: the grid oracle
labels thresholded rasters, the exhaustive oracle joins distance-1 pairs of
an enumerated discrete space.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from .core import DosEstimate, EnergyGrid, Segmentation, make_rng
from .landscape import LandscapeTree, Node
from .metric import interpolate_max_energy, neighbors_distance_one, segmentation_distance
from .samplers import ALPHABET, SegmentationModel

log = logging.getLogger(__name__)


# --- multivariate t posterior ---------------------------------------------------------


@dataclass(frozen=True)
class TDataset:
    Y: np.ndarray
    nu: float = 5.0

    @property
    def p(self) -> int:
        return self.Y.shape[1]


def build_t_data(A: float = 40.0, a1: float = 4.0, a2: float = 4.0, a3: float = 4.0) -> TDataset:
    """Three pairs of points in 6-D; pair ``j`` sits near one of three planes."""
    if not all(A > a > 0 for a in (a1, a2, a3)):
        raise ValueError("need A > a_j > 0")
    Y = np.array(
        [
            [A, A, a1, a1, 0, 0],
            [A, A, 0, 0, a1, a1],
            [a2, a2, A, A, 0, 0],
            [0, 0, A, A, a2, a2],
            [a3, a3, 0, 0, A, A],
            [0, 0, a3, a3, A, A],
        ],
        dtype=float,
    )
    return TDataset(Y)


def t_posterior_energy(mu, data: TDataset) -> np.ndarray | float:
    """Flat-prior posterior energy of the location; broadcasts over leading axes."""
    mu = np.asarray(mu, dtype=float)
    sq = np.sum((mu[..., None, :] - data.Y) ** 2, axis=-1)
    h = 0.5 * (data.nu + data.p) * np.sum(np.log1p(sq / data.nu), axis=-1)
    return float(h) if h.ndim == 0 else h


def t_posterior_gradient(mu, data: TDataset) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    diff = mu[..., None, :] - data.Y
    sq = np.sum(diff**2, axis=-1)
    coef = (data.nu + data.p) / (data.nu + sq)
    return np.sum(coef[..., None] * diff, axis=-2)


# --- layered separable surrogate ---------------------------------------------------------

LAYERED_BOX = (-1.5, 1.5)
LAYERED_DIM = 4


def layered_g(t):
    t = np.asarray(t, dtype=float)
    return t**2 + 2.0 * (1.0 - np.cos(2 * np.pi * t))


def _layered_dg(t):
    return 2 * t + 4 * np.pi * np.sin(2 * np.pi * t)


def _layered_d2g(t):
    return 2 + 8 * np.pi**2 * np.cos(2 * np.pi * t)


def layered_multimodal_energy(x) -> np.ndarray | float:
    """Sum of the one-dimensional double-well profile; ``+inf`` outside the box."""
    x = np.asarray(x, dtype=float)
    lo, hi = LAYERED_BOX
    h = np.sum(layered_g(x), axis=-1)
    out = np.any((x < lo) | (x > hi), axis=-1)
    h = np.where(out, np.inf, h)
    return float(h) if np.ndim(h) == 0 else h


def layered_gradient(x) -> np.ndarray:
    return _layered_dg(np.asarray(x, dtype=float))


def layered_basin(x) -> np.ndarray:
    """Local minimum whose basin of attraction contains ``x`` (exact: the profile is separable)."""
    c = layered_constants()
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < c.t_saddle, 0.0, np.sign(x) * c.t_star)


def _newton(f, df, x0, tol=1e-14, max_iter=100):
    x = float(x0)
    for _ in range(max_iter):
        step = f(x) / df(x)
        x -= step
        if abs(step) < tol:
            return x
    raise RuntimeError("Newton iteration did not converge")


@dataclass(frozen=True)
class LayeredConstants:
    t_star: float  # positive interior minimiser of the profile
    well: float  # profile value at t_star
    t_saddle: float  # profile maximiser between 0 and t_star
    saddle: float

    def minimum_energy(self, layer: int) -> float:
        return (layer - 1) * self.well

    def barrier(self, layer: int) -> float:
        """Barrier between layer ``layer`` and ``layer - 1`` (``layer >= 2``)."""
        return (layer - 2) * self.well + self.saddle


def layered_constants() -> LayeredConstants:
    t_star = _newton(_layered_dg, _layered_d2g, 1.0)
    t_sad = _newton(_layered_dg, _layered_d2g, 0.5)
    return LayeredConstants(t_star, float(layered_g(t_star)), t_sad, float(layered_g(t_sad)))


def layered_minima() -> tuple[np.ndarray, np.ndarray]:
    """All ``3**4`` local minima and their layer (1 + number of nonzero coordinates)."""
    c = layered_constants()
    pts = np.array(list(itertools.product((-c.t_star, 0.0, c.t_star), repeat=LAYERED_DIM)))
    layer = 1 + np.count_nonzero(pts, axis=1)
    return pts, layer


# --- seven-mode 2-D mixture -------------------------------------------------------------

SEVEN_CENTERS = np.array(
    [
        [0.0, 0.0],
        [4.0, 5.0],
        [6.4, 5.0],
        [5.2, 2.9],
        [3.6, -6.2],
        [6.2, -6.2],
        [4.9, -4.0],
    ]
)
SEVEN_WEIGHTS = np.array([0.34, 0.13, 0.10, 0.08, 0.12, 0.09, 0.07])
SEVEN_SCALES = np.array([0.8, 0.6, 0.6, 0.6, 0.65, 0.65, 0.65])
SEVEN_BOX = (np.array([-4.0, -10.0]), np.array([10.0, 9.0]))


def seven_mode_energy(x) -> np.ndarray | float:
    """Negative log density of a fixed isotropic Gaussian mixture in 2-D."""
    x = np.asarray(x, dtype=float)
    sq = np.sum((x[..., None, :] - SEVEN_CENTERS) ** 2, axis=-1)
    logc = np.log(SEVEN_WEIGHTS) - 2 * np.log(SEVEN_SCALES) - np.log(2 * np.pi) - sq / (2 * SEVEN_SCALES**2)
    h = -logsumexp(logc, axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def seven_mode_gradient(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    diff = x[..., None, :] - SEVEN_CENTERS
    sq = np.sum(diff**2, axis=-1)
    logc = np.log(SEVEN_WEIGHTS) - 2 * np.log(SEVEN_SCALES) - np.log(2 * np.pi) - sq / (2 * SEVEN_SCALES**2)
    r = np.exp(logc - logsumexp(logc, axis=-1, keepdims=True))
    return np.sum((r / SEVEN_SCALES**2)[..., None] * diff, axis=-2)


def double_well_energy(x) -> np.ndarray | float:
    """``(x^2 - 1)^2`` on the first coordinate plus squares of the rest."""
    x = np.asarray(x, dtype=float)
    h = (x[..., 0] ** 2 - 1) ** 2 + np.sum(x[..., 1:] ** 2, axis=-1)
    return float(h) if np.ndim(h) == 0 else h


# --- local optimisation -----------------------------------------------------------------


@dataclass(frozen=True)
class DescentResult:
    x: np.ndarray
    energy: float
    converged: bool
    iterations: int


def gradient_descent(
    energy_fn: Callable, grad_fn: Callable, x0, tol: float = 1e-8, max_iter: int = 100000, step0: float = 1.0
) -> DescentResult:
    """Steepest descent with Armijo backtracking until the gradient norm drops below ``tol``."""
    x = np.asarray(x0, dtype=float).copy()
    h = float(energy_fn(x))
    step = step0
    for it in range(max_iter):
        g = np.asarray(grad_fn(x), dtype=float)
        gn = float(np.linalg.norm(g))
        if gn < tol:
            return DescentResult(x, h, True, it)
        step = min(step * 2.0, 1e6)
        while True:
            xn = x - step * g
            hn = float(energy_fn(xn))
            if hn <= h - 1e-4 * step * gn * gn:
                break
            # near the minimum the decrease drops below rounding; fall back to the gradient norm
            if abs(hn - h) <= 1e-13 * max(1.0, abs(h)) and np.linalg.norm(grad_fn(xn)) < gn:
                break
            step *= 0.5
            if step < 1e-300:
                return DescentResult(x, h, False, it)
        x, h = xn, hn
    return DescentResult(x, h, False, max_iter)


def pairwise_barrier_approx(minima: Sequence, energy_fn: Callable, n_points: int = 100) -> np.ndarray:
    """Highest energy on the straight segment between every pair of points."""
    minima = [np.asarray(m, dtype=float) for m in minima]
    k = len(minima)
    if k < 2:
        raise ValueError("need at least two minima")
    B = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            B[i, j] = B[j, i] = interpolate_max_energy(minima[i], minima[j], energy_fn, n_points)
    return B


# --- change-point testbed ------------------------------------------------------------------

DNA_CHANGE_POINTS = (201, 401, 601, 801)


def dna_composition() -> np.ndarray:
    """Segment compositions: segment ``i < 5`` favours letter ``i``, the last is uniform."""
    theta = np.full((5, 4), 0.2)
    theta[np.arange(4), np.arange(4)] = 0.4
    theta[4] = 0.25
    return theta


def simulate_sequence(L: int, change_points: Sequence[int], theta, seed: int) -> str:
    """Letters drawn i.i.d. per segment from the rows of ``theta``."""
    theta = np.asarray(theta, dtype=float)
    cps = tuple(int(z) for z in change_points)
    if any(not 2 <= z <= L for z in cps) or any(b <= a for a, b in zip(cps, cps[1:])):
        raise ValueError("change points must increase strictly within 2..L")
    if theta.ndim != 2 or theta.shape != (len(cps) + 1, 4):
        raise ValueError(f"theta must have shape ({len(cps) + 1}, 4)")
    if np.any(theta < 0) or not np.allclose(theta.sum(axis=1), 1.0):
        raise ValueError("rows of theta must be probability vectors")
    rng = make_rng(seed)
    bounds = (1,) + cps + (L + 1,)
    out = []
    for s in range(len(bounds) - 1):
        n = bounds[s + 1] - bounds[s]
        out.append(rng.choice(4, size=n, p=theta[s]))
    codes = np.concatenate(out)
    return "".join(ALPHABET[c] for c in codes)


def _model(sequence, N, alpha):
    return sequence if isinstance(sequence, SegmentationModel) else SegmentationModel(sequence, N, alpha)


def verify_local_minimum(Z: Segmentation, sequence, N: int | None = None, alpha=(1.0, 1.0, 1.0, 1.0)) -> bool:
    """True iff every distance-1 neighbour has strictly higher energy."""
    model = _model(sequence, N if N is not None else Z.max_points, alpha)
    h = model.energy(Z)
    return all(model.energy(X) > h for X in neighbors_distance_one(Z))


def neighbor_descent(Z: Segmentation, sequence, N: int | None = None, alpha=(1.0, 1.0, 1.0, 1.0), max_steps: int = 100000) -> Segmentation:
    """Move to the best distance-1 neighbour while that lowers the energy.

    Ties go to the lexicographically smallest change-point tuple.
    """
    model = _model(sequence, N if N is not None else Z.max_points, alpha)
    h = model.energy(Z)
    for _ in range(max_steps):
        best, best_h = None, h
        for X in neighbors_distance_one(Z):
            hx = model.energy(X)
            if hx < best_h or (best is not None and hx == best_h and X.change_points < best.change_points):
                best, best_h = X, hx
        if best is None:
            return Z
        Z, h = best, best_h
    raise RuntimeError("descent did not terminate")


def enumerate_segmentations(L: int, N: int) -> list[Segmentation]:
    count = sum(math.comb(L - 1, k) for k in range(N + 1))
    if count > 1_000_000:
        raise ValueError(f"{count} segmentations is too many to enumerate")
    return [Segmentation(c, L, N) for k in range(N + 1) for c in itertools.combinations(range(2, L + 1), k)]


def enumerate_posterior(sequence, N: int, T: float = 1.0, alpha=(1.0, 1.0, 1.0, 1.0)):
    """All segmentations with their normalised tempered posterior probabilities."""
    model = _model(sequence, N, alpha)
    segs = enumerate_segmentations(model.L, N)
    logw = -model.energies(segs) / T
    return segs, np.exp(logw - logsumexp(logw))


# --- reference trees ------------------------------------------------------------------------


class _Forest:
    """Level-by-level component bookkeeping shared by both oracles."""

    def __init__(self):
        self.nodes: list[Node] = []

    def step(self, labels_now, prev_of, m, lower, best_state, counts):
        """``prev_of``: component -> list of previous node ids it contains."""
        out = {}
        for comp, prev in prev_of.items():
            prev = sorted(set(prev))
            if not prev:
                e, s = best_state(comp)
                node = Node(id=len(self.nodes), kind="leaf", energy=e, rep_state=s)
                self.nodes.append(node)
            elif len(prev) == 1:
                node = self.nodes[prev[0]]
            else:
                node = Node(id=len(self.nodes), kind="barrier", energy=float(lower), children=prev)
                for c in prev:
                    self.nodes[c].parent = node.id
                self.nodes.append(node)
            node.ring_counts[m] = counts(comp)
            node.ring_span = (m if node.ring_span is None else node.ring_span[0], m)
            out[comp] = node.id
        return out

    def finish(self, roots, grid) -> LandscapeTree:
        for node in self.nodes:
            node.member_count = sum(sum(self.nodes[k].ring_counts.values()) for k in _subtree(self.nodes, node.id))
        return LandscapeTree(nodes=self.nodes, roots=sorted(roots), grid=grid)


def _subtree(nodes, k):
    out, stack = [], [k]
    while stack:
        j = stack.pop()
        out.append(j)
        stack.extend(nodes[j].children)
    return out


def grid_tree_oracle(
    energy_fn: Callable, lo, hi, resolution: int, grid: EnergyGrid, expected_minima: int | None = None
) -> LandscapeTree:
    """Exact tree of a rasterised 2-D energy at the levels of ``grid``.

    Cells are pixel centres of a ``resolution`` x ``resolution`` raster;
    sublevel components use 4-connectivity.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (2,):
        raise ValueError("grid oracle is two-dimensional")
    axes = [lo[d] + (np.arange(resolution) + 0.5) * (hi[d] - lo[d]) / resolution for d in range(2)]
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    H = np.asarray(energy_fn(np.stack([X, Y], axis=-1)), dtype=float)
    forest = _Forest()
    prev_labels = np.zeros(H.shape, dtype=np.int64)
    prev_node: dict[int, int] = {}
    four = ndimage.generate_binary_structure(2, 1)
    for m, u in enumerate(grid.boundaries):
        labels, n = ndimage.label(H < u, structure=four)
        ring = (H < u) & (prev_labels == 0)
        prev_of = {c: [] for c in range(1, n + 1)}
        old = prev_labels > 0
        for comp, old_lab in set(zip(labels[old].tolist(), prev_labels[old].tolist())):
            prev_of[comp].append(prev_node[old_lab])

        def best_state(comp, labels=labels):
            idx = np.flatnonzero((labels == comp).ravel())
            k = idx[np.argmin(H.ravel()[idx])]
            return float(H.ravel()[k]), np.array([X.ravel()[k], Y.ravel()[k]])

        prev_node = forest.step(labels, prev_of, m, grid.lower(m), best_state, lambda c, labels=labels: int(np.sum(ring & (labels == c))))
        prev_labels = labels
    tree = forest.finish(prev_node.values(), grid)
    if expected_minima is not None and len(tree.leaves()) != expected_minima:
        log.warning("grid oracle found %d minima, expected %d; raise the resolution", len(tree.leaves()), expected_minima)
    return tree


def exhaustive_tree_oracle(sequence, N: int, alpha=(1.0, 1.0, 1.0, 1.0), grid: EnergyGrid | None = None, M: int | None = None) -> LandscapeTree:
    """Exact tree over all segmentations, joining states at distance one.

    Without ``grid``, every distinct energy gets its own level (needs ``M``
    unset) or an equal-count grid with ``M`` levels is built.
    """
    model = _model(sequence, N, alpha)
    segs = enumerate_segmentations(model.L, N)
    h = model.energies(segs)
    if grid is None:
        from .core import build_energy_grid

        grid = build_energy_grid(h, M if M is not None else len(np.unique(h)))
    n = len(segs)
    adj = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if segmentation_distance(segs[i], segs[j]) == 1:
                adj[i].append(j)
                adj[j].append(i)
    forest = _Forest()
    prev_node: dict[int, int] = {}
    prev_comp = np.full(n, -1)
    for m, u in enumerate(grid.boundaries):
        inside = h < u
        comp = np.full(n, -1)
        c = 0
        for s in range(n):
            if inside[s] and comp[s] < 0:
                stack = [s]
                comp[s] = c
                while stack:
                    v = stack.pop()
                    for w in adj[v]:
                        if inside[w] and comp[w] < 0:
                            comp[w] = c
                            stack.append(w)
                c += 1
        prev_of = {k: [] for k in range(c)}
        for s in np.flatnonzero(prev_comp >= 0):
            prev_of[comp[s]].append(prev_node[prev_comp[s]])
        ring = inside & (prev_comp < 0)

        def best_state(k, comp=comp):
            idx = np.flatnonzero(comp == k)
            b = idx[np.argmin(h[idx])]
            return float(h[b]), segs[b]

        prev_node = forest.step(comp, prev_of, m, grid.lower(m), best_state, lambda k, comp=comp: int(np.sum(ring & (comp == k))))
        prev_comp = comp
    return forest.finish(prev_node.values(), grid)


def quadrature_dos_1d(energy_fn: Callable, lo: float, hi: float, grid: EnergyGrid, n: int = 2_000_000) -> DosEstimate:
    """Ring volumes of a 1-D energy by midpoint quadrature, as a normalised DOS."""
    vol = ring_volumes_1d(energy_fn, lo, hi, grid, n)
    widths = grid.widths()
    omega = vol / widths
    omega /= np.sum(omega * widths)
    return DosEstimate(grid.midpoints(), widths, omega)


def ring_volumes_1d(energy_fn: Callable, lo: float, hi: float, grid: EnergyGrid, n: int = 2_000_000) -> np.ndarray:
    """Lebesgue measure of ``{x : h(x) in ring m}`` on ``[lo, hi]``; points above the grid are dropped."""
    dx = (hi - lo) / n
    x = lo + (np.arange(n) + 0.5) * dx
    h = np.asarray(energy_fn(x[:, None]), dtype=float)
    ring = np.searchsorted(grid.boundaries, h, side="right")
    keep = ring < grid.M
    return np.bincount(ring[keep], minlength=grid.M) * dx

