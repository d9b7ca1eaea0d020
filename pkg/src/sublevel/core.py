"""Shared domain types, energy grids, level-set assignment and subsampling.

Samples are kept in a columnar :class:`SampleSet` so that the clustering code
can work on arrays; :class:`Sample` is the per-record view used for file IO.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GridError(ValueError):
    """Raised when an energy grid cannot be built or does not cover a sample."""


def make_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by ``seed`` and an optional path.

    Substreams are derived with ``SeedSequence`` spawn keys, so
    ``make_rng(s, 3)`` is independent of ``make_rng(s, 4)`` and of ``make_rng(s)``.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, order=True)
class Segmentation:
    """Change points of a sequence of length ``seq_len``.

    A change point is the first (1-based) position of a new segment, so valid
    values are ``2..seq_len``. Segment ``k`` covers ``[z_{k-1}, z_k)`` with
    ``z_0 = 1`` and ``z_{p+1} = seq_len + 1``.
    """

    change_points: tuple[int, ...]
    seq_len: int
    max_points: int

    def __post_init__(self):
        cps = tuple(int(z) for z in self.change_points)
        object.__setattr__(self, "change_points", cps)
        if not 0 <= self.max_points < self.seq_len:
            raise ValueError(f"need 0 <= max_points < seq_len, got N={self.max_points}, L={self.seq_len}")
        if len(cps) > self.max_points:
            raise ValueError(f"{len(cps)} change points exceed max_points={self.max_points}")
        prev = 1
        for z in cps:
            if z <= prev or z > self.seq_len:
                raise ValueError(f"invalid change points {cps} for L={self.seq_len}")
            prev = z

    @property
    def p(self) -> int:
        return len(self.change_points)

    def segments(self) -> list[tuple[int, int]]:
        """Half-open ``(start, stop)`` position ranges, 1-based."""
        edges = (1,) + self.change_points + (self.seq_len + 1,)
        return [(edges[k], edges[k + 1]) for k in range(len(edges) - 1)]


@dataclass(frozen=True)
class Sample:
    """One Monte Carlo draw: a state (coordinates or a segmentation) with its energy."""

    state: np.ndarray | Segmentation
    energy: float
    chain_id: int = 0
    temperature: float = 1.0
    truncation: float | None = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not isinstance(self.state, Segmentation):
            coords = np.asarray(self.state, dtype=float).reshape(-1)
            if not np.all(np.isfinite(coords)):
                raise ValueError("continuous state has non-finite coordinates")
            object.__setattr__(self, "state", coords)


@dataclass
class SampleSet:
    """Columnar sample storage.

    Exactly one of ``coords`` (``(n, p)`` float array) or ``segmentations``
    (list of :class:`Segmentation`) is set. ``truncations`` uses ``-inf`` for
    "no truncation".
    """

    energies: np.ndarray
    chain_ids: np.ndarray
    temperatures: np.ndarray
    truncations: np.ndarray
    coords: np.ndarray | None = None
    segmentations: list[Segmentation] | None = None

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        n = len(self.energies)
        self.chain_ids = np.broadcast_to(np.asarray(self.chain_ids, dtype=np.int64), (n,)).copy()
        self.temperatures = np.broadcast_to(np.asarray(self.temperatures, dtype=float), (n,)).copy()
        trunc = np.atleast_1d(np.asarray(self.truncations))
        if trunc.dtype == object:
            trunc = np.array([-np.inf if t is None else t for t in trunc], dtype=float)
        trunc = trunc.astype(float)
        self.truncations = np.broadcast_to(trunc, (n,)).copy()
        if (self.coords is None) == (self.segmentations is None):
            raise ValueError("exactly one of coords / segmentations must be given")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=float)
            if self.coords.ndim == 1:
                self.coords = self.coords[:, None]
            if len(self.coords) != n:
                raise ValueError("coords and energies differ in length")
        elif len(self.segmentations) != n:
            raise ValueError("segmentations and energies differ in length")
        if np.any(self.temperatures <= 0):
            raise ValueError("temperatures must be positive")

    def __len__(self) -> int:
        return len(self.energies)

    @property
    def is_discrete(self) -> bool:
        return self.segmentations is not None

    def state(self, i: int) -> np.ndarray | Segmentation:
        return self.segmentations[i] if self.is_discrete else self.coords[i]

    def take(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            energies=self.energies[idx],
            chain_ids=self.chain_ids[idx],
            temperatures=self.temperatures[idx],
            truncations=self.truncations[idx],
            coords=None if self.coords is None else self.coords[idx],
            segmentations=None if self.segmentations is None else [self.segmentations[i] for i in idx],
        )

    @classmethod
    def concat(cls, parts: Sequence["SampleSet"]) -> "SampleSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("nothing to concatenate")
        if len({p.is_discrete for p in parts}) > 1:
            raise ValueError("cannot mix continuous and discrete samples")
        discrete = parts[0].is_discrete
        return cls(
            energies=np.concatenate([p.energies for p in parts]),
            chain_ids=np.concatenate([p.chain_ids for p in parts]),
            temperatures=np.concatenate([p.temperatures for p in parts]),
            truncations=np.concatenate([p.truncations for p in parts]),
            coords=None if discrete else np.vstack([p.coords for p in parts]),
            segmentations=[s for p in parts for s in p.segmentations] if discrete else None,
        )

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "SampleSet":
        samples = list(samples)
        if not samples:
            raise ValueError("empty sample list")
        kinds = {isinstance(s.state, Segmentation) for s in samples}
        if len(kinds) > 1:
            raise ValueError("mixed state kinds in one sample set")
        discrete = kinds.pop()
        return cls(
            energies=[s.energy for s in samples],
            chain_ids=[s.chain_id for s in samples],
            temperatures=[s.temperature for s in samples],
            truncations=[-np.inf if s.truncation is None else s.truncation for s in samples],
            coords=None if discrete else np.vstack([s.state for s in samples]),
            segmentations=[s.state for s in samples] if discrete else None,
        )

    def to_samples(self) -> list[Sample]:
        return [
            Sample(
                state=self.state(i),
                energy=float(self.energies[i]),
                chain_id=int(self.chain_ids[i]),
                temperature=float(self.temperatures[i]),
                truncation=None if self.truncations[i] == -np.inf else float(self.truncations[i]),
            )
            for i in range(len(self))
        ]


@dataclass(frozen=True)
class EnergyGrid:
    """Ring boundaries ``u_1 < ... < u_M``; ring ``m`` is ``[u_{m-1}, u_m)`` with ``u_0 = -inf``."""

    boundaries: np.ndarray
    lower_edge: float = field(default=-np.inf)

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or len(b) == 0:
            raise GridError("grid needs at least one boundary")
        if np.any(np.diff(b) <= 0):
            raise GridError("grid boundaries must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def M(self) -> int:
        return len(self.boundaries)

    def edges(self) -> np.ndarray:
        """``M + 1`` ring edges; the first is ``lower_edge`` (the minimum energy seen at build time)."""
        return np.concatenate([[self.lower_edge], self.boundaries])

    def widths(self) -> np.ndarray:
        return np.diff(self.edges())

    def midpoints(self) -> np.ndarray:
        e = self.edges()
        return 0.5 * (e[:-1] + e[1:])

    def lower(self, m: int) -> float:
        """Lower edge of 0-based ring ``m``."""
        return self.lower_edge if m == 0 else float(self.boundaries[m - 1])

    def upper(self, m: int) -> float:
        return float(self.boundaries[m])


@dataclass(frozen=True)
class DosEstimate:
    """Per-ring density of states, normalised so that ``sum(values * widths) == 1``."""

    midpoints: np.ndarray
    widths: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("midpoints", "widths", "values"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.values < 0):
            raise ValueError("density of states must be nonnegative")
        if np.any(self.widths <= 0):
            raise ValueError("ring widths must be positive")

    @property
    def M(self) -> int:
        return len(self.values)


def _top_slack(x: float) -> float:
    return 1e-9 * max(1.0, abs(x))


def build_energy_grid(energies, M: int, strategy: str = "equal-count") -> EnergyGrid:
    """Build ``M`` rings over ``energies``.

    ``equal-count`` puts ``floor(n/M)`` or ``ceil(n/M)`` energies in each ring
    (ties can shift counts); ``equal-width`` splits ``[min, max]`` uniformly.
    The top boundary sits just above the maximum so every input is covered.
    """
    e = np.sort(np.asarray(energies, dtype=float).ravel())
    if M < 1:
        raise GridError("M must be >= 1")
    if len(e) == 0:
        raise GridError("no energies")
    if not np.all(np.isfinite(e)):
        raise GridError("energies must be finite")
    lo, hi = float(e[0]), float(e[-1])
    top = hi + _top_slack(hi)
    if strategy == "equal-width":
        if M > 1 and hi == lo:
            raise GridError("equal-width grid over a single energy value")
        bounds = lo + (hi - lo) * np.arange(1, M) / M
        return EnergyGrid(np.append(bounds, top), lower_edge=lo)
    if strategy != "equal-count":
        raise GridError(f"unknown grid strategy {strategy!r}")
    distinct = np.unique(e)
    if M > len(distinct):
        raise GridError(f"M={M} exceeds the {len(distinct)} distinct energies")
    n, D = len(e), len(distinct)
    bounds = []
    k_prev = 0
    for m in range(1, M):
        # boundary m is a distinct value; ties shift it up, but never so far that later rings go empty
        k = int(np.searchsorted(distinct, e[(m * n) // M]))
        k = min(max(k, k_prev + 1), D - (M - m))
        bounds.append(distinct[k])
        k_prev = k
    return EnergyGrid(np.array(bounds + [top]), lower_edge=lo)


def assign_level_sets(energies, grid: EnergyGrid) -> np.ndarray:
    """0-based ring index of each energy under the half-open convention."""
    e = np.asarray(energies, dtype=float)
    m = np.searchsorted(grid.boundaries, e, side="right")
    bad = np.flatnonzero(m >= grid.M)
    if len(bad):
        i = int(bad[0])
        raise GridError(f"sample {i} has energy {e[i]!r} >= top boundary {grid.boundaries[-1]!r}")
    return m


def subsample(samples: SampleSet, fraction: float, seed: int) -> SampleSet:
    """Draw ``ceil(fraction * n)`` samples without replacement, stratified by chain.

    Per-chain quotas use largest-remainder rounding so every chain keeps its
    share; order of the returned samples follows the input order.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("cannot subsample an empty sample set")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    target = math.ceil(fraction * n - 1e-9)
    if target >= n:
        return samples.take(np.arange(n))
    chains, inverse, counts = np.unique(samples.chain_ids, return_inverse=True, return_counts=True)
    quota = fraction * counts
    take = np.floor(quota).astype(np.int64)
    rem = target - take.sum()
    order = np.lexsort((chains, -(quota - take)))
    take[order[:rem]] += 1
    rng = make_rng(seed)
    keep = []
    for c in range(len(chains)):
        members = np.flatnonzero(inverse == c)
        keep.append(rng.choice(members, size=int(take[c]), replace=False))
    return samples.take(np.sort(np.concatenate(keep)))


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int = 0):
        self.parent = list(range(n))
        self.size = [1] * n

    def add(self) -> int:
        self.parent.append(len(self.parent))
        self.size.append(1)
        return len(self.parent) - 1

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb] or (self.size[ra] == self.size[rb] and rb < ra):
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


# --- JSON Lines sample files -------------------------------------------------


def sample_to_json(s: Sample) -> str:
    if isinstance(s.state, Segmentation):
        state = {"seg": {"cps": list(s.state.change_points), "len": s.state.seq_len, "max_n": s.state.max_points}}
    else:
        state = {"cont": [float(v) for v in s.state]}
    rec = {
        "chain": int(s.chain_id),
        "temp": float(s.temperature),
        "trunc": None if s.truncation is None else float(s.truncation),
        "energy": float(s.energy),
        "state": state,
    }
    return json.dumps(rec)


def sample_from_json(line: str) -> Sample:
    rec = json.loads(line)
    st = rec["state"]
    if "seg" in st:
        seg = st["seg"]
        state = Segmentation(tuple(seg["cps"]), int(seg["len"]), int(seg["max_n"]))
    elif "cont" in st:
        state = np.asarray(st["cont"], dtype=float)
    else:
        raise ValueError(f"unknown state kind in {sorted(st)}")
    return Sample(
        state=state,
        energy=float(rec["energy"]),
        chain_id=int(rec["chain"]),
        temperature=float(rec["temp"]),
        truncation=rec.get("trunc"),
    )


def write_samples(path, samples: SampleSet | Iterable[Sample]) -> None:
    recs = samples.to_samples() if isinstance(samples, SampleSet) else samples
    with open(path, "w") as fh:
        for s in recs:
            fh.write(sample_to_json(s))
            fh.write("\n")


def read_samples(path) -> SampleSet:
    recs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                recs.append(sample_from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return SampleSet.from_samples(recs)
