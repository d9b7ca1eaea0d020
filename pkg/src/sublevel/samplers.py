"""Samplers feeding the landscape builder.

Continuous targets use random-walk Metropolis on ``exp(-max(h, H) / T)`` with
a reflecting uniform-box proposal, optionally coupled by replica exchange.
Segmentation posteriors are sampled exactly by forward summation and
backward imputation of change points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.special import gammaln, logsumexp

from .core import SampleSet, Segmentation, make_rng

BLOCK = 4096  # random numbers are drawn per chain in blocks of this many steps


@dataclass(frozen=True)
class ChainSpec:
    """One tempered (optionally truncated) Metropolis chain.

    ``sigma`` is the proposal half-width per coordinate; ``None`` means
    ``0.1 * sqrt(T) * (hi - lo)``. ``x0`` defaults to the box centre.
    """

    temperature: float
    truncation: float | None = None
    steps: int = 10000
    burn_in: float = 0.1
    sigma: float | np.ndarray | None = None
    seed: int = 0
    x0: np.ndarray | None = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must be in [0, 1)")

    @property
    def H(self) -> float:
        return -np.inf if self.truncation is None else float(self.truncation)


@dataclass
class SamplerRun:
    samples: SampleSet
    acceptance: np.ndarray
    swap_acceptance: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _reflect(x, lo, hi):
    w = hi - lo
    r = np.mod(x - lo, 2 * w)
    return lo + np.where(r > w, 2 * w - r, r)


@numba.njit(cache=True)
def _swap_sweep(x, h, H, T, u, done):
    # one pass over neighbouring rungs from the bottom, so a state can move several rungs per sweep
    for i in range(len(h) - 1):
        j = i + 1
        log_r = -(max(h[j], H[i]) - max(h[i], H[i])) / T[i] - (max(h[i], H[j]) - max(h[j], H[j])) / T[j]
        if np.log(u[i]) < log_r:
            for d in range(x.shape[1]):
                x[i, d], x[j, d] = x[j, d], x[i, d]
            h[i], h[j] = h[j], h[i]
            done[i] += 1


def _run(energy_fn, lo, hi, specs: Sequence[ChainSpec], swap_interval: int, swap_seed: int) -> SamplerRun:
    R = len(specs)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p = len(lo)
    steps = specs[0].steps
    if any(s.steps != steps for s in specs):
        raise ValueError("all rungs need the same number of steps")
    T = np.array([s.temperature for s in specs])
    H = np.array([s.H for s in specs])
    sig = np.empty((R, p))
    x = np.empty((R, p))
    for r, s in enumerate(specs):
        sig[r] = 0.1 * np.sqrt(s.temperature) * (hi - lo) if s.sigma is None else s.sigma
        x[r] = (lo + hi) / 2 if s.x0 is None else np.asarray(s.x0, dtype=float)
        if np.any(x[r] < lo) or np.any(x[r] > hi):
            raise ValueError(f"initial state of chain {r} lies outside the domain")
    rngs = [make_rng(s.seed) for s in specs]
    swap_rng = make_rng(swap_seed, 1)
    h = np.asarray(energy_fn(x), dtype=float).reshape(R)
    if not np.all(np.isfinite(h)):
        raise ValueError("initial state has infinite energy")
    burn = [int(s.burn_in * steps) for s in specs]
    keep = steps - burn[0]
    if any(b != burn[0] for b in burn):
        raise ValueError("all rungs need the same burn-in")
    out_x = np.empty((R, keep, p))
    out_h = np.empty((R, keep))
    accepted = np.zeros(R)
    swaps_tried = np.zeros(max(R - 1, 0))
    swaps_done = np.zeros(max(R - 1, 0))
    for start in range(0, steps, BLOCK):
        b = min(BLOCK, steps - start)
        steps_u = np.stack([g.random((b, p)) for g in rngs])
        log_acc = np.log(np.stack([g.random(b) for g in rngs]))
        for t in range(b):
            prop = _reflect(x + sig * (2 * steps_u[:, t] - 1), lo, hi)
            hp = np.asarray(energy_fn(prop), dtype=float).reshape(R)
            with np.errstate(invalid="ignore"):
                dh = (np.maximum(hp, H) - np.maximum(h, H)) / T
            ok = np.isfinite(hp) & (log_acc[:, t] < -dh)
            x[ok] = prop[ok]
            h[ok] = hp[ok]
            accepted += ok
            step = start + t
            if swap_interval and (step + 1) % swap_interval == 0:
                _swap_sweep(x, h, H, T, swap_rng.random(R - 1), swaps_done)
                swaps_tried += 1
            if step >= burn[0]:
                out_x[:, step - burn[0]] = x
                out_h[:, step - burn[0]] = h
    samples = SampleSet(
        energies=out_h.reshape(-1),
        chain_ids=np.repeat(np.arange(R), keep),
        temperatures=np.repeat(T, keep),
        truncations=np.repeat(H, keep),
        coords=out_x.reshape(-1, p),
    )
    swap_rate = np.divide(swaps_done, swaps_tried, out=np.zeros_like(swaps_done), where=swaps_tried > 0)
    return SamplerRun(samples, accepted / steps, swap_rate)


def metropolis_chain(energy_fn: Callable, lo, hi, spec: ChainSpec) -> SamplerRun:
    """Random-walk Metropolis on ``exp(-max(h, H) / T)`` inside the box ``[lo, hi]``.

    ``energy_fn`` maps an ``(n, p)`` array to ``n`` energies. Energies stored
    with the samples are the untruncated ``h``.
    """
    return _run(energy_fn, lo, hi, [spec], 0, spec.seed)


def parallel_tempering(energy_fn: Callable, lo, hi, ladder: Sequence[ChainSpec], swap_interval: int = 10, seed: int = 0) -> SamplerRun:
    """Replica exchange over ``ladder``; ``swap_interval=0`` disables swaps.

    Each rung keeps its own random stream, so without swaps every rung equals
    :func:`metropolis_chain` with the same spec. Swaps of adjacent rungs are
    accepted with the ratio of the rungs' (truncated) tempered targets.
    """
    if len(ladder) < 2:
        raise ValueError("parallel tempering needs at least two rungs; use metropolis_chain")
    return _run(energy_fn, lo, hi, list(ladder), swap_interval, seed)


def restrict_energy(energy_fn: Callable, center, radius: float, cap: float) -> Callable:
    """``h`` inside the ball around ``center`` and below ``cap``, ``+inf`` elsewhere."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    c = np.asarray(center, dtype=float)

    def restricted(X):
        X = np.asarray(X, dtype=float)
        h = np.asarray(energy_fn(X), dtype=float)
        far = np.linalg.norm(X - c, axis=-1) > radius
        return np.where(far | (h >= cap), np.inf, h)

    return restricted


def geometric_ladder(lo: float, hi: float, n: int) -> np.ndarray:
    if n == 1:
        return np.array([float(lo)])
    return lo * (hi / lo) ** (np.arange(n) / (n - 1))


# --- change-point segmentation ---------------------------------------------------

ALPHABET = "acgt"


def encode_sequence(seq: str) -> np.ndarray:
    s = "".join(seq.split()).lower()
    lut = np.full(256, -1, dtype=np.int64)
    for k, ch in enumerate(ALPHABET):
        lut[ord(ch)] = k
    codes = lut[np.frombuffer(s.encode("ascii"), dtype=np.uint8)]
    if np.any(codes < 0):
        bad = s[int(np.flatnonzero(codes < 0)[0])]
        raise ValueError(f"unexpected character {bad!r}; sequences use a, c, g, t")
    return codes


def read_sequence(path) -> str:
    """Plain or FASTA text; header lines (``>``) are skipped."""
    with open(path) as fh:
        body = "".join(line.strip() for line in fh if not line.startswith(">"))
    encode_sequence(body)
    return body.lower()


def segment_log_marginal(counts, alpha=(1.0, 1.0, 1.0, 1.0)) -> float:
    """Log Dirichlet-multinomial probability of one ordered segment."""
    c = np.asarray(counts, dtype=float)
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0):
        raise ValueError("Dirichlet parameters must be positive")
    return float(gammaln(a.sum()) - gammaln(a).sum() + gammaln(a + c).sum() - gammaln(a.sum() + c.sum()))


class SegmentationModel:
    """Segment marginals for one sequence, with prefix counts for O(p) energies."""

    def __init__(self, sequence, N: int, alpha=(1.0, 1.0, 1.0, 1.0)):
        self.codes = encode_sequence(sequence) if isinstance(sequence, str) else np.asarray(sequence, dtype=np.int64)
        self.L = len(self.codes)
        if not 0 <= N < self.L:
            raise ValueError(f"need 0 <= N < L, got N={N}, L={self.L}")
        self.N = N
        self.alpha = np.asarray(alpha, dtype=float)
        if self.alpha.shape != (4,) or np.any(self.alpha <= 0):
            raise ValueError("alpha must be four positive numbers")
        onehot = np.zeros((self.L + 1, 4))
        onehot[np.arange(1, self.L + 1), self.codes] = 1
        self.cum = np.cumsum(onehot, axis=0)  # cum[l] = counts of y_1..y_l
        self._const = gammaln(self.alpha.sum()) - gammaln(self.alpha).sum()

    def seg_logmarg(self, i, l):
        """Log marginal of ``y_i..y_l`` (1-based, inclusive); broadcasts."""
        c = self.cum[np.asarray(l)] - self.cum[np.asarray(i) - 1]
        a = self.alpha
        return self._const + gammaln(a + c).sum(axis=-1) - gammaln(a.sum() + c.sum(axis=-1))

    def table(self) -> np.ndarray:
        """``S[i-1, l-1]`` = log marginal of ``y_i..y_l``; ``-inf`` below the diagonal."""
        L = self.L
        i = np.arange(1, L + 1)[:, None]
        l = np.arange(1, L + 1)[None, :]
        S = np.full((L, L), -np.inf)
        mask = i <= l
        ii, ll = np.broadcast_arrays(i, l)
        S[mask] = self.seg_logmarg(ii[mask], ll[mask])
        return S

    def energy(self, Z: Segmentation) -> float:
        if Z.seq_len != self.L or Z.max_points != self.N:
            raise ValueError("segmentation does not match the sequence")
        bounds = np.array((1,) + Z.change_points + (self.L + 1,))
        lm = self.seg_logmarg(bounds[:-1], bounds[1:] - 1).sum()
        p = Z.p
        log_choose = gammaln(self.L) - gammaln(p + 1) - gammaln(self.L - p)
        return float(np.log(self.N + 1) + log_choose - lm)

    def energies(self, segs: Sequence[Segmentation]) -> np.ndarray:
        return np.array([self.energy(Z) for Z in segs])


def segmentation_energy(Z: Segmentation, sequence, N: int, alpha=(1.0, 1.0, 1.0, 1.0)) -> float:
    """Negative log unnormalised posterior of the change points ``Z``."""
    return SegmentationModel(sequence, N, alpha).energy(Z)


def _log_choose(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    ok = (k >= 0) & (k <= n)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return np.where(ok, out, -np.inf)


@dataclass
class DpTables:
    """Tempered forward tables.

    ``seg_logmarg[i-1, l-1]`` is the untempered segment log marginal;
    ``forward[k, l-1]`` the tempered log probability of ``y_1..y_l`` given
    ``k`` change points in it (``-inf`` when ``l <= k``).
    """

    seg_logmarg: np.ndarray
    forward: np.ndarray
    temperature: float
    N: int
    L: int
    _cdf_cache: dict = field(default_factory=dict, repr=False)

    def log_prior_z(self, z, l, k):
        """Log prior of the k-th of k change points in ``y_1..y_l`` sitting at ``z``."""
        return _log_choose(np.asarray(z) - 2, k - 1) - _log_choose(l - 1, k)

    def terms(self, k: int, l: int) -> tuple[np.ndarray, np.ndarray]:
        """Positions ``z`` and tempered log weights of the additive terms for ``(k, l)``."""
        z = np.arange(k + 1, l + 1)
        T = self.temperature
        w = self.forward[k - 1, z - 2] + (self.seg_logmarg[z - 1, l - 1] + self.log_prior_z(z, l, k)) / T
        return z, w

    def count_log_posterior(self) -> np.ndarray:
        """Log ``P(p = k | Y; T)`` for ``k = 0..N`` (uniform prior on ``p`` cancels)."""
        f = self.forward[:, self.L - 1]
        return f - logsumexp(f)


def dp_forward(sequence, N: int, T: float = 1.0, alpha=(1.0, 1.0, 1.0, 1.0)) -> DpTables:
    """Forward summation over the number of change points, all factors to the power ``1/T``."""
    if not T > 0:
        raise ValueError("temperature must be positive")
    model = SegmentationModel(sequence, N, alpha)
    L = model.L
    S = model.table()
    F = np.full((N + 1, L), -np.inf)
    F[0] = S[0] / T
    tab = DpTables(S, F, float(T), N, L)
    zz = np.arange(1, L + 1)[:, None]
    ll = np.arange(1, L + 1)[None, :]
    for k in range(1, N + 1):
        # W[z-1, l-1]: term for the k-th change point at z in y_1..y_l
        prev = np.full(L, -np.inf)
        prev[1:] = F[k - 1, :-1]  # F[k-1] at l = z-1
        with np.errstate(invalid="ignore"):
            W = prev[:, None] + (S + tab.log_prior_z(zz, ll, k)) / T
        W[(zz < k + 1) | (zz > ll)] = -np.inf
        F[k] = logsumexp(W, axis=0)
    return tab


def dp_sample(tables: DpTables, n_draws: int, seed: int, stream: int = 0) -> list[Segmentation]:
    """Exact i.i.d. draws: the count first, then change points from last to first."""
    rng = make_rng(seed, stream)
    L, N = tables.L, tables.N
    logp = tables.count_log_posterior()
    ks = rng.choice(N + 1, size=n_draws, p=np.exp(logp - logsumexp(logp)))
    cps = np.zeros((n_draws, N), dtype=np.int64)
    cur_k = ks.copy()
    cur_l = np.full(n_draws, L)
    for _ in range(N):
        active = np.flatnonzero(cur_k > 0)
        if len(active) == 0:
            break
        u = rng.random(len(active))
        keys = cur_k[active] * (L + 1) + cur_l[active]
        for key in np.unique(keys):
            sel = active[keys == key]
            k, l = divmod(int(key), L + 1)
            cache = tables._cdf_cache
            if key not in cache:
                z, w = tables.terms(k, l)
                cdf = np.cumsum(np.exp(w - w.max()))
                cache[key] = (z, cdf / cdf[-1])
            z, cdf = cache[key]
            pick = np.minimum(np.searchsorted(cdf, u[keys == key], side="right"), len(z) - 1)
            cps[sel, k - 1] = z[pick]
            cur_l[sel] = z[pick] - 1
            cur_k[sel] = k - 1
    return [Segmentation(tuple(int(v) for v in cps[d, : ks[d]]), L, N) for d in range(n_draws)]


def sample_segmentations(sequence, N: int, temperatures, n_draws: int, seed: int, alpha=(1.0, 1.0, 1.0, 1.0)) -> SampleSet:
    """Exact tempered draws at each temperature, tagged with untempered energies."""
    model = SegmentationModel(sequence, N, alpha)
    segs, energies, chains, temps = [], [], [], []
    for c, T in enumerate(temperatures):
        draws = dp_sample(dp_forward(model.codes, N, T, alpha), n_draws, seed, c)
        cache = {}
        for Z in draws:
            if Z.change_points not in cache:
                cache[Z.change_points] = model.energy(Z)
            energies.append(cache[Z.change_points])
        segs.extend(draws)
        chains.extend([c] * n_draws)
        temps.extend([T] * n_draws)
    return SampleSet(np.array(energies), np.array(chains), np.array(temps), -np.inf, segmentations=segs)
