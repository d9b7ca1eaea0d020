"""Command-line runs: sampling, tree building, verification, oracles and exports.

Every command is a pure function of its input files, its JSON config and the
seed, so reruns produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Any, Callable

import numpy as np

from .core import SampleSet, build_energy_grid, read_samples, subsample, write_samples
from .landscape import (
    LandscapeTree,
    branch_mass,
    bup_build,
    estimate_dos,
    local_dos,
    read_tree_json,
    tree_to_dot,
    write_tree_json,
)
from .ringcluster import ClusterParams
from .samplers import (
    ChainSpec,
    SamplerRun,
    SegmentationModel,
    geometric_ladder,
    metropolis_chain,
    parallel_tempering,
    read_sequence,
    restrict_energy,
    sample_segmentations,
)
from .testbeds import (
    DNA_CHANGE_POINTS,
    LAYERED_BOX,
    LAYERED_DIM,
    SEVEN_BOX,
    SEVEN_CENTERS,
    build_t_data,
    double_well_energy,
    enumerate_segmentations,
    exhaustive_tree_oracle,
    gradient_descent,
    grid_tree_oracle,
    layered_gradient,
    layered_multimodal_energy,
    neighbor_descent,
    pairwise_barrier_approx,
    seven_mode_energy,
    seven_mode_gradient,
    simulate_sequence,
    t_posterior_energy,
    t_posterior_gradient,
    verify_local_minimum,
)

EXIT_OK, EXIT_INVALID, EXIT_VERIFY = 0, 2, 3


class ConfigError(ValueError):
    """Invalid run configuration; the message carries ``path:line``."""


# --- configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    """One reproducible run.

    ``sigma`` is a proposal half-width (scalar or per chain) or ``"t-scaled"``
    for ``sqrt(T) * (1 + T)``. ``levels`` is a ring count or ``"distinct"``
    for one ring per distinct energy. ``refine`` holds the restricted
    re-sampling settings used by :func:`refine_branches`.
    """

    testbed: str
    params: dict = field(default_factory=dict)
    temperatures: list = field(default_factory=lambda: [1.0])
    truncations: list | None = None
    steps: int = 10000
    burn_in: float = 0.1
    sigma: Any = None
    swap_interval: int = 10
    draws: int = 10000
    levels: Any = 50
    grid_strategy: str = "equal-count"
    cluster: dict = field(default_factory=dict)
    subsample: float = 1.0
    seed: int = 0
    mass_at: list = field(default_factory=list)
    verify_tol: float = 0.05
    verify_fraction: float = 0.95
    oracle_resolution: int = 2000
    refine: dict = field(default_factory=dict)

    @property
    def cluster_params(self) -> ClusterParams:
        return ClusterParams(**self.cluster)


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _pos(x) -> bool:
    return _num(x) and x > 0


def _int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _pos_list(x) -> bool:
    return isinstance(x, list) and len(x) > 0 and all(_pos(v) for v in x)


_CLUSTER_FIELDS = {f.name for f in fields(ClusterParams)}
_REFINE_FIELDS = {"chains", "steps", "cap_weight", "radius_margin", "t_low", "t_high"}

# key -> (predicate, expectation shown in the error message)
_SCHEMA: dict[str, tuple[Callable[[Any], bool], str]] = {
    "preset": (lambda v: v in PRESETS, "a known preset"),
    "testbed": (lambda v: v in TESTBEDS, "a known testbed"),
    "params": (lambda v: isinstance(v, dict), "an object"),
    "temperatures": (_pos_list, "a non-empty list of positive numbers"),
    "truncations": (lambda v: v is None or (isinstance(v, list) and all(t is None or _num(t) for t in v)), "a list of numbers or nulls"),
    "steps": (lambda v: _int(v) and v > 0, "a positive integer"),
    "burn_in": (lambda v: _num(v) and 0 <= v < 1, "a number in [0, 1)"),
    "sigma": (lambda v: v is None or v == "t-scaled" or _pos(v) or _pos_list(v), 'a positive number, a list of them, "t-scaled" or null'),
    "swap_interval": (lambda v: _int(v) and v >= 0, "a non-negative integer"),
    "draws": (lambda v: _int(v) and v > 0, "a positive integer"),
    "levels": (lambda v: v == "distinct" or (_int(v) and v >= 1), 'a positive integer or "distinct"'),
    "grid_strategy": (lambda v: v in ("equal-count", "equal-width"), '"equal-count" or "equal-width"'),
    "cluster": (lambda v: isinstance(v, dict) and set(v) <= _CLUSTER_FIELDS, f"an object with keys from {sorted(_CLUSTER_FIELDS)}"),
    "subsample": (lambda v: _num(v) and 0 < v <= 1, "a number in (0, 1]"),
    "seed": (lambda v: _int(v) and 0 <= v < 2**64, "an unsigned 64-bit integer"),
    "mass_at": (lambda v: isinstance(v, list) and all(_pos(t) for t in v), "a list of positive temperatures"),
    "verify_tol": (_pos, "a positive number"),
    "verify_fraction": (lambda v: _num(v) and 0 <= v <= 1, "a number in [0, 1]"),
    "oracle_resolution": (lambda v: _int(v) and v >= 10, "an integer >= 10"),
    "refine": (lambda v: isinstance(v, dict) and set(v) <= _REFINE_FIELDS, f"an object with keys from {sorted(_REFINE_FIELDS)}"),
}


def _key_line(text: str, key: str) -> int:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return 1


def parse_config(text: str, source: str = "<config>", preset: str | None = None) -> RunConfig:
    """Validate a JSON config, layered over ``preset`` or the config's own ``"preset"``."""
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: config must be a JSON object")
    for key, value in raw.items():
        line = _key_line(text, key)
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{line}: unknown key {key!r}")
        ok, expected = _SCHEMA[key]
        if not ok(value):
            raise ConfigError(f"{source}:{line}: {key!r} must be {expected}")
    name = preset if preset is not None else raw.get("preset")
    if name is not None and name not in PRESETS:
        raise ConfigError(f"{source}:{_key_line(text, 'preset')}: unknown preset {name!r}")
    merged = dict(PRESETS[name]) if name is not None else {}
    merged.update({k: v for k, v in raw.items() if k != "preset"})
    if "testbed" not in merged:
        raise ConfigError(f"{source}:1: 'testbed' is required when no preset is given")
    cfg = RunConfig(**merged)
    R = len(cfg.temperatures)
    for key, n in (("truncations", None if cfg.truncations is None else len(cfg.truncations)),
                   ("sigma", len(cfg.sigma) if isinstance(cfg.sigma, list) else None)):
        if n is not None and n != R:
            raise ConfigError(f"{source}:{_key_line(text, key)}: {key!r} needs {R} entries, one per temperature")
    for key, check in (("cluster", lambda: cfg.cluster_params), ("params", lambda: testbed_of(cfg))):
        try:
            check()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}:{_key_line(text, key)}: {exc}") from exc
    return cfg


def load_config(path: str | None, preset: str | None = None) -> RunConfig:
    if path is None:
        if preset is None:
            raise ConfigError("either --config or --preset is required")
        return parse_config("{}", "<preset>", preset)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}:1: {exc.strerror}") from exc
    return parse_config(text, path, preset)


# --- testbeds --------------------------------------------------------------------


@dataclass
class Testbed:
    """Everything the commands need to know about one target."""

    name: str
    discrete: bool = False
    energy: Callable | None = None
    gradient: Callable | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    starts: np.ndarray | None = None  # chain r starts at starts[r % len(starts)]
    sequence: str | None = None
    N: int | None = None
    alpha: tuple = (1.0, 1.0, 1.0, 1.0)
    enumerate_states: bool = False


def _allowed(params: dict, keys: set, name: str):
    extra = set(params) - keys
    if extra:
        raise ValueError(f"unknown {name} params {sorted(extra)}; allowed {sorted(keys)}")


def _t_posterior(params: dict) -> Testbed:
    _allowed(params, {"A", "a1", "a2", "a3", "box"}, "t-posterior")
    data = build_t_data(**{k: float(v) for k, v in params.items() if k != "box"})
    lo, hi = params.get("box", [-10.0, 50.0])
    return Testbed(
        "t-posterior",
        energy=lambda X: t_posterior_energy(X, data),
        gradient=lambda x: t_posterior_gradient(x, data),
        lo=np.full(data.p, float(lo)),
        hi=np.full(data.p, float(hi)),
        starts=data.Y,
    )


def _layered(params: dict) -> Testbed:
    _allowed(params, set(), "layered")
    lo, hi = LAYERED_BOX
    return Testbed(
        "layered",
        energy=layered_multimodal_energy,
        gradient=layered_gradient,
        lo=np.full(LAYERED_DIM, lo),
        hi=np.full(LAYERED_DIM, hi),
        starts=np.zeros((1, LAYERED_DIM)),
    )


def _seven(params: dict) -> Testbed:
    _allowed(params, set(), "seven-mode")
    return Testbed("seven-mode", energy=seven_mode_energy, gradient=seven_mode_gradient, lo=SEVEN_BOX[0], hi=SEVEN_BOX[1], starts=SEVEN_CENTERS)


def _double_well_gradient(x):
    x = np.asarray(x, dtype=float)
    g = 2 * x
    g[..., 0] = 4 * x[..., 0] * (x[..., 0] ** 2 - 1)
    return g


def _double_well(params: dict) -> Testbed:
    _allowed(params, {"dim", "box"}, "double-well")
    dim = int(params.get("dim", 1))
    if dim < 1:
        raise ValueError("dim must be positive")
    lo, hi = params.get("box", [-2.0, 2.0])
    start = np.zeros((1, dim))
    start[0, 0] = 1.0
    return Testbed(
        "double-well",
        energy=double_well_energy,
        gradient=_double_well_gradient,
        lo=np.full(dim, float(lo)),
        hi=np.full(dim, float(hi)),
        starts=start,
    )


def default_composition(k: int) -> np.ndarray:
    """Letter frequencies for ``k + 1`` segments: segment ``i < k`` favours letter ``i mod 4``, the last is uniform."""
    theta = np.full((k + 1, 4), 0.2)
    theta[np.arange(k), np.arange(k) % 4] = 0.4
    theta[k] = 0.25
    return theta


def _segmentation(params: dict) -> Testbed:
    _allowed(params, {"L", "N", "change_points", "theta", "seq_seed", "sequence", "alpha", "enumerate"}, "segmentation")
    N = int(params.get("N", 9))
    if "sequence" in params:
        seq = read_sequence(params["sequence"])
    else:
        L = int(params.get("L", 1000))
        cps = tuple(params.get("change_points", DNA_CHANGE_POINTS))
        theta = np.asarray(params["theta"], dtype=float) if "theta" in params else default_composition(len(cps))
        seq = simulate_sequence(L, cps, theta, int(params.get("seq_seed", 1)))
    if N < 0 or N >= len(seq):
        raise ValueError("N must be in 0..L-1")
    alpha = tuple(float(a) for a in params.get("alpha", (1.0, 1.0, 1.0, 1.0)))
    if len(alpha) != 4 or min(alpha) <= 0:
        raise ValueError("alpha needs four positive entries")
    return Testbed("segmentation", discrete=True, sequence=seq, N=N, alpha=alpha, enumerate_states=bool(params.get("enumerate", False)))


TESTBEDS: dict[str, Callable[[dict], Testbed]] = {
    "t-posterior": _t_posterior,
    "layered": _layered,
    "seven-mode": _seven,
    "double-well": _double_well,
    "segmentation": _segmentation,
}


def testbed_of(cfg: RunConfig) -> Testbed:
    return TESTBEDS[cfg.testbed](cfg.params)


# --- presets ---------------------------------------------------------------------


def _geo(lo, hi, n) -> list:
    return [float(t) for t in geometric_ladder(lo, hi, n)]


PRESETS: dict[str, dict] = {
    "t-sym": {
        "testbed": "t-posterior",
        "params": {"A": 40.0, "a1": 4.0, "a2": 4.0, "a3": 4.0},
        "temperatures": _geo(0.2, 4.0, 10),
        "truncations": [None] * 6 + [190.0, 194.0, 198.0, 202.0],
        "steps": 200000,
        "sigma": "t-scaled",
        "swap_interval": 1,
        "levels": 50,
        "subsample": 0.2,
        "seed": 1,
        "mass_at": [1.0],
    },
    "t-asym": {
        "testbed": "t-posterior",
        "params": {"A": 40.0, "a1": 2.0, "a2": 3.0, "a3": 4.0},
        "temperatures": _geo(0.2, 4.0, 10) + [4.0] * 6,
        "truncations": [None] * 10 + [182.0, 186.0, 190.0, 194.0, 198.0, 202.0],
        "steps": 100000,
        "sigma": "t-scaled",
        "swap_interval": 1,
        "levels": 50,
        "subsample": 0.2,
        "seed": 1,
        "mass_at": [1.0],
        "refine": {"chains": 5, "steps": 200000, "cap_weight": 0.7, "radius_margin": 1.1, "t_low": 0.2, "t_high": 4.0},
    },
    "layered4d": {
        "testbed": "layered",
        "temperatures": [0.5] * 20,
        "truncations": [float(k) for k in range(20)],
        "steps": 100000,
        "sigma": 0.3,
        "swap_interval": 10,
        "levels": 50,
        "subsample": 0.2,
        "seed": 1,
        "cluster": {"interpolation": True},
    },
    "seven2d": {
        "testbed": "seven-mode",
        "temperatures": _geo(1.0, 20.0, 10),
        "steps": 25000,
        "sigma": [0.5 * float(np.sqrt(t)) for t in geometric_ladder(1.0, 20.0, 10)],
        "swap_interval": 10,
        "levels": 50,
        "subsample": 1.0,
        "seed": 1,
    },
    "dnaseg": {
        "testbed": "segmentation",
        "params": {"L": 1000, "N": 9, "change_points": list(DNA_CHANGE_POINTS), "seq_seed": 1},
        "temperatures": _geo(0.5, 2.0, 10),
        "draws": 50000,
        "levels": 100,
        "subsample": 1.0,
        "seed": 1,
    },
    "segexact": {
        "testbed": "segmentation",
        "params": {"L": 12, "N": 2, "change_points": [5, 9], "seq_seed": 0, "enumerate": True},
        "temperatures": [1.0],
        "levels": "distinct",
        "cluster": {"complete_coverage": True},
        "seed": 0,
    },
    "double-well": {
        "testbed": "double-well",
        "temperatures": [0.3, 1.0, 3.0],
        "steps": 200000,
        "sigma": 0.5,
        "swap_interval": 10,
        "levels": 20,
        "subsample": 0.1,
        "seed": 11,
        "mass_at": [1.0],
    },
}


# --- pipeline pieces -------------------------------------------------------------


def chain_specs(cfg: RunConfig, tb: Testbed) -> list[ChainSpec]:
    T = cfg.temperatures
    H = cfg.truncations if cfg.truncations is not None else [None] * len(T)
    specs = []
    for r, t in enumerate(T):
        if cfg.sigma == "t-scaled":
            sigma = float(np.sqrt(t) * (1 + t))
        elif isinstance(cfg.sigma, list):
            sigma = float(cfg.sigma[r])
        else:
            sigma = cfg.sigma
        x0 = tb.starts[r % len(tb.starts)] if tb.starts is not None else None
        specs.append(ChainSpec(t, H[r], steps=cfg.steps, burn_in=cfg.burn_in, sigma=sigma, seed=cfg.seed * 1000 + r, x0=x0))
    return specs


def run_sampler(cfg: RunConfig, tb: Testbed | None = None) -> tuple[SampleSet, np.ndarray, np.ndarray]:
    """Samples plus per-chain acceptance and adjacent swap rates."""
    tb = tb or testbed_of(cfg)
    if tb.discrete:
        if tb.enumerate_states:
            segs = enumerate_segmentations(len(tb.sequence), tb.N)
            model = SegmentationModel(tb.sequence, tb.N, tb.alpha)
            n = len(segs)
            T = cfg.temperatures[0]
            s = SampleSet(model.energies(segs), np.zeros(n, dtype=np.int64), np.full(n, T), -np.inf, segmentations=segs)
        else:
            s = sample_segmentations(tb.sequence, tb.N, cfg.temperatures, cfg.draws, cfg.seed, tb.alpha)
        R = len(np.unique(s.chain_ids))
        return s, np.ones(R), np.zeros(max(R - 1, 0))
    specs = chain_specs(cfg, tb)
    if len(specs) == 1:
        run: SamplerRun = metropolis_chain(tb.energy, tb.lo, tb.hi, specs[0])
    else:
        run = parallel_tempering(tb.energy, tb.lo, tb.hi, specs, cfg.swap_interval, cfg.seed)
    return run.samples, run.acceptance, run.swap_acceptance


def build_tree(samples: SampleSet, cfg: RunConfig, tb: Testbed | None = None, fraction: float | None = None, levels=None, seed: int | None = None) -> tuple[LandscapeTree, SampleSet]:
    """Subsample, grid, BUP and (when masses are requested) DOS annotation."""
    tb = tb or testbed_of(cfg)
    fraction = cfg.subsample if fraction is None else fraction
    levels = cfg.levels if levels is None else levels
    seed = cfg.seed if seed is None else seed
    s = subsample(samples, fraction, seed) if fraction < 1 else samples
    M = len(np.unique(s.energies)) if levels == "distinct" else int(levels)
    grid = build_energy_grid(s.energies, M, cfg.grid_strategy)
    params = cfg.cluster_params
    energy_fn = tb.energy if params.interpolation and not tb.discrete else None
    tree = bup_build(s, grid, params, energy_fn=energy_fn)
    return tree, s


def annotate(tree: LandscapeTree, samples: SampleSet) -> LandscapeTree:
    return local_dos(tree, estimate_dos(samples, tree.grid))


def refine_branches(tree: LandscapeTree, samples: SampleSet, cfg: RunConfig, tb: Testbed | None = None) -> list[dict]:
    """Restricted re-sampling of every root branch that misses the global minimum.

    For branch ``k`` with lowest leaf energy ``M_k`` the cap is
    ``H* = (1 - w) M_k + w B`` with ``B`` the root barrier and ``w`` the
    ``cap_weight``. The ball is centred at the lowest leaf and reaches
    ``radius_margin`` times the farthest branch sample below ``H*``. A ladder of
    ``chains`` rungs runs between ``M_k - 2`` and ``H*``; the refined tree uses
    the config's grid and subsampling settings.
    """
    tb = tb or testbed_of(cfg)
    if tb.discrete or len(tree.roots) != 1:
        raise ValueError("refinement needs a continuous single-root tree")
    opts = {"chains": 5, "steps": 200000, "cap_weight": 0.7, "radius_margin": 1.1, "t_low": 0.2, "t_high": 4.0}
    opts.update(cfg.refine)
    root = tree.nodes[tree.roots[0]]
    gmin = min(tree.leaves(), key=lambda n: n.energy).id
    out = []
    for b, child in enumerate(root.children):
        under = tree.leaves_under(child)
        if gmin in under:
            continue
        low = min((tree.nodes[k] for k in under), key=lambda n: n.energy)
        M_k = low.energy
        cap = (1 - opts["cap_weight"]) * M_k + opts["cap_weight"] * root.energy
        centre = np.asarray(low.rep_state, dtype=float)
        mask = np.isin(tree.labels, tree.subtree(child)) & (samples.energies < cap)
        radius = opts["radius_margin"] * float(np.max(np.linalg.norm(samples.coords[mask] - centre, axis=1)))
        local = restrict_energy(tb.energy, centre, radius, cap)
        n = int(opts["chains"])
        T = geometric_ladder(opts["t_low"], opts["t_high"], n)
        H = geometric_ladder(M_k - 2, cap, n)
        specs = [
            ChainSpec(T[r], H[r], steps=int(opts["steps"]), burn_in=cfg.burn_in, sigma=float(np.sqrt(T[r]) * (1 + T[r])), seed=cfg.seed * 1000 + 100 * (b + 1) + r, x0=centre)
            for r in range(n)
        ]
        run = parallel_tempering(local, tb.lo, tb.hi, specs, swap_interval=1, seed=cfg.seed + b + 1)
        sub_tree, _ = build_tree(run.samples, cfg, tb)
        out.append({"branch": child, "minimum": M_k, "cap": cap, "radius": radius, "tree": sub_tree, "swap_acceptance": run.swap_acceptance})
    return out


def verify_tree(tree: LandscapeTree, cfg: RunConfig, tb: Testbed | None = None) -> dict:
    """Re-minimise (continuous) or neighbour-check (discrete) every leaf."""
    tb = tb or testbed_of(cfg)
    leaves = tree.leaves()
    if tb.discrete:
        model = SegmentationModel(tb.sequence, tb.N, tb.alpha)
        rows = []
        for n in leaves:
            Z = n.rep_state
            if not hasattr(Z, "change_points") or Z.seq_len != model.L:
                raise ValueError("tree states do not match the configured sequence")
            ok = verify_local_minimum(Z, model)
            row = {"id": n.id, "energy": n.energy, "change_points": list(Z.change_points), "local_minimum": ok}
            if not ok:
                D = neighbor_descent(Z, model)
                row["descent"] = {"change_points": list(D.change_points), "energy": model.energy(D)}
            rows.append(row)
        frac = sum(r["local_minimum"] for r in rows) / len(rows) if rows else 0.0
        return {"kind": "discrete", "leaves": rows, "verified": sum(r["local_minimum"] for r in rows), "total": len(rows), "fraction": frac, "passed": frac >= cfg.verify_fraction}
    rows, minima = [], []
    for n in leaves:
        x = np.asarray(n.rep_state, dtype=float)
        if x.shape != tb.lo.shape:
            raise ValueError("tree states do not match the configured testbed")
        res = gradient_descent(tb.energy, tb.gradient, x)
        minima.append(res.x)
        rows.append({"id": n.id, "energy": n.energy, "minimized": res.energy, "delta": n.energy - res.energy, "x": [float(v) for v in res.x], "converged": res.converged})
    B = pairwise_barrier_approx(minima, tb.energy).tolist() if len(minima) > 1 else []
    max_delta = max((r["delta"] for r in rows), default=0.0)
    return {"kind": "continuous", "leaves": rows, "barrier_matrix": B, "max_delta": max_delta, "passed": max_delta < cfg.verify_tol}


def oracle_tree(cfg: RunConfig, grid_from: SampleSet | LandscapeTree | None = None, tb: Testbed | None = None) -> LandscapeTree:
    tb = tb or testbed_of(cfg)
    if tb.discrete:
        if isinstance(grid_from, LandscapeTree) and grid_from.grid is not None:
            return exhaustive_tree_oracle(tb.sequence, tb.N, tb.alpha, grid=grid_from.grid)
        M = None if cfg.levels == "distinct" else int(cfg.levels)
        return exhaustive_tree_oracle(tb.sequence, tb.N, tb.alpha, M=M)
    if len(tb.lo) != 2:
        raise ValueError(f"no grid oracle for the {len(tb.lo)}-D testbed {tb.name!r}")
    if isinstance(grid_from, LandscapeTree):
        grid = grid_from.grid
    elif isinstance(grid_from, SampleSet):
        grid = build_energy_grid(grid_from.energies, int(cfg.levels), cfg.grid_strategy)
    else:
        raise ValueError("a continuous oracle needs --samples or --tree to fix the energy grid")
    return grid_tree_oracle(tb.energy, tb.lo, tb.hi, cfg.oracle_resolution, grid)


# --- commands --------------------------------------------------------------------


def _mass_list(text: str | None, default: list) -> list[float]:
    if text is None:
        return [float(t) for t in default]
    try:
        temps = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"--mass-at: {exc}") from exc
    if not temps or min(temps) <= 0:
        raise ConfigError("--mass-at needs positive temperatures")
    return temps


def _with_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "subsample", None) is not None:
        if not 0 < args.subsample <= 1:
            raise ConfigError("--subsample must be in (0, 1]")
        cfg.subsample = args.subsample
    if getattr(args, "levels", None) is not None:
        if args.levels < 1:
            raise ConfigError("--levels must be positive")
        cfg.levels = args.levels
    return cfg


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def cmd_sample(args) -> int:
    cfg = _with_overrides(load_config(args.config, args.preset), args)
    samples, acc, swaps = run_sampler(cfg)
    write_samples(args.out, samples)
    for c in np.unique(samples.chain_ids):
        e = samples.energies[samples.chain_ids == c]
        print(f"chain {c}: T={samples.temperatures[samples.chain_ids == c][0]:.4g} acceptance={acc[c]:.3f} energy=[{e.min():.4f}, {e.max():.4f}]")
    if len(swaps):
        print("swap acceptance: " + " ".join(f"{v:.3f}" for v in swaps))
    return EXIT_OK


def cmd_tree(args) -> int:
    cfg = _with_overrides(load_config(args.config, args.preset), args)
    samples = read_samples(args.samples)
    tree, used = build_tree(samples, cfg)
    temps = _mass_list(args.mass_at, cfg.mass_at)
    if temps:
        annotate(tree, used)
    write_tree_json(tree, args.out, temps or None)
    if args.dot:
        _emit(tree_to_dot(tree), args.dot)
    print(f"{len(tree.leaves())} leaves, {len(tree.barriers())} barriers, {len(tree.roots)} root(s)")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config, args.preset)
    report = verify_tree(read_tree_json(args.tree), cfg)
    _emit(json.dumps(report, indent=1) + "\n", args.out)
    if report["kind"] == "discrete":
        print(f"verified {report['verified']}/{report['total']} leaves", file=sys.stderr)
    else:
        print(f"max energy delta {report['max_delta']:.4g} over {len(report['leaves'])} leaves", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def cmd_oracle(args) -> int:
    cfg = _with_overrides(load_config(args.config, args.preset), args)
    grid_from = read_tree_json(args.tree) if args.tree else read_samples(args.samples) if args.samples else None
    write_tree_json(oracle_tree(cfg, grid_from), args.out)
    return EXIT_OK


def cmd_mass(args) -> int:
    tree = read_tree_json(args.tree)
    if tree.dos is None:
        raise ConfigError(f"{args.tree}:1: tree has no density of states; rebuild it with --mass-at")
    temps = _mass_list(args.mass_at, [1.0])
    lines = ["id\tkind\tenergy\t" + "\t".join(f"T={t:g}" for t in temps)]
    for n in tree.nodes:
        lines.append(f"{n.id}\t{n.kind}\t{n.energy:.6g}\t" + "\t".join(f"{branch_mass(tree, n.id, t):.6g}" for t in temps))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_export_dot(args) -> int:
    _emit(tree_to_dot(read_tree_json(args.tree)), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sublevel", description="Energy landscape trees from Monte Carlo samples.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="built-in config to start from")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("sample", help="run the configured sampler and write JSONL samples")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("tree", help="build a tree JSON from samples")
    sp.add_argument("samples")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mass-at", help="comma-separated temperatures for mass annotations")
    sp.add_argument("--subsample", type=float)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--dot", help="also write Graphviz text here")
    sp.set_defaults(func=cmd_tree)

    sp = sub.add_parser("verify", help="check tree leaves against the testbed")
    sp.add_argument("tree")
    common(sp, seed=False)
    sp.add_argument("--out", help="report path (default stdout)")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("oracle", help="exact reference tree for the testbed")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", help="samples fixing the energy grid")
    sp.add_argument("--tree", help="tree whose energy grid is reused")
    sp.add_argument("--levels", type=int)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("mass", help="branch masses of an annotated tree")
    sp.add_argument("tree")
    sp.add_argument("--mass-at")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_mass)

    sp = sub.add_parser("export-dot", help="Graphviz text for a tree JSON")
    sp.add_argument("tree")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export_dot)
    return p


def _set_threads():
    raw = os.environ.get("LANDSCAPE_THREADS")
    if not raw:
        return
    import numba

    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"LANDSCAPE_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("LANDSCAPE_THREADS must be positive")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_threads()
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
