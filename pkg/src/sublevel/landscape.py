"""Bottom-up partition of sampled states into the tree of sublevel sets.

Rings are processed from low to high energy. Each ring is clustered on its
own; a ring cluster is then attached to every sublevel cluster whose NND to
it is within the larger of the two cluster max-NNDs. Attaching to nothing
opens a leaf, attaching to several closes them under a barrier node.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import DosEstimate, EnergyGrid, SampleSet, Segmentation, UnionFind, assign_level_sets
from .metric import EuclideanPoints, SegmentationPoints
from .ringcluster import ClusterParams, partition_ring

log = logging.getLogger(__name__)


@dataclass
class Node:
    """A leaf (local minimum) or barrier of the landscape tree.

    ``ring_counts`` maps a 0-based ring index to the number of that ring's
    samples on this node's own branch (descendant branches excluded);
    ``ring_span`` is the first and last such ring.
    """

    id: int
    kind: str
    energy: float
    children: list[int] = field(default_factory=list)
    parent: int | None = None
    rep_state: np.ndarray | Segmentation | None = None
    rep_index: int | None = None
    member_count: int = 0
    ring_span: tuple[int, int] | None = None
    ring_counts: dict[int, int] = field(default_factory=dict)
    local_dos: dict[int, float] | None = None


@dataclass
class LandscapeTree:
    nodes: list[Node]
    roots: list[int]
    grid: EnergyGrid | None = None
    labels: np.ndarray | None = None
    dos: DosEstimate | None = None
    ring_sizes: np.ndarray | None = None

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "leaf"]

    def barriers(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "barrier"]

    def subtree(self, node_id: int) -> list[int]:
        out, stack = [], [node_id]
        while stack:
            k = stack.pop()
            out.append(k)
            stack.extend(self.nodes[k].children)
        return out

    def leaves_under(self, node_id: int) -> list[int]:
        return [k for k in self.subtree(node_id) if self.nodes[k].kind == "leaf"]


@dataclass
class _Sub:
    """A cluster of the empirical sublevel set while the induction runs."""

    node: int
    d: float
    slices: list  # (ring, probe) pairs, most recent last
    size: int = 0


def _point_set(samples: SampleSet):
    if samples.is_discrete:
        return SegmentationPoints(samples.segmentations)
    return EuclideanPoints(samples.coords)


def connect_descending(ring_members, slices, threshold: float) -> bool:
    """True iff some slice of the sublevel cluster is within ``threshold``.

    Slices are tried from the highest ring down and the scan stops at the
    first hit, which gives the same answer as one full set-to-set NND test.
    """
    for _, probe in reversed(slices):
        if probe.within(ring_members, threshold):
            return True
    return False


def bup_build(
    samples: SampleSet,
    grid: EnergyGrid,
    params: ClusterParams = ClusterParams(),
    energy_fn=None,
    keep_partitions: bool = False,
) -> LandscapeTree:
    """Build the landscape tree of ``samples`` over the rings of ``grid``.

    ``energy_fn`` (vectorised, continuous spaces only) is used by the
    interpolation rescue when ``params.interpolation`` is on. Returns a forest
    when some clusters never connect.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("no samples")
    ring_of = assign_level_sets(samples.energies, grid)
    pts = _point_set(samples)
    first, inv, counts = pts.unique()
    upts = pts.subset(first)
    u_ring = ring_of[first]
    u_energy = samples.energies[first]
    min_d = upts.min_distance

    nodes: list[Node] = []
    subs: list[_Sub] = []
    u_node = np.full(len(first), -1, dtype=np.int64)
    ring_sizes = np.bincount(ring_of, minlength=grid.M)
    partitions = []
    K_prev = 0
    for m in range(grid.M):
        ids = np.flatnonzero(u_ring == m)
        if len(ids) == 0:
            continue
        part = partition_ring(
            upts.subset(ids),
            params,
            K_prev=K_prev,
            energy_fn=energy_fn,
            u_upper=grid.upper(m),
            weights=counts[ids],
            ring=m,
        )
        if keep_partitions:
            part.members_global = [ids[c.members] for c in part.clusters]
            partitions.append(part)
        rcs = [ids[c.members] for c in part.clusters]
        rs = [c.max_nnd for c in part.clusters]
        K = len(rcs)
        uf = UnionFind(K + len(subs))
        # big sublevel clusters first: most ring clusters attach to them and later tests get skipped
        order = sorted(range(len(subs)), key=lambda j: -subs[j].size)
        for i in range(K):
            for j in order:
                if uf.find(i) == uf.find(K + j):
                    continue
                thr = max(rs[i], subs[j].d, min_d)
                if connect_descending(rcs[i], subs[j].slices, thr):
                    uf.union(i, K + j)
        groups: dict[int, tuple[list[int], list[int]]] = {}
        for i in range(K):
            groups.setdefault(uf.find(i), ([], []))[0].append(i)
        for j in range(len(subs)):
            groups.setdefault(uf.find(K + j), ([], []))[1].append(j)
        new_subs = []
        for root in sorted(groups, key=lambda r: min(groups[r][0] + [K + j for j in groups[r][1]])):
            ri, sj = groups[root]
            if not ri:
                new_subs.append(subs[sj[0]])
                continue
            members = np.concatenate([rcs[i] for i in ri])
            d = max([rs[i] for i in ri] + [subs[j].d for j in sj])
            if not sj:
                best = members[np.argmin(u_energy[members])]
                node = Node(
                    id=len(nodes),
                    kind="leaf",
                    energy=float(u_energy[best]),
                    rep_state=upts.segs[best] if isinstance(upts, SegmentationPoints) else upts.X[best].copy(),
                    rep_index=int(first[best]),
                )
                nodes.append(node)
                slices = []
            elif len(sj) == 1:
                node = nodes[subs[sj[0]].node]
                slices = subs[sj[0]].slices
            else:
                node = Node(id=len(nodes), kind="barrier", energy=float(grid.lower(m)))
                for j in sj:
                    node.children.append(subs[j].node)
                    nodes[subs[j].node].parent = node.id
                nodes.append(node)
                slices = [s for j in sj for s in subs[j].slices]
                slices.sort(key=lambda s: s[0])
            node.ring_counts[m] = int(counts[members].sum())
            lo = m if node.ring_span is None else node.ring_span[0]
            node.ring_span = (lo, m)
            u_node[members] = node.id
            size = len(members) + sum(subs[j].size for j in sj)
            new_subs.append(_Sub(node=node.id, d=d, slices=slices + [(m, upts.probe(members))], size=size))
        subs = new_subs
        K_prev = len(subs)

    roots = sorted(s.node for s in subs)
    labels = u_node[inv]
    for node in nodes:
        node.member_count = 0
    for k in range(len(nodes)):
        own = sum(nodes[k].ring_counts.values())
        j = k
        while j is not None:
            nodes[j].member_count += own
            j = nodes[j].parent
    tree = LandscapeTree(nodes=nodes, roots=roots, grid=grid, labels=labels, ring_sizes=ring_sizes)
    if keep_partitions:
        tree.partitions = partitions
    return tree


# --- density of states ---------------------------------------------------------


class CoverageError(ValueError):
    pass


def _check_coverage(chain_ids, ring_of, M):
    chains = np.unique(chain_ids)
    index = {c: k for k, c in enumerate(chains)}
    uf = UnionFind(len(chains) + M)
    for c, m in set(zip(chain_ids.tolist(), ring_of.tolist())):
        uf.union(index[c], len(chains) + m)
    roots = {uf.find(index[c]) for c in chains}
    if len(roots) > 1:
        spans = []
        for c in chains:
            rings = ring_of[chain_ids == c]
            spans.append(f"chain {c}: rings {rings.min()}..{rings.max()}")
        raise CoverageError("chains do not overlap in energy; no common ring links them (" + "; ".join(spans) + ")")


def estimate_dos(
    samples: SampleSet,
    grid: EnergyGrid,
    tol: float = 1e-8,
    max_iter: int = 10000,
    sub_bins: int = 64,
) -> DosEstimate:
    """Self-consistent multiple-histogram estimate of the ring density of states.

    Each chain ``t`` samples ``exp(-max(u, H_t) / T_t)`` times the density of
    states. Samples are pooled into ``sub_bins`` narrow bins per ring (at the
    bin's mean energy), the chain normalisers are iterated to a fixed point,
    and the resulting per-bin volumes are summed per ring.
    """
    e = samples.energies
    ring_of = assign_level_sets(e, grid)
    _check_coverage(samples.chain_ids, ring_of, grid.M)
    edges = grid.edges()
    lo = np.minimum(edges[ring_of], e)
    width = grid.widths()[ring_of]
    frac = np.clip((e - lo) / np.where(width > 0, width, 1.0), 0, 1 - 1e-12)
    fine = ring_of * sub_bins + (frac * sub_bins).astype(np.int64)
    fine_ids, fine_inv = np.unique(fine, return_inverse=True)
    nb = len(fine_ids)
    bin_count = np.bincount(fine_inv, minlength=nb).astype(float)
    bin_u = np.bincount(fine_inv, weights=e, minlength=nb) / bin_count
    bin_ring = fine_ids // sub_bins

    chains, cinv = np.unique(samples.chain_ids, return_inverse=True)
    N = np.bincount(cinv).astype(float)
    T = np.array([samples.temperatures[cinv == c][0] for c in range(len(chains))])
    H = np.array([samples.truncations[cinv == c][0] for c in range(len(chains))])
    # log weight of bin b under chain t
    logw = -np.maximum(bin_u[None, :], H[:, None]) / T[:, None]
    f = np.zeros(len(chains))
    logN = np.log(N)
    for it in range(max_iter):
        log_den = logsumexp(logN[:, None] + logw - f[:, None], axis=0)
        f_new = logsumexp(logw + np.log(bin_count)[None, :] - log_den[None, :], axis=1)
        f_new -= f_new[0]
        with np.errstate(over="ignore"):
            change = np.max(np.abs(np.expm1(f_new - f)))
        if change < tol:
            f = f_new
            break
        f = f_new
    else:
        log.warning("DOS iteration did not converge in %d steps", max_iter)
    log_den = logsumexp(logN[:, None] + logw - f[:, None], axis=0)
    log_vol_bin = np.log(bin_count) - log_den
    log_vol = np.full(grid.M, -np.inf)
    for m in np.unique(bin_ring):
        log_vol[m] = logsumexp(log_vol_bin[bin_ring == m])
    widths = grid.widths()
    log_omega = log_vol - np.log(widths)
    finite = np.isfinite(log_omega)
    log_omega[finite] -= logsumexp(log_omega[finite] + np.log(widths[finite]))
    values = np.where(finite, np.exp(log_omega), 0.0)
    return DosEstimate(midpoints=grid.midpoints(), widths=widths, values=values)


def local_dos(tree: LandscapeTree, dos: DosEstimate) -> LandscapeTree:
    """Split each ring's DOS among branches in proportion to their sample counts."""
    if tree.ring_sizes is None:
        raise ValueError("tree has no ring sizes")
    for node in tree.nodes:
        node.local_dos = {
            m: (c / tree.ring_sizes[m]) * float(dos.values[m]) for m, c in node.ring_counts.items() if tree.ring_sizes[m] > 0
        }
    tree.dos = dos
    return tree


def branch_mass(tree: LandscapeTree, node_id: int, T: float, descendants: bool = True) -> float:
    """Boltzmann probability at temperature ``T`` of a node's local domain.

    With ``descendants`` the domain is the whole sublevel component below the
    parent barrier; otherwise only the node's own branch. Rings are integrated
    with the midpoint rule and the partition function cancels.
    """
    if T <= 0:
        raise ValueError("temperature must be positive")
    if tree.dos is None or any(n.local_dos is None for n in tree.nodes):
        raise ValueError("tree is not annotated with local density of states")
    dos = tree.dos
    with np.errstate(divide="ignore"):
        log_terms = np.log(dos.values) - dos.midpoints / T + np.log(dos.widths)
    shift = np.max(log_terms[np.isfinite(log_terms)])
    denom = np.sum(np.exp(log_terms - shift))
    ids = tree.subtree(node_id) if descendants else [node_id]
    num = 0.0
    for k in ids:
        for m, om in tree.nodes[k].local_dos.items():
            if om > 0:
                num += math.exp(math.log(om) - dos.midpoints[m] / T + math.log(dos.widths[m]) - shift)
    return float(min(1.0, num / denom))


def representative_states(tree: LandscapeTree, samples: SampleSet, cut: float | None = None) -> dict[int, object]:
    """Per-node summaries.

    Without ``cut``: each leaf's lowest-energy state. With ``cut``: for every
    branch crossing that energy, the coordinate mean of its members below it.
    """
    if cut is None:
        return {n.id: n.rep_state for n in tree.leaves()}
    if samples.is_discrete:
        raise ValueError("branch averages need continuous states")
    out = {}
    for node in tree.nodes:
        parent_e = np.inf if node.parent is None else tree.nodes[node.parent].energy
        if not node.energy < cut <= parent_e:
            continue
        mask = np.isin(tree.labels, tree.subtree(node.id)) & (samples.energies < cut)
        if not mask.any():
            raise ValueError(f"branch {node.id} has no members below {cut}")
        out[node.id] = samples.coords[mask].mean(axis=0)
    return out


# --- export ------------------------------------------------------------------------


def _state_json(state):
    if state is None:
        return None
    if isinstance(state, Segmentation):
        return {"seg": {"cps": list(state.change_points), "len": state.seq_len, "max_n": state.max_points}}
    return {"cont": [float(v) for v in np.asarray(state)]}


def _state_from_json(obj):
    if obj is None:
        return None
    if "seg" in obj:
        s = obj["seg"]
        return Segmentation(tuple(s["cps"]), int(s["len"]), int(s["max_n"]))
    return np.asarray(obj["cont"], dtype=float)


def tree_to_dict(tree: LandscapeTree, mass_at: float | list[float] | None = None) -> dict:
    temps = [] if mass_at is None else ([mass_at] if np.isscalar(mass_at) else list(mass_at))
    nodes = []
    for n in tree.nodes:
        masses = [{"T": float(T), "value": branch_mass(tree, n.id, T)} for T in temps]
        rec = {
            "id": n.id,
            "kind": n.kind,
            "energy": float(n.energy),
            "children": list(n.children),
            "rep_state": _state_json(n.rep_state),
            "member_count": int(n.member_count),
            "mass": masses[0] if masses else None,
        }
        if len(masses) > 1:
            rec["masses"] = masses
        if n.ring_span is not None:
            rec["ring_span"] = list(n.ring_span)
            rec["ring_counts"] = [[int(m), int(c)] for m, c in sorted(n.ring_counts.items())]
        nodes.append(rec)
    out = {"roots": list(tree.roots), "nodes": nodes}
    if tree.grid is not None:
        out["grid"] = {"boundaries": [float(b) for b in tree.grid.boundaries], "lower_edge": float(tree.grid.lower_edge)}
    if tree.dos is not None:
        out["dos"] = [float(v) for v in tree.dos.values]
    if tree.ring_sizes is not None:
        out["ring_sizes"] = [int(v) for v in tree.ring_sizes]
    return out


def tree_from_dict(obj: dict) -> LandscapeTree:
    nodes = []
    for rec in obj["nodes"]:
        nodes.append(
            Node(
                id=int(rec["id"]),
                kind=rec["kind"],
                energy=float(rec["energy"]),
                children=[int(c) for c in rec["children"]],
                rep_state=_state_from_json(rec.get("rep_state")),
                member_count=int(rec.get("member_count", 0)),
                ring_span=tuple(rec["ring_span"]) if "ring_span" in rec else None,
                ring_counts={int(m): int(c) for m, c in rec.get("ring_counts", [])},
            )
        )
    nodes.sort(key=lambda n: n.id)
    for n in nodes:
        for c in n.children:
            nodes[c].parent = n.id
    grid = None
    if "grid" in obj:
        grid = EnergyGrid(np.asarray(obj["grid"]["boundaries"]), lower_edge=obj["grid"]["lower_edge"])
    tree = LandscapeTree(nodes=nodes, roots=[int(r) for r in obj["roots"]], grid=grid)
    if "ring_sizes" in obj:
        tree.ring_sizes = np.asarray(obj["ring_sizes"], dtype=np.int64)
    if "dos" in obj and grid is not None:
        local_dos(tree, DosEstimate(grid.midpoints(), grid.widths(), np.asarray(obj["dos"])))
    return tree


def write_tree_json(tree: LandscapeTree, path, mass_at=None) -> None:
    with open(path, "w") as fh:
        json.dump(tree_to_dict(tree, mass_at), fh, indent=1)
        fh.write("\n")


def read_tree_json(path) -> LandscapeTree:
    with open(path) as fh:
        return tree_from_dict(json.load(fh))


def tree_to_dot(tree: LandscapeTree) -> str:
    """Graphviz text: one subgraph per root, edge lengths follow energy gaps."""
    lines = ["digraph landscape {", "  rankdir=BT;"]
    for r in tree.roots:
        lines.append(f"  subgraph cluster_{r} {{")
        for k in tree.subtree(r):
            n = tree.nodes[k]
            shape = "box" if n.kind == "leaf" else "point"
            lines.append(f'    n{k} [shape={shape}, label="{n.energy:.4g}", xlabel="{n.energy:.4g}"];')
        for k in tree.subtree(r):
            n = tree.nodes[k]
            for c in n.children:
                gap = max(n.energy - tree.nodes[c].energy, 1e-3)
                lines.append(f'    n{c} -> n{k} [len={gap:.4g}, minlen={max(1, round(gap))}];')
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def tree_signature(tree: LandscapeTree, digits: int | None = None):
    """Order-free nested description of the forest, for structural comparison."""

    def sig(k):
        n = tree.nodes[k]
        e = n.energy if digits is None else round(n.energy, digits)
        return (n.kind, e, tuple(sorted(sig(c) for c in n.children)))

    return tuple(sorted(sig(r) for r in tree.roots))
