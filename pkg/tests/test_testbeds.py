import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sublevel.core import EnergyGrid, Segmentation, build_energy_grid, make_rng
from sublevel.landscape import tree_signature
from sublevel.metric import segmentation_distance
from sublevel.samplers import SegmentationModel, dp_forward, segmentation_energy
from sublevel.testbeds import (
    DNA_CHANGE_POINTS,
    SEVEN_BOX,
    SEVEN_CENTERS,
    build_t_data,
    dna_composition,
    double_well_energy,
    enumerate_posterior,
    enumerate_segmentations,
    exhaustive_tree_oracle,
    gradient_descent,
    grid_tree_oracle,
    layered_basin,
    layered_constants,
    layered_g,
    layered_gradient,
    layered_minima,
    layered_multimodal_energy,
    neighbor_descent,
    pairwise_barrier_approx,
    quadrature_dos_1d,
    ring_volumes_1d,
    seven_mode_energy,
    seven_mode_gradient,
    simulate_sequence,
    t_posterior_energy,
    t_posterior_gradient,
    verify_local_minimum,
)

SYM = build_t_data()
ASYM = build_t_data(a1=2, a2=3)


def descend_t(data, x0):
    return gradient_descent(lambda X: t_posterior_energy(X, data), lambda x: t_posterior_gradient(x, data), x0)


def random_seq(L, seed):
    return "".join("acgt"[c] for c in make_rng(seed).integers(0, 4, L))


# --- t posterior -----------------------------------------------------------------------


def test_t_data_rows():
    assert np.array_equal(SYM.Y[0], [40, 40, 4, 4, 0, 0])
    assert np.array_equal(ASYM.Y[2], [3, 3, 40, 40, 0, 0])
    assert np.allclose(SYM.Y.sum(axis=1), [88] * 6)
    assert np.allclose(ASYM.Y.sum(axis=1), [84, 84, 86, 86, 88, 88])


def test_t_data_validation():
    with pytest.raises(ValueError):
        build_t_data(A=4.0, a1=5.0)


def test_t_energy_direct_substitution():
    """At mu = y_1 the y_1 term vanishes; the rest is a direct sum."""
    nu, p = SYM.nu, SYM.p
    mu = SYM.Y[0]
    ref = sum(0.5 * (nu + p) * math.log(1 + np.sum((y - mu) ** 2) / nu) for y in SYM.Y)
    assert t_posterior_energy(mu, SYM) == pytest.approx(ref, rel=1e-12)


def test_t_energy_vectorised():
    X = make_rng(0).uniform(0, 40, (5, 6))
    assert np.allclose(t_posterior_energy(X, SYM), [t_posterior_energy(x, SYM) for x in X])


def test_t_gradient_matches_finite_differences():
    rng = make_rng(1)
    f = lambda x: t_posterior_energy(x, ASYM)
    for _ in range(100):
        x = rng.uniform(-5, 45, 6)
        g = t_posterior_gradient(x, ASYM)
        eps = 1e-5
        fd = np.array([(f(x + eps * e) - f(x - eps * e)) / (2 * eps) for e in np.eye(6)])
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1.0)


def test_symmetric_minima():
    res = [descend_t(SYM, y) for y in SYM.Y]
    assert all(r.converged for r in res)
    assert all(abs(r.energy - 169.18) < 0.01 for r in res)
    X = np.array([r.x for r in res])
    d = np.linalg.norm(X[:, None] - X[None], axis=-1)
    assert np.all(d[~np.eye(6, dtype=bool)] > 1.0)  # six distinct minima


def test_asymmetric_global_minimum():
    res = min((descend_t(ASYM, y) for y in ASYM.Y), key=lambda r: r.energy)
    assert res.energy == pytest.approx(162.33, abs=0.01)


def test_symmetric_pairwise_barriers():
    mins = [descend_t(SYM, y).x for y in SYM.Y]
    B = pairwise_barrier_approx(mins, lambda X: t_posterior_energy(X, SYM))
    assert np.allclose(np.diag(B), [t_posterior_energy(m, SYM) for m in mins])
    for i, j in ((0, 1), (2, 3), (4, 5)):
        assert B[i, j] == pytest.approx(170.9, abs=0.1)
    cross = [B[i, j] for i in range(6) for j in range(6) if i // 2 != j // 2]
    assert min(cross) == pytest.approx(198.5, abs=0.1)


# --- gradient descent and barriers -------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_descent_on_bowl(x0):
    res = gradient_descent(lambda X: np.sum(np.asarray(X) ** 2, axis=-1), lambda x: 2 * np.asarray(x), x0)
    assert res.converged and res.energy < 1e-14 and np.allclose(res.x, 0, atol=1e-7)


def test_descent_flags_non_convergence():
    res = gradient_descent(lambda X: np.sum(np.asarray(X) ** 2, axis=-1), lambda x: 2 * np.asarray(x), [5.0], max_iter=1, step0=1e-6)
    assert not res.converged


def test_double_well_barrier():
    B = pairwise_barrier_approx([[-1.0], [1.0]], double_well_energy, n_points=101)
    assert B[0, 1] == pytest.approx(1.0) and B[0, 0] == 0.0


def test_pairwise_needs_two_points():
    with pytest.raises(ValueError):
        pairwise_barrier_approx([[0.0]], double_well_energy)


# --- layered surrogate --------------------------------------------------------------------------


def test_layered_origin_and_domain():
    assert layered_multimodal_energy(np.zeros(4)) == 0.0
    assert layered_multimodal_energy(np.array([1.6, 0, 0, 0])) == np.inf


def test_layered_constants_by_scan():
    c = layered_constants()
    t = np.linspace(0, 1.5, 3_000_001)
    g = layered_g(t)
    well = t > 0.75
    assert c.t_star == pytest.approx(t[well][np.argmin(g[well])], abs=1e-6)
    assert c.well == pytest.approx(g[well].min(), abs=1e-10)
    mid = (t > 0) & (t < c.t_star)
    assert c.saddle == pytest.approx(g[mid].max(), abs=1e-10)
    assert (c.t_star, c.well, c.saddle) == pytest.approx((0.97520, 0.97525, 4.25650), abs=5e-5)


def test_layer_counts_and_energies():
    c = layered_constants()
    pts, layer = layered_minima()
    assert list(np.bincount(layer)[1:]) == [1, 8, 24, 32, 16]
    h = layered_multimodal_energy(pts)
    assert np.allclose(h, (layer - 1) * c.well)
    assert [c.minimum_energy(j) for j in (1, 3)] == pytest.approx([0, 2 * c.well])
    assert c.barrier(2) == pytest.approx(c.saddle) and c.barrier(5) == pytest.approx(3 * c.well + c.saddle)


def test_layered_minima_are_critical_and_stable():
    pts, _ = layered_minima()
    assert np.abs(layered_gradient(pts)).max() < 1e-9
    rng = make_rng(2)
    for x in pts:
        assert np.all(layered_multimodal_energy(np.clip(x + rng.normal(0, 1e-3, (20, 4)), -1.5, 1.5)) > layered_multimodal_energy(x))


def test_layered_basin_agrees_with_gradient_flow():
    rng = make_rng(3)
    X = rng.uniform(-1.45, 1.45, (200, 4))
    Y = X.copy()
    for _ in range(4000):  # explicit Euler on the gradient flow, step well below 2 / max curvature
        Y -= 1e-3 * layered_gradient(Y)
    assert np.allclose(Y, layered_basin(X), atol=1e-6)


# --- seven-mode surrogate ----------------------------------------------------------------------------


def test_seven_gradient_matches_finite_differences():
    rng = make_rng(4)
    for _ in range(100):
        x = rng.uniform(SEVEN_BOX[0], SEVEN_BOX[1])
        eps = 1e-6
        fd = np.array([(seven_mode_energy(x + eps * e) - seven_mode_energy(x - eps * e)) / (2 * eps) for e in np.eye(2)])
        assert np.linalg.norm(seven_mode_gradient(x) - fd) <= 1e-5 * max(np.linalg.norm(fd), 1.0)


def test_seven_centres_lower_than_surrounding_ring():
    ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    ring = 0.5 * np.c_[np.cos(ang), np.sin(ang)]
    for c in SEVEN_CENTERS:
        assert seven_mode_energy(c) <= seven_mode_energy(c + ring).min()


def fine_seven_grid(n=400):
    lo, hi = SEVEN_BOX
    h = seven_mode_energy(np.stack(np.meshgrid(np.linspace(lo[0], hi[0], 300), np.linspace(lo[1], hi[1], 300)), -1).reshape(-1, 2))
    return EnergyGrid(np.linspace(h.min(), np.quantile(h, 0.6), n + 1)[1:], lower_edge=float(h.min()) - 1e-9)


def test_seven_grid_tree_structure():
    grid = fine_seven_grid()
    tree = grid_tree_oracle(seven_mode_energy, *SEVEN_BOX, 600, grid)
    leaves = tree.leaves()
    assert len(leaves) == 7 and len(tree.roots) == 1
    mode_of = {n.id: int(np.argmin(np.linalg.norm(SEVEN_CENTERS - n.rep_state, axis=1))) for n in leaves}
    assert sorted(mode_of.values()) == list(range(7))
    assert min(leaves, key=lambda n: n.energy).id == [k for k, m in mode_of.items() if m == 0][0]
    leaf_of = {m: k for k, m in mode_of.items()}

    def lca(modes):
        k = leaf_of[modes[0]]
        while not {leaf_of[m] for m in modes} <= set(tree.leaves_under(k)):
            k = tree.nodes[k].parent
        return tree.nodes[k]

    for group in ([1, 2, 3], [4, 5, 6]):
        own = lca(group)
        assert sorted(mode_of[k] for k in tree.leaves_under(own.id)) == group
        assert own.energy < lca([0] + group).energy


def test_seven_topology_stable_under_refinement():
    grid = fine_seven_grid(60)
    a = grid_tree_oracle(seven_mode_energy, *SEVEN_BOX, 500, grid)
    b = grid_tree_oracle(seven_mode_energy, *SEVEN_BOX, 1000, grid)

    def shape(t, k):
        return sorted(shape(t, c) for c in t.nodes[k].children)

    assert [shape(a, r) for r in a.roots] == [shape(b, r) for r in b.roots]
    assert sorted(n.energy for n in a.barriers()) == sorted(n.energy for n in b.barriers())


def test_grid_oracle_double_well_and_bowl():
    f = lambda X: (X[..., 0] ** 2 - 1) ** 2 + X[..., 1] ** 2
    grid = EnergyGrid(np.linspace(0.1, 3.0, 30), lower_edge=0.0)
    tree = grid_tree_oracle(f, [-2, -2], [2, 2], 401, grid)
    assert len(tree.leaves()) == 2 and len(tree.barriers()) == 1
    assert abs(tree.barriers()[0].energy - 1.0) <= 0.1
    bowl = grid_tree_oracle(lambda X: np.sum(X**2, axis=-1), [-1, -1], [1, 1], 101, grid)
    assert len(bowl.leaves()) == 1 and not bowl.barriers()


def test_grid_oracle_warns_when_too_coarse(caplog):
    grid = fine_seven_grid(20)
    grid_tree_oracle(seven_mode_energy, *SEVEN_BOX, 8, grid, expected_minima=7)
    assert "expected 7" in caplog.text


# --- quadrature ----------------------------------------------------------------------------------


def test_quadrature_examples():
    grid = EnergyGrid(np.linspace(0.1, 1.0, 10), lower_edge=0.0)
    flat = quadrature_dos_1d(lambda X: X[:, 0], 0.0, 1.0, grid, n=100_000)
    assert np.allclose(flat.values, 1.0)
    sq = quadrature_dos_1d(lambda X: X[:, 0] ** 2, -1.0, 1.0, grid, n=2_000_000)
    edges = grid.edges()
    exact = (np.sqrt(edges[1:]) - np.sqrt(edges[:-1])) / grid.widths()  # ring measure of 2 sqrt(u), halved by normalisation
    assert np.allclose(sq.values, exact, rtol=1e-4)
    # away from the singular first ring the ring averages follow 1 / sqrt(u) at the midpoints
    assert np.allclose(sq.values[2:], 0.5 / np.sqrt(grid.midpoints()[2:]), rtol=0.01)
    assert ring_volumes_1d(lambda X: X[:, 0] ** 2, -1.0, 1.0, grid, n=100_000).sum() == pytest.approx(2.0)


# --- segmentation oracles --------------------------------------------------------------------------


def test_simulate_sequence():
    theta = np.array([[1, 0, 0, 0], [0, 0, 0, 1]], dtype=float)
    s = simulate_sequence(10, (6,), theta, seed=0)
    assert s == "aaaaa" + "t" * 5
    big = simulate_sequence(1000, DNA_CHANGE_POINTS, dna_composition(), seed=1)
    bounds = (1,) + DNA_CHANGE_POINTS + (1001,)
    for row, (a, b) in zip(dna_composition(), zip(bounds, bounds[1:])):
        seg = big[a - 1 : b - 1]
        freq = np.array([seg.count(ch) for ch in "acgt"]) / len(seg)
        assert np.all(np.abs(freq - row) <= 3 * np.sqrt(row * (1 - row) / len(seg)))


def test_simulate_validation():
    with pytest.raises(ValueError):
        simulate_sequence(10, (5,), np.full((2, 4), 0.3), seed=0)
    with pytest.raises(ValueError):
        simulate_sequence(10, (5,), np.full((3, 4), 0.25), seed=0)
    with pytest.raises(ValueError):
        simulate_sequence(10, (1,), np.full((2, 4), 0.25), seed=0)


def test_dna_composition_rows():
    th = dna_composition()
    assert np.allclose(th.sum(axis=1), 1)
    assert th[2, 2] == 0.4 and th[2, 0] == 0.2 and np.all(th[4] == 0.25)


SEQ12 = random_seq(12, 11)


def exact_minima(seq, N):
    segs = enumerate_segmentations(len(seq), N)
    h = np.array([segmentation_energy(Z, seq, N) for Z in segs])
    n = len(segs)
    adj = [[j for j in range(n) if j != i and segmentation_distance(segs[i], segs[j]) == 1] for i in range(n)]
    return segs, h, adj


def test_verify_local_minimum_counts_match_oracle():
    segs, h, adj = exact_minima(SEQ12, 2)
    verdict = [verify_local_minimum(Z, SEQ12, 2) for Z in segs]
    brute = [all(h[j] > h[i] for j in adj[i]) for i in range(len(segs))]
    assert verdict == brute
    assert verdict[int(np.argmin(h))]
    tree = exhaustive_tree_oracle(SEQ12, 2)
    assert {n.rep_state.change_points for n in tree.leaves()} == {Z.change_points for Z, v in zip(segs, verdict) if v}


def test_neighbor_descent_matches_exhaustive_basin():
    segs, h, adj = exact_minima(SEQ12, 2)
    model = SegmentationModel(SEQ12, 2)
    for i0 in range(len(segs)):
        i = i0
        while True:
            best = min(adj[i], key=lambda j: (h[j], segs[j].change_points))
            if h[best] >= h[i]:
                break
            i = best
        end = neighbor_descent(segs[i0], model)
        assert end.change_points == segs[i].change_points
        # the endpoint has no strictly lower neighbour; ties make it fail the strict check
        k = [Z.change_points for Z in segs].index(end.change_points)
        assert all(h[j] >= h[k] for j in adj[k])
        if all(h[j] != h[k] for j in adj[k]):
            assert verify_local_minimum(end, model)


def test_exhaustive_oracle_single_leaf_without_change_points():
    tree = exhaustive_tree_oracle(SEQ12, 0)
    assert len(tree.nodes) == 1 and tree.nodes[0].kind == "leaf"


def test_exhaustive_oracle_size_guard():
    with pytest.raises(ValueError):
        enumerate_segmentations(200, 5)


def test_exhaustive_oracle_grid_consistency():
    fine = exhaustive_tree_oracle(SEQ12, 2)
    h = np.array([segmentation_energy(Z, SEQ12, 2) for Z in enumerate_segmentations(12, 2)])
    again = exhaustive_tree_oracle(SEQ12, 2, grid=build_energy_grid(h, len(np.unique(h))))
    assert tree_signature(fine) == tree_signature(again)


def test_enumerate_posterior_properties():
    seq = random_seq(10, 12)
    segs, p = enumerate_posterior(seq, 3, T=1.5)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    logp = dp_forward(seq, 3, T=1.5).count_log_posterior()
    by_k = np.bincount([Z.p for Z in segs], weights=p, minlength=4)
    assert np.allclose(by_k, np.exp(logp), rtol=1e-10, atol=0)
    segs1, p1 = enumerate_posterior(seq, 3)
    h = [segmentation_energy(Z, seq, 3) for Z in segs1]
    assert int(np.argmax(p1)) == int(np.argmin(h))
