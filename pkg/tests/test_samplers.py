import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sublevel.core import Segmentation, make_rng
from sublevel.samplers import (
    ChainSpec,
    dp_forward,
    dp_sample,
    encode_sequence,
    geometric_ladder,
    metropolis_chain,
    parallel_tempering,
    restrict_energy,
    sample_segmentations,
    segment_log_marginal,
    segmentation_energy,
)
from sublevel.testbeds import enumerate_posterior


def gauss(X):
    return 0.5 * np.sum(np.asarray(X) ** 2, axis=-1)


LO, HI = np.array([-30.0]), np.array([30.0])


def batch_se(x, n_batches=50):
    b = np.array_split(np.asarray(x), n_batches)
    return np.std([v.mean() for v in b], ddof=1) / np.sqrt(n_batches)


# --- independent oracles ---------------------------------------------------------------


def polya_log_prob(codes, alpha=(1, 1, 1, 1)):
    """Sequential predictive product of one Dirichlet-multinomial segment."""
    n = np.zeros(4)
    out = 0.0
    for c in codes:
        out += math.log((alpha[c] + n[c]) / (sum(alpha) + n.sum()))
        n[c] += 1
    return out


def brute_energy(seq, cps, N, alpha=(1, 1, 1, 1)):
    codes = ["acgt".index(ch) for ch in seq]
    L = len(codes)
    bounds = (1,) + tuple(cps) + (L + 1,)
    lik = sum(polya_log_prob(codes[a - 1 : b - 1], alpha) for a, b in zip(bounds, bounds[1:]))
    return math.log(N + 1) + math.log(math.comb(L - 1, len(cps))) - lik


def random_seq(L, seed):
    return "".join("acgt"[c] for c in make_rng(seed).integers(0, 4, L))


# --- Metropolis --------------------------------------------------------------------------


def test_flat_target_accepts_everything():
    run = metropolis_chain(lambda X: np.zeros(len(X)), LO, HI, ChainSpec(1.0, steps=2000, sigma=1.0))
    assert run.acceptance[0] == 1.0


def test_gaussian_variance():
    run = metropolis_chain(gauss, LO, HI, ChainSpec(1.0, steps=200_000, sigma=2.5, seed=1))
    x = run.samples.coords[:, 0]
    assert np.var(x) == pytest.approx(1.0, rel=0.05)


def test_gaussian_mean_and_variance_within_three_standard_errors():
    run = metropolis_chain(gauss, LO, HI, ChainSpec(1.0, steps=200_000, sigma=2.5, seed=2))
    x = run.samples.coords[:, 0]
    assert abs(x.mean()) < 3 * batch_se(x)
    assert abs(np.mean(x**2) - 1.0) < 3 * batch_se(x**2)


def test_no_truncation_equals_minus_infinity_bitwise():
    a = metropolis_chain(gauss, LO, HI, ChainSpec(1.0, None, steps=5000, sigma=1.0, seed=3))
    b = metropolis_chain(gauss, LO, HI, ChainSpec(1.0, -np.inf, steps=5000, sigma=1.0, seed=3))
    assert np.array_equal(a.samples.coords, b.samples.coords)


def test_truncation_flattens_below_cap():
    run = metropolis_chain(gauss, LO, HI, ChainSpec(1.0, 2.0, steps=100_000, sigma=1.0, seed=4))
    x = run.samples.coords[:, 0]
    # below h = 2 the target is flat on (-2, 2)
    inner = x[np.abs(x) < 2]
    counts, _ = np.histogram(inner, bins=4, range=(-2, 2))
    assert counts.min() > 0.8 * counts.max()


def test_start_outside_domain_raises():
    with pytest.raises(ValueError):
        metropolis_chain(gauss, LO, HI, ChainSpec(1.0, x0=np.array([40.0])))


def test_chain_spec_validation():
    for bad in ({"temperature": 0.0}, {"temperature": 1.0, "steps": 0}, {"temperature": 1.0, "burn_in": 1.0}):
        with pytest.raises(ValueError):
            ChainSpec(**bad)


def test_reflection_keeps_samples_in_box():
    run = metropolis_chain(lambda X: np.zeros(len(X)), np.zeros(2), np.ones(2), ChainSpec(1.0, steps=5000, sigma=0.7))
    assert run.samples.coords.min() >= 0 and run.samples.coords.max() <= 1


# --- parallel tempering ------------------------------------------------------------------


def test_identical_rungs_always_swap():
    ladder = [ChainSpec(1.0, steps=2000, sigma=1.0, seed=s) for s in (0, 1)]
    run = parallel_tempering(gauss, LO, HI, ladder, swap_interval=1)
    assert run.swap_acceptance[0] == 1.0


def test_swaps_preserve_rung_marginals():
    ladder = [ChainSpec(T, steps=200_000, sigma=2.5 * np.sqrt(T), seed=10 + i) for i, T in enumerate((1.0, 2.0, 4.0))]
    run = parallel_tempering(gauss, LO, HI, ladder, swap_interval=5, seed=5)
    assert np.all(run.swap_acceptance > 0.3)
    for c, T in enumerate((1.0, 2.0, 4.0)):
        x = run.samples.coords[run.samples.chain_ids == c, 0]
        assert np.var(x) == pytest.approx(T, rel=0.05)


def test_disabled_swaps_reproduce_single_chains():
    ladder = [ChainSpec(T, steps=3000, sigma=1.0, seed=20 + i) for i, T in enumerate((1.0, 3.0))]
    run = parallel_tempering(gauss, LO, HI, ladder, swap_interval=0)
    for c, spec in enumerate(ladder):
        single = metropolis_chain(gauss, LO, HI, spec)
        assert np.array_equal(run.samples.coords[run.samples.chain_ids == c], single.samples.coords)


def test_single_rung_rejected():
    with pytest.raises(ValueError):
        parallel_tempering(gauss, LO, HI, [ChainSpec(1.0)])


def test_pt_deterministic():
    ladder = [ChainSpec(T, steps=2000, sigma=1.0, seed=i) for i, T in enumerate((1.0, 2.0))]
    a = parallel_tempering(gauss, LO, HI, ladder, seed=7)
    b = parallel_tempering(gauss, LO, HI, ladder, seed=7)
    assert np.array_equal(a.samples.coords, b.samples.coords)


# --- restricted energy ---------------------------------------------------------------------


def test_restrict_energy_examples():
    f = restrict_energy(gauss, np.zeros(2), 1.0, 5.0)
    assert f(np.zeros((1, 2)))[0] == 0.0
    assert f(np.array([[1.5, 0.0]]))[0] == np.inf
    assert f(np.array([[0.9, 0.0]]))[0] == pytest.approx(0.405)
    g = restrict_energy(gauss, np.zeros(2), 10.0, 1.0)
    assert g(np.array([[2.0, 0.0]]))[0] == np.inf


def test_restricted_chain_stays_below_cap():
    f = restrict_energy(gauss, np.zeros(2), 3.0, 1.5)
    run = metropolis_chain(f, np.full(2, -5.0), np.full(2, 5.0), ChainSpec(2.0, steps=20000, sigma=1.0, x0=np.zeros(2)))
    assert run.samples.energies.max() < 1.5
    assert np.linalg.norm(run.samples.coords, axis=1).max() <= 3.0


def test_geometric_ladder():
    t = geometric_ladder(0.2, 4.0, 10)
    assert t[0] == pytest.approx(0.2) and t[-1] == pytest.approx(4.0)
    assert np.allclose(t[1:] / t[:-1], (20.0) ** (1 / 9))


# --- segment marginals and energies ----------------------------------------------------------


def test_segment_marginal_examples():
    assert segment_log_marginal((2, 0, 0, 0)) == pytest.approx(math.log(0.1))
    assert segment_log_marginal((0, 0, 0, 0)) == 0.0
    assert segment_log_marginal((1, 1, 1, 1)) == pytest.approx(math.log(1 / 840))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=0, max_size=30), st.lists(st.floats(0.2, 5), min_size=4, max_size=4))
def test_segment_marginal_matches_polya_product(codes, alpha):
    counts = np.bincount(codes, minlength=4)
    assert segment_log_marginal(counts, alpha) == pytest.approx(polya_log_prob(codes, alpha), abs=1e-9)


def test_energy_matches_brute_force_and_ratios():
    seq = random_seq(8, 0)
    segs, probs = enumerate_posterior(seq, 2)
    h = np.array([segmentation_energy(Z, seq, 2) for Z in segs])
    ref = np.array([brute_energy(seq, Z.change_points, 2) for Z in segs])
    assert np.allclose(h, ref, atol=1e-10)
    i, j = 0, len(segs) - 1
    assert math.exp(h[j] - h[i]) == pytest.approx(probs[i] / probs[j], rel=1e-10)


def test_energy_is_pure():
    seq = random_seq(30, 1)
    Z = Segmentation((10, 20), 30, 3)
    assert segmentation_energy(Z, seq, 3) == segmentation_energy(Z, seq, 3)


def test_occam_on_constant_sequence():
    seq = "a" * 8
    h0 = segmentation_energy(Segmentation((), 8, 2), seq, 2)
    assert all(h0 < segmentation_energy(Segmentation((z,), 8, 2), seq, 2) for z in range(2, 9))


def test_energy_rejects_mismatched_segmentation():
    with pytest.raises(ValueError):
        segmentation_energy(Segmentation((3,), 9, 2), "acgtacgt", 2)


def test_encode_rejects_unknown_letters():
    with pytest.raises(ValueError):
        encode_sequence("acgn")


# --- dynamic programming -----------------------------------------------------------------------


def test_dp_base_row():
    seq = random_seq(15, 2)
    tab = dp_forward(seq, 3, T=2.0)
    assert np.allclose(tab.forward[0], tab.seg_logmarg[0] / 2.0)


def test_dp_three_term_hand_enumeration():
    seq = "aacc"
    tab = dp_forward(seq, 1)
    codes = [0, 0, 1, 1]
    terms = [polya_log_prob(codes[: z - 1]) + polya_log_prob(codes[z - 1 :]) + math.log(1 / 3) for z in (2, 3, 4)]
    assert tab.forward[1, 3] == pytest.approx(np.logaddexp.reduce(terms), abs=1e-12)


def test_dp_count_marginals_match_enumeration():
    seq = random_seq(20, 3)
    tab = dp_forward(seq, 3)
    logp = tab.count_log_posterior()
    L, N = 20, 3
    log_w = {k: [] for k in range(N + 1)}
    for k in range(N + 1):
        for cps in itertools.combinations(range(2, L + 1), k):
            log_w[k].append(-brute_energy(seq, cps, N))
    ref = np.array([np.logaddexp.reduce(log_w[k]) for k in range(N + 1)])
    ref = np.exp(ref - np.logaddexp.reduce(ref))
    assert np.allclose(np.exp(logp), ref, rtol=1e-10, atol=0)


def test_dp_requires_n_below_length():
    with pytest.raises(ValueError):
        dp_forward("acgt", 4)


def test_dp_zero_change_points_only_empty():
    draws = dp_sample(dp_forward(random_seq(12, 4), 0), 100, seed=0)
    assert all(Z.change_points == () for Z in draws)


def test_dp_exact_total_variation():
    seq = random_seq(8, 5)
    segs, probs = enumerate_posterior(seq, 2)
    index = {Z.change_points: i for i, Z in enumerate(segs)}
    draws = dp_sample(dp_forward(seq, 2), 200_000, seed=1)
    counts = np.bincount([index[Z.change_points] for Z in draws], minlength=len(segs))
    assert 0.5 * np.abs(counts / counts.sum() - probs).sum() < 0.01


def test_dp_large_temperature_count_law():
    """All tempered factors flatten: P(p=k) tends to C(L-1, k) / sum."""
    L, N = 10, 3
    draws = dp_sample(dp_forward(random_seq(L, 6), N, T=1e6), 100_000, seed=2)
    p = np.bincount([Z.p for Z in draws], minlength=N + 1) / len(draws)
    ref = np.array([math.comb(L - 1, k) for k in range(N + 1)], dtype=float)
    ref /= ref.sum()
    assert np.all(np.abs(p - ref) < 4 * np.sqrt(ref * (1 - ref) / len(draws)))


def test_dp_sample_deterministic_and_valid():
    tab = dp_forward(random_seq(40, 7), 4, T=1.5)
    a = dp_sample(tab, 500, seed=3)
    assert a == dp_sample(tab, 500, seed=3)
    assert all(Z.seq_len == 40 and Z.p <= 4 for Z in a)


def test_sample_segmentations_tags_chains():
    s = sample_segmentations(random_seq(30, 8), 3, [0.5, 1.0, 2.0], 200, seed=0)
    assert len(s) == 600
    assert np.array_equal(np.unique(s.chain_ids), [0, 1, 2])
    assert np.all(np.isneginf(s.truncations))
    h = [segmentation_energy(Z, random_seq(30, 8), 3) for Z in s.segmentations[:20]]
    assert np.allclose(h, s.energies[:20])
