import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sublevel.core import (
    EnergyGrid,
    GridError,
    Sample,
    SampleSet,
    Segmentation,
    assign_level_sets,
    build_energy_grid,
    make_rng,
    read_samples,
    sample_from_json,
    sample_to_json,
    subsample,
    write_samples,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


# --- types ------------------------------------------------------------------------


def test_segmentation_segments_partition_positions():
    Z = Segmentation((3, 9), 10, 2)
    assert Z.segments() == [(1, 3), (3, 9), (9, 11)]
    assert Z.p == 2


@pytest.mark.parametrize(
    "cps, L, N",
    [((1,), 10, 2), ((11,), 10, 2), ((5, 5), 10, 2), ((6, 4), 10, 2), ((2, 3, 4), 10, 2), ((), 5, 5), ((), 5, -1)],
)
def test_segmentation_rejects_invalid(cps, L, N):
    with pytest.raises(ValueError):
        Segmentation(cps, L, N)


def test_sample_rejects_nonpositive_temperature_and_nan_state():
    with pytest.raises(ValueError):
        Sample(np.zeros(2), 0.0, temperature=0.0)
    with pytest.raises(ValueError):
        Sample(np.array([np.nan]), 0.0)


def test_sampleset_none_truncation_is_minus_inf():
    s = SampleSet([1.0, 2.0], 0, 1.0, None, coords=np.zeros((2, 1)))
    assert np.all(s.truncations == -np.inf)
    assert s.to_samples()[0].truncation is None


def test_sampleset_rejects_mixed_kinds():
    with pytest.raises(ValueError):
        SampleSet.from_samples([Sample(np.zeros(1), 0.0), Sample(Segmentation((), 3, 1), 0.0)])


def test_rng_substreams_differ_and_repeat():
    a = make_rng(5, 1).random(4)
    assert np.array_equal(a, make_rng(5, 1).random(4))
    assert not np.array_equal(a, make_rng(5, 2).random(4))
    assert not np.array_equal(a, make_rng(5).random(4))


# --- grids --------------------------------------------------------------------------------


def test_equal_count_median_split():
    grid = build_energy_grid([1, 2, 3, 4], 2)
    assert np.array_equal(assign_level_sets([1, 2, 3, 4], grid), [0, 0, 1, 1])


def test_single_ring_holds_everything():
    e = np.arange(11.0)
    grid = build_energy_grid(e, 1)
    assert grid.M == 1
    assert np.all(assign_level_sets(e, grid) == 0)


def test_equal_count_exponential_draw_exact_sizes():
    e = make_rng(0).exponential(size=10000)
    grid = build_energy_grid(e, 50)
    counts = np.bincount(assign_level_sets(e, grid), minlength=50)
    assert np.all(counts == 200)


def test_equal_width_uniform_spacing():
    grid = build_energy_grid([0.0, 10.0], 5, "equal-width")
    assert np.allclose(np.diff(grid.boundaries[:-1]), 2.0)
    assert grid.boundaries[-1] > 10.0
    assert np.allclose(grid.widths(), [2, 2, 2, 2, 2], atol=1e-6)


def test_grid_rejects_too_many_levels():
    with pytest.raises(GridError):
        build_energy_grid([1.0, 1.0, 2.0], 3)


def test_grid_with_one_level_per_distinct_energy():
    e = [0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 3.0]
    grid = build_energy_grid(e, 4)
    assert np.array_equal(np.bincount(assign_level_sets(e, grid)), [3, 1, 2, 1])


def test_assignment_half_open():
    grid = EnergyGrid(np.array([1.0, 2.0]))
    assert list(assign_level_sets([0.5, 1.0, 1.999], grid)) == [0, 1, 1]


def test_assignment_out_of_grid_names_sample():
    grid = EnergyGrid(np.array([1.0, 2.0]))
    with pytest.raises(GridError, match="sample 1"):
        assign_level_sets([0.5, 2.0], grid)


def test_assignment_conserves_count():
    e = make_rng(1).normal(size=10000)
    grid = build_energy_grid(e, 37)
    assert np.bincount(assign_level_sets(e, grid), minlength=37).sum() == 10000


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=1, max_size=200), st.integers(1, 20), st.sampled_from(["equal-count", "equal-width"]))
def test_grid_properties(energies, M, strategy):
    distinct = len(set(energies))
    if strategy == "equal-count" and M > distinct:
        with pytest.raises(GridError):
            build_energy_grid(energies, M, strategy)
        return
    if strategy == "equal-width" and distinct == 1 and M > 1:
        return
    grid = build_energy_grid(energies, M, strategy)
    assert np.all(np.diff(grid.boundaries) > 0)
    rings = assign_level_sets(energies, grid)
    order = np.argsort(energies, kind="stable")
    assert np.all(np.diff(rings[order]) >= 0)
    assert len(rings) == len(energies)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=20, max_size=300, unique=True), st.integers(1, 10))
def test_equal_count_sizes_without_ties(energies, M):
    grid = build_energy_grid(energies, M)
    counts = np.bincount(assign_level_sets(energies, grid), minlength=M)
    n = len(energies)
    assert set(counts.tolist()) <= {n // M, math.ceil(n / M)}


# --- subsampling -----------------------------------------------------------------------


def _chains(n, k=2):
    return SampleSet(np.arange(n, dtype=float), np.arange(n) % k, 1.0, None, coords=np.arange(n, dtype=float)[:, None])


def test_subsample_identity():
    s = _chains(10)
    assert np.array_equal(subsample(s, 1.0, 3).energies, s.energies)


def test_subsample_count_distinct_and_deterministic():
    s = _chains(1000, 3)
    a = subsample(s, 0.2, 7)
    b = subsample(s, 0.2, 7)
    assert len(a) == 200
    assert len(np.unique(a.energies)) == 200
    assert np.array_equal(a.energies, b.energies)


def test_subsample_keeps_chain_shares():
    s = SampleSet(np.arange(1000.0), np.r_[np.zeros(900), np.ones(100)], 1.0, None, coords=np.zeros((1000, 1)))
    sub = subsample(s, 0.05, 1)
    assert np.bincount(sub.chain_ids).tolist() == [45, 5]


def test_subsample_errors():
    with pytest.raises(ValueError):
        subsample(_chains(5), 0.0, 1)
    with pytest.raises(ValueError):
        subsample(_chains(5).take([]), 0.5, 1)


# --- sample files ------------------------------------------------------------------------


def test_json_key_order_and_roundtrip():
    s = Sample(np.array([1.5, -2.0]), 3.25, chain_id=4, temperature=0.5, truncation=7.0)
    line = sample_to_json(s)
    assert list(json.loads(line)) == ["chain", "temp", "trunc", "energy", "state"]
    back = sample_from_json(line)
    assert np.array_equal(back.state, s.state) and back.energy == 3.25 and back.truncation == 7.0


def test_json_segmentation_and_any_key_order():
    rec = {"state": {"seg": {"max_n": 2, "len": 10, "cps": [3, 9]}}, "energy": 1.0, "trunc": None, "temp": 1.0, "chain": 0}
    s = sample_from_json(json.dumps(rec))
    assert s.state == Segmentation((3, 9), 10, 2)
    assert s.truncation is None


def test_file_roundtrip(tmp_path):
    s = _chains(6)
    path = tmp_path / "s.jsonl"
    write_samples(path, s)
    back = read_samples(path)
    assert np.array_equal(back.coords, s.coords)
    assert np.array_equal(back.chain_ids, s.chain_ids)


def test_reader_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(sample_to_json(Sample(np.zeros(1), 0.0)) + "\n{not json}\n")
    with pytest.raises(ValueError, match=":2"):
        read_samples(path)
