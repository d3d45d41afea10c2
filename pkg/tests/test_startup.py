from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import offset_cell
from srampuf.errors import EmptySetError, MalformedError
from srampuf.separatrix import compute_sd
from srampuf.startup import (
    NoiseSpec,
    StartupDataset,
    StartupRecord,
    _run_sup,
    cell_ber,
    classify_regions,
    ingest_dataset,
    mean_ber,
    read_spatial_map,
    region_report,
    simulate_dataset,
    simulate_sup,
    spatial_map,
    write_bitmap,
    write_counts_csv,
)
from srampuf.variation import sd_sweep

BINOMIAL_HALF_BOUND = 4.0 * math.sqrt(0.25 / 1000)


@pytest.fixture(scope="module")
def biased_cell(cell):
    # weak P2 side: a few millivolts of S1 bias
    return offset_cell(cell, p2=0.005)


@pytest.fixture(scope="module")
def biased_sd(biased_cell, env):
    return compute_sd(biased_cell, env).sd


def test_noiseless_trials_repeat(biased_cell, env, biased_sd):
    assert biased_sd > 0
    rec = simulate_sup(biased_cell, env, noise=NoiseSpec(0.0), n_trials=1000)
    assert rec.sup1 == 1.0
    assert rec.n_ones == 1000 and rec.sup0 == 0.0


def test_symmetric_cell_is_fair_coin(cell, env):
    rec = simulate_sup(cell, env, noise=NoiseSpec(2e-3), n_trials=1000, seed=5)
    assert abs(rec.sup1 - 0.5) <= BINOMIAL_HALF_BOUND


def test_large_sd_dominates_noise(cell, env):
    for offsets, one in (({"p2": 0.03}, True), ({"p1": 0.03}, False)):
        c = offset_cell(cell, **offsets)
        sd = compute_sd(c, env).sd
        sigma = abs(sd) / 5.0
        rec = simulate_sup(c, env, noise=NoiseSpec(sigma), n_trials=1000, seed=2)
        assert (sd > 0) == one
        assert (rec.sup1 if one else rec.sup0) >= 0.999


def test_noise_pulls_toward_half(biased_cell, env, biased_sd):
    n = 5000
    sup = []
    for f in (0.0, 0.5, 1.0, 1.5, 2.0):
        rec = simulate_sup(biased_cell, env, noise=NoiseSpec(f * biased_sd), n_trials=n, seed=9)
        sup.append(rec.sup1)
    slack = 3.0 * math.sqrt(0.25 / n)
    dist = [abs(s - 0.5) for s in sup]
    assert dist[0] == 0.5
    for a, b in zip(dist, dist[1:]):
        assert b <= a + slack
    assert dist[-1] < dist[0] - 0.05
    assert all(s > 0.5 for s in sup)


def test_shortcut_matches_brute_force(small_population, env):
    args = (small_population.packed(), small_population.cell_ids, env)
    from srampuf.dynamics import DEFAULT_INTEGRATOR, DEFAULT_RAMP
    for sigma in (2e-3, 6e-3):
        fast = _run_sup(*args, DEFAULT_RAMP, DEFAULT_INTEGRATOR, NoiseSpec(sigma), 60, 4, 1)
        slow = _run_sup(*args, DEFAULT_RAMP, DEFAULT_INTEGRATOR, NoiseSpec(sigma), 60, 4, 1,
                        shortcut=False)
        np.testing.assert_array_equal(fast[0], slow[0])
        np.testing.assert_array_equal(fast[1], slow[1])


def test_worker_count_does_not_change_counts(small_population, env):
    runs = [simulate_dataset(small_population, env, 8, 8, noise=NoiseSpec(3e-3), n_trials=40,
                             seed=7, workers=w) for w in (1, 3)]
    np.testing.assert_array_equal(runs[0].n_ones, runs[1].n_ones)


def test_exhausted_retries_are_counted(cell, env):
    from srampuf.dynamics import DEFAULT_INTEGRATOR, DEFAULT_RAMP
    packed = cell.packed()[None, :]
    ones, ex, _ = _run_sup(packed, [0], env, DEFAULT_RAMP, DEFAULT_INTEGRATOR, NoiseSpec(1e-3),
                           40, 3, 1, max_retries=0)
    # both clamped offsets are zero about a quarter of the time; the symmetric
    # cell then sits on the diagonal and the tie scores '0'
    assert 0 < ex[0] < 40
    assert ones[0] <= 40 - ex[0]


def test_record_identity():
    r = StartupRecord.from_counts(3, 990, 1000)
    assert r.sup1 == 0.99 and r.sup0 == 0.01
    assert r.sup0 + r.sup1 == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        StartupRecord.from_counts(0, 1001, 1000)
    with pytest.raises(ValueError):
        StartupRecord(0, 10, 3, 6, 0.3, 0.7)


def test_ingest_counts(tmp_path):
    f = tmp_path / "counts.csv"
    f.write_text("cell_id,n_ones,n_trials\n0,990,1000\n")
    ds = ingest_dataset(f)
    rec = ds.records[0]
    assert rec.sup1 == 0.99
    assert cell_ber(rec) == 0.01
    assert ds.source == "measured" and (ds.rows, ds.cols) == (1, 1)


def test_ingest_bitmap(tmp_path):
    f = tmp_path / "bits.txt"
    f.write_text("1 1 2\n01\n")
    rec = ingest_dataset(f).records[0]
    assert rec.n_ones == 1 and rec.sup1 == 0.5


def test_ingest_rejects_bad_counts(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("cell_id,n_ones,n_trials\n0,5,10\n1,11,10\n")
    with pytest.raises(MalformedError) as info:
        ingest_dataset(f)
    assert info.value.line == 3


@pytest.mark.parametrize("text", ["", "cell_id,n_ones\n0,1\n", "2 1 3\n010\n",
                                  "1 1 3\n0120\n", "cell_id,n_ones,n_trials\n1,0,5\n"])
def test_ingest_rejects_malformed(tmp_path, text):
    f = tmp_path / "x.txt"
    f.write_text(text)
    with pytest.raises(MalformedError):
        ingest_dataset(f)


def test_ingest_geometry(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("cell_id,n_ones,n_trials\n" + "".join(f"{k},{k},9\n" for k in range(6)))
    ds = ingest_dataset(f, cols=3)
    assert (ds.rows, ds.cols) == (2, 3)
    with pytest.raises(MalformedError):
        ingest_dataset(f, rows=4)


def test_regions_examples():
    assert classify_regions([1.0] * 10) == (0.0, 0.0, 1.0)
    sup = [0.0] * 46 + [1.0] * 46 + [0.5] * 8
    a0, b, a1 = classify_regions(sup)
    assert a0 + a1 == 0.92 and b == 0.08
    with pytest.raises(EmptySetError):
        classify_regions([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 100), min_size=1, max_size=200))
def test_regions_sum_to_one(ones):
    a0, b, a1 = classify_regions(np.array(ones) / 100.0)
    assert min(a0, b, a1) >= 0
    assert abs(a0 + b + a1 - 1.0) < 1e-12


def test_ber_examples():
    assert cell_ber(StartupRecord.from_counts(0, 99, 100)) == 0.01
    assert cell_ber(StartupRecord.from_counts(0, 1, 100)) == 0.01
    assert cell_ber(StartupRecord.from_counts(0, 50, 100)) == 0.5
    assert mean_ber([0.0, 1.0, 1.0, 0.0]) == 0.0
    assert mean_ber([0.01, 0.97]) == pytest.approx(0.02, abs=1e-15)


def test_spatial_map_round_trip(tmp_path):
    ds = StartupDataset.from_counts([1, 2, 3, 4], 8, 2, 2)
    path = spatial_map(ds, tmp_path / "map.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 2 and all(len(ln.split(",")) == 2 for ln in lines)
    np.testing.assert_array_equal(read_spatial_map(path).ravel(), ds.sup1)
    const = StartupDataset.from_counts([3] * 6, 4, 3, 2)
    assert np.all(read_spatial_map(spatial_map(const, tmp_path / "c.csv")) == 0.75)


def test_ingest_simulate_parity(small_population, env, tmp_path):
    ds = simulate_dataset(small_population, env, 8, 8, noise=NoiseSpec(3e-3), n_trials=30,
                          seed=1, keep_bits=True)
    again = ingest_dataset(write_counts_csv(ds, tmp_path / "c.csv"), rows=8, cols=8)
    assert again.records == ds.records
    from_bits = ingest_dataset(write_bitmap(ds.bits, 8, 8, tmp_path / "b.txt"))
    assert from_bits.records == ds.records
    np.testing.assert_array_equal(from_bits.bits, ds.bits)


def test_region_report_schema(small_population, env):
    sd = sd_sweep(small_population, env)
    ds = simulate_dataset(small_population, env, 8, 8, noise=NoiseSpec(2e-3), n_trials=20,
                          sd_records=sd)
    rep = region_report(ds)
    for key in ("mean_ber", "fraction_A0", "fraction_B", "fraction_A1"):
        assert key in rep
    assert rep["fraction_A0"] + rep["fraction_B"] + rep["fraction_A1"] == pytest.approx(1.0)


def test_noiseless_dataset_is_binary(small_population, env):
    ds = simulate_dataset(small_population, env, 8, 8, n_trials=50)
    assert set(np.unique(ds.sup1)) <= {0.0, 1.0}
