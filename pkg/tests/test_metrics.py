from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srampuf.errors import EmptySetError, MalformedError, SizeMismatchError
from srampuf.metrics import (
    NOT_AVAILABLE,
    CellMask,
    PufResponse,
    bit_aliasing,
    metric_report,
    read_mask_json,
    read_response_file,
    reliability,
    sample_responses,
    select_mask,
    select_mask_from_sd,
    uniformity,
    uniqueness,
    write_mask_json,
    write_response_file,
)
from srampuf.startup import StartupDataset
from srampuf.transfer import REFERENCE_DOUBLE, invert_threshold


def resp(s, chip="c"):
    return PufResponse.from_string(chip, s)


def random_responses(n, length, seed):
    g = np.random.default_rng(seed)
    return [PufResponse(f"c{k}", g.integers(0, 2, length)) for k in range(n)]


bit_sets = st.integers(1, 64).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                       min_size=2, max_size=6))


def test_uniqueness_examples():
    assert uniqueness([resp("0110"), resp("0110")]) == 0.0
    assert uniqueness([resp("0110"), resp("1001")]) == 100.0
    assert abs(uniqueness(random_responses(20, 4096, 3)) - 50.0) <= 1.5
    with pytest.raises(SizeMismatchError):
        uniqueness([resp("01"), resp("011")])
    with pytest.raises(EmptySetError):
        uniqueness([resp("01")])


def test_uniformity_examples():
    assert uniformity(resp("1111")) == 100.0
    assert uniformity(resp("0000")) == 0.0
    assert uniformity(resp("0101")) == 50.0


def test_bit_aliasing_examples():
    assert bit_aliasing([resp("111"), resp("111")]) == 100.0
    assert bit_aliasing([resp("0110"), resp("1001")]) == 50.0


def test_reliability_examples():
    ref = resp("0" * 100)
    assert reliability(ref, [ref, ref]) == 100.0
    assert reliability(ref, [resp("1" + "0" * 99)]) == pytest.approx(99.0, abs=1e-12)
    with pytest.raises(EmptySetError):
        reliability(ref, [])


def test_reliability_of_noisy_reads():
    ds = StartupDataset.from_counts([97] * 2000, 100, 40, 50)
    reads = sample_responses(ds, 21, seed=4)
    ref = PufResponse("ref", np.ones(2000))
    # expected 97%; 20 reads of 2000 cells give a standard error near 0.09 points
    assert abs(reliability(ref, reads[1:]) - 97.0) <= 4 * 100 * math.sqrt(0.03 * 0.97 / 40000)


@settings(max_examples=60, deadline=None)
@given(bit_sets, st.randoms())
def test_metric_properties(rows, rnd):
    rs = [PufResponse(f"c{k}", r) for k, r in enumerate(rows)]
    u = uniqueness(rs)
    shuffled = list(rs)
    rnd.shuffle(shuffled)
    assert uniqueness(shuffled) == pytest.approx(u, abs=1e-9)
    assert uniqueness([PufResponse(r.chip_id, 1 - r.bits) for r in rs]) == pytest.approx(u, abs=1e-9)
    assert bit_aliasing(rs) == pytest.approx(np.mean([uniformity(r) for r in rs]), abs=1e-9)
    assert reliability(rs[0], [rs[0]]) == 100.0


def test_response_validation():
    with pytest.raises(EmptySetError):
        PufResponse("x", [])
    with pytest.raises(ValueError):
        PufResponse.from_string("x", "0120")
    assert resp("0110").to_string() == "0110"


def test_select_mask():
    sup_ones = [0] * 46 + [100] * 46 + [50] * 8
    ds = StartupDataset.from_counts(sup_ones, 100, 10, 10)
    mask = select_mask(ds, 0.91)
    assert len(mask) == 100
    assert mask.selected_count / len(mask) == 0.92
    ds2 = StartupDataset.from_counts([0, 1, 99, 100], 100, 2, 2)
    np.testing.assert_array_equal(select_mask(ds2, 1.0).bits, [1, 0, 0, 1])
    with pytest.raises(ValueError):
        select_mask(ds2, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=80), st.floats(0.51, 1.0),
       st.floats(0.51, 1.0))
def test_select_mask_monotone(ones, p, q):
    ds = StartupDataset.from_counts(ones, 50, len(ones), 1)
    lo, hi = sorted((p, q))
    a, b = select_mask(ds, lo).bits, select_mask(ds, hi).bits
    assert np.all(b <= a)


def test_mask_from_sd():
    th = invert_threshold(REFERENCE_DOUBLE, 0.98)
    mask = select_mask_from_sd([-1.01 * th, -0.5 * th, 0.0, 1.01 * th], REFERENCE_DOUBLE, 0.98)
    np.testing.assert_array_equal(mask.bits, [1, 0, 0, 1])


def test_sample_responses_deterministic():
    ds = StartupDataset.from_counts([0, 5, 10, 3], 10, 2, 2)
    a = sample_responses(ds, 5, seed=1)
    b = sample_responses(ds, 5, seed=1)
    assert [r.to_string() for r in a] == [r.to_string() for r in b]
    assert all(r.bits[0] == 0 and r.bits[2] == 1 for r in a)


def test_report_and_na():
    one = metric_report({"a": [resp("0101")]})
    assert one["uniformity"]["value"] == 50.0
    for key in ("uniqueness", "bit_aliasing", "reliability"):
        assert one[key]["value"] == NOT_AVAILABLE
    two = metric_report({"a": [resp("0101"), resp("0111")], "b": [resp("1010")]})
    assert two["uniqueness"] == {"value": 100.0, "ideal": 50.0}
    assert two["reliability"]["value"] == 75.0
    masked = metric_report({"a": [resp("0101")], "b": [resp("0110")]}, CellMask([1, 1, 0, 0]))
    assert masked["uniqueness"]["value"] == 0.0 and masked["length"] == 2


def test_response_files(tmp_path):
    reads = [resp("0101"), resp("0111")]
    chip, back = read_response_file(write_response_file(reads, tmp_path / "chipA.txt"))
    assert chip == "chipA" and [r.to_string() for r in back] == ["0101", "0111"]
    (tmp_path / "j.json").write_text(json.dumps({"chip_id": "x", "reads": ["01", "11"]}))
    assert read_response_file(tmp_path / "j.json")[0] == "x"
    (tmp_path / "bad.txt").write_text("0101\n011\n")
    with pytest.raises(MalformedError) as info:
        read_response_file(tmp_path / "bad.txt")
    assert info.value.line == 2


def test_mask_file_round_trip(tmp_path):
    mask = CellMask([1, 0, 1, 1])
    back = read_mask_json(write_mask_json(mask, tmp_path / "m.json"))
    np.testing.assert_array_equal(back.bits, mask.bits)
    (tmp_path / "bad.json").write_text(json.dumps({"length": 3, "selected_count": 1, "bits": "11"}))
    with pytest.raises(MalformedError):
        read_mask_json(tmp_path / "bad.json")
