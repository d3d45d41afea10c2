from __future__ import annotations

import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srampuf import rng
from srampuf.errors import MalformedError, SizeMismatchError, UnreachableError
from srampuf.transfer import (
    REFERENCE_DOUBLE,
    REFERENCE_SINGLE,
    DoubleLogistic,
    SingleLogistic,
    eval_double,
    eval_single,
    fit_double,
    fit_single,
    invert_threshold,
    quantile_pairs,
    read_model_json,
    read_pairs_csv,
    reliable_fraction,
    slope_at_zero,
    threshold_table,
    write_model_json,
    write_threshold_csv,
)

SD_SIGMA = 0.0239


def mp_double(model, x):
    mp.mp.dps = 40
    x = mp.mpf(x)
    return float(model.m / (1 + mp.exp(-model.k1 * x)) + (1 - model.m) / (1 + mp.exp(-model.k2 * x)))


@pytest.fixture(scope="module")
def gaussian_sd():
    return rng.normals(0, rng.STREAM_SYNTHETIC, np.arange(16384), 1)[:, 0] * SD_SIGMA


# k >= 5 /V keeps the curve saturated to 1e-9 at 10 V
doubles = st.builds(DoubleLogistic, st.floats(0.01, 0.99), st.floats(5.0, 5000.0),
                    st.floats(5.0, 5000.0))
singles = st.builds(SingleLogistic, st.floats(5.0, 5000.0))


def test_single_examples():
    assert eval_single(SingleLogistic(37.0), 0.0) == 0.5
    assert abs(eval_single(REFERENCE_SINGLE, 1.0) - 1.0) < 1e-12
    mp.mp.dps = 40
    oracle = float(1 / (1 + mp.exp(-mp.mpf("1.954"))))
    assert eval_single(REFERENCE_SINGLE, 0.01) == pytest.approx(oracle, rel=1e-13)
    assert eval_single(REFERENCE_SINGLE, 0.01) == pytest.approx(0.8759, abs=5e-5)


def test_double_examples():
    assert eval_double(REFERENCE_DOUBLE, 0.0) == 0.5
    v = eval_double(REFERENCE_DOUBLE, 0.030)
    assert v > 0.99
    assert v == pytest.approx(mp_double(REFERENCE_DOUBLE, 0.030), rel=1e-13)
    assert eval_double(REFERENCE_DOUBLE, -0.030) == pytest.approx(1.0 - v, abs=1e-15)


def test_extreme_arguments_do_not_overflow():
    with np.errstate(all="raise"):
        out = eval_double(REFERENCE_DOUBLE, np.array([-1e6, -10.0, 10.0, 1e6]))
    np.testing.assert_array_equal(out, [0.0, 0.0, 1.0, 1.0])


def test_slope_examples():
    assert slope_at_zero(REFERENCE_DOUBLE) == pytest.approx(
        (0.158 * 101.2 + 0.842 * 2348) / 4, rel=1e-14)
    assert abs(slope_at_zero(REFERENCE_DOUBLE) / 500.0 - 1) < 0.02
    assert slope_at_zero(DoubleLogistic(1 - 1e-16, 80.0, 3000.0)) == pytest.approx(20.0)
    assert slope_at_zero(SingleLogistic(195.4)) == pytest.approx(48.85)


@settings(max_examples=60, deadline=None)
@given(doubles)
def test_slope_matches_finite_difference(model):
    h = 1e-6
    fd = (eval_double(model, h) - eval_double(model, -h)) / (2 * h)
    assert fd == pytest.approx(slope_at_zero(model), rel=1e-3)


@settings(max_examples=60, deadline=None)
@given(st.one_of(doubles, singles))
def test_requirements_hold_for_every_model(model):
    assert model(0.0) == 0.5
    assert abs(model(10.0) - 1.0) <= 1e-9
    assert abs(model(-10.0)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(doubles)
def test_odd_symmetry_and_monotonicity(model):
    x = np.linspace(-0.1, 0.1, 1000)
    assert np.max(np.abs(model(x) + model(-x) - 1.0)) <= 1e-12
    grid = np.linspace(-0.1, 0.1, 10000)
    y = model(grid)
    # strict increase away from the double-precision plateaus near 0 and 1
    live = (y > 1e-8) & (y < 1 - 1e-8)
    assert np.all(np.diff(y)[live[1:] & live[:-1]] > 0)
    assert np.all(np.diff(y) >= 0)


def test_reference_strictly_increasing():
    y = eval_double(REFERENCE_DOUBLE, np.linspace(-0.1, 0.1, 10000))
    assert np.all(np.diff(y) > 0)


def test_quantile_pairs():
    pairs = quantile_pairs([-1, 0, 1], [0.1, 0.5, 0.9])
    np.testing.assert_array_equal(pairs, [[-1, 0.1], [0, 0.5], [1, 0.9]])
    np.testing.assert_array_equal(quantile_pairs([1, -1, 0], [0.9, 0.5, 0.1]), pairs)
    with pytest.raises(SizeMismatchError):
        quantile_pairs([1, 2], [0.5])


def test_pairing_reproduces_monotone_graph(gaussian_sd):
    sup = eval_double(REFERENCE_DOUBLE, gaussian_sd)
    pairs = quantile_pairs(gaussian_sd, sup[::-1])
    np.testing.assert_array_equal(pairs[:, 1], eval_double(REFERENCE_DOUBLE, pairs[:, 0]))


def test_single_round_trip(gaussian_sd):
    pairs = quantile_pairs(gaussian_sd, eval_single(REFERENCE_SINGLE, gaussian_sd))
    res = fit_single(pairs)
    assert res.converged
    assert res.model.k == pytest.approx(195.4, rel=0.01)


def test_single_degenerate_pair_is_flat():
    res = fit_single([[0.0, 0.5]])
    assert res.flat and not res.converged


def test_double_beats_single(gaussian_sd):
    pairs = quantile_pairs(gaussian_sd, eval_double(REFERENCE_DOUBLE, gaussian_sd))
    assert fit_double(pairs).residual < fit_single(pairs).residual


def _check_recovery(model, tol_m, tol_k):
    assert abs(model.m - REFERENCE_DOUBLE.m) <= tol_m
    assert model.k1 == pytest.approx(REFERENCE_DOUBLE.k1, rel=tol_k)
    assert model.k2 == pytest.approx(REFERENCE_DOUBLE.k2, rel=tol_k)


def test_double_round_trip_noiseless(gaussian_sd):
    res = fit_double(quantile_pairs(gaussian_sd, eval_double(REFERENCE_DOUBLE, gaussian_sd)))
    assert res.converged and res.model.k1 <= res.model.k2
    _check_recovery(res.model, 0.02, 0.10)


@pytest.fixture(scope="module")
def noisy_pairs(gaussian_sd):
    p = eval_double(REFERENCE_DOUBLE, gaussian_sd)
    sup = np.random.default_rng(2024).binomial(1000, p) / 1000.0
    return quantile_pairs(gaussian_sd, sup)


def test_double_round_trip_noisy(noisy_pairs):
    _check_recovery(fit_double(noisy_pairs).model, 0.05, 0.15)


def test_mirrored_data_fit_identically(noisy_pairs):
    a = fit_double(noisy_pairs).model
    b = fit_double(quantile_pairs(-noisy_pairs[:, 0], 1.0 - noisy_pairs[:, 1])).model
    assert b.m == pytest.approx(a.m, abs=2e-3)
    assert b.k1 == pytest.approx(a.k1, rel=1e-2)
    assert b.k2 == pytest.approx(a.k2, rel=1e-2)


def test_histogram_objective(gaussian_sd):
    pairs = quantile_pairs(gaussian_sd, eval_double(REFERENCE_DOUBLE, gaussian_sd))
    res = fit_double(pairs, objective="histogram")
    assert res.model.m == pytest.approx(REFERENCE_DOUBLE.m, abs=0.05)
    with pytest.raises(ValueError):
        fit_double(pairs, objective="bogus")


def test_canonical_order():
    swapped = DoubleLogistic(0.842, 2348.0, 101.2).canonical()
    assert swapped.k1 == 101.2 and swapped.m == pytest.approx(0.158)
    x = np.linspace(-0.05, 0.05, 101)
    np.testing.assert_allclose(swapped(x), DoubleLogistic(0.842, 2348.0, 101.2)(x), atol=1e-15)


@pytest.mark.parametrize("p", [0.9, 0.95, 0.99, 0.999])
def test_inversion_identity(p):
    th = invert_threshold(REFERENCE_DOUBLE, p)
    assert abs(invert_threshold(REFERENCE_DOUBLE, eval_double(REFERENCE_DOUBLE, th)) - th) <= 2e-5
    assert eval_double(REFERENCE_DOUBLE, th - 2e-5) < p <= eval_double(REFERENCE_DOUBLE, th + 2e-5)


def test_invert_errors():
    for p in (0.5, 1.0, 0.2):
        with pytest.raises(ValueError):
            invert_threshold(REFERENCE_DOUBLE, p)
    with pytest.raises(UnreachableError):
        invert_threshold(SingleLogistic(1.0), 0.9, vdd=1.2)


def test_reliable_fraction(gaussian_sd):
    # the threshold shrinks to the 1e-5 V bisection resolution
    assert reliable_fraction(gaussian_sd, REFERENCE_DOUBLE, 0.5 + 1e-9) >= 0.999
    ps = np.linspace(0.55, 0.999, 10)
    fr = [reliable_fraction(gaussian_sd, REFERENCE_DOUBLE, p) for p in ps]
    assert all(b <= a for a, b in zip(fr, fr[1:]))


def test_threshold_table_sorted(gaussian_sd, tmp_path):
    rows = threshold_table(gaussian_sd, REFERENCE_DOUBLE, (0.95, 0.99, 0.98))
    assert [r[0] for r in rows] == [0.99, 0.98, 0.95]
    text = write_threshold_csv(rows, tmp_path / "t.csv").read_text().splitlines()
    assert text[0] == "probability,sd_th_volts,percentage_of_cells"
    assert len(text) == 4


def test_model_json_round_trip(tmp_path):
    for model in (REFERENCE_DOUBLE, REFERENCE_SINGLE):
        assert read_model_json(write_model_json(model, tmp_path / "m.json")) == model
    (tmp_path / "bad.json").write_text(json.dumps({"type": "triple"}))
    with pytest.raises(MalformedError):
        read_model_json(tmp_path / "bad.json")
    (tmp_path / "bad2.json").write_text("{")
    with pytest.raises(MalformedError):
        read_model_json(tmp_path / "bad2.json")


def test_read_pairs_csv(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("sd_volts,sup1\n0.01,0.9\n-0.01,0.1\n")
    sd, sup = read_pairs_csv(f)
    np.testing.assert_array_equal(sd, [0.01, -0.01])
    f.write_text("sd_volts,sup1\n0.01,1.9\n")
    with pytest.raises(MalformedError) as info:
        read_pairs_csv(f)
    assert info.value.line == 2


def test_invalid_models():
    for args in ((0.0, 1.0, 1.0), (1.0, 1.0, 1.0), (0.5, -1.0, 1.0), (0.5, 1.0, math.inf)):
        with pytest.raises(ValueError):
            DoubleLogistic(*args)
    with pytest.raises(ValueError):
        SingleLogistic(0.0)
