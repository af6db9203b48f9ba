import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conflab.exceptions import ContractError, FitError
from conflab.posthoc import (
    CALIBRATORS, CalibrationMap, IsotonicCalibrator, PlattCalibrator, TemperatureScaler,
    apply_calibration, compression_report, fit_isotonic, fit_platt, fit_temperature, softmax,
)

from oracles import monotone_fit_oracle, planted_temperature_set, temperature_grid_oracle


def test_temperature_identity_on_calibrated_logits():
    z, y = planted_temperature_set(scale=1.0, seed=1)
    assert fit_temperature(z, y).params["T"] == pytest.approx(1.0, abs=0.1)


def test_temperature_recovers_planted_scale():
    z, y = planted_temperature_set(scale=2.0, seed=2)
    t = fit_temperature(z, y).params["T"]
    assert t == pytest.approx(2.0, rel=0.1)
    assert t == pytest.approx(temperature_grid_oracle(z, y), abs=0.02)


def test_temperature_limits_and_argmax(rng):
    z = rng.normal(size=(20, 4))
    out = apply_calibration(CalibrationMap("temperature", {"T": 20.0}), z)
    assert np.abs(out - 0.25).max() < 0.05
    np.testing.assert_allclose(apply_calibration(CalibrationMap("temperature", {"T": 1.0}), z), softmax(z))
    cal = apply_calibration(CalibrationMap("temperature", {"T": 3.7}), z)
    assert np.array_equal(cal.argmax(1), z.argmax(1))


def test_temperature_clamped_on_separable_data():
    z = np.array([[10.0, -10.0], [-10.0, 10.0]] * 10)
    y = np.array([0, 1] * 10)
    t = fit_temperature(z, y, iters=5000, lr=5.0).params["T"]
    assert 0.05 <= t <= 20.0


def test_platt_separated_scores():
    s = np.r_[np.full(50, 0.2), np.full(50, 0.8)]
    ok = np.r_[np.zeros(50), np.ones(50)]
    m = fit_platt(s, ok, iters=5000)
    p = apply_calibration(m, s)
    logloss = -np.mean(ok * np.log(p) + (1 - ok) * np.log(1 - p))
    assert logloss < 0.1
    assert m.params["a"] < 0


def test_platt_constant_scores_give_base_rate(rng):
    ok = rng.random(400) < 0.3
    m = fit_platt(np.full(400, 0.6), ok)
    np.testing.assert_allclose(apply_calibration(m, np.array([0.6])), ok.mean(), atol=0.01)


def test_platt_symmetric_midpoint(rng):
    s = rng.uniform(0.05, 0.95, 300)
    ok = rng.random(300) < s
    sym_s = np.r_[s, 1 - s]
    sym_ok = np.r_[ok, ~ok]
    assert apply_calibration(fit_platt(sym_s, sym_ok), np.array([0.5]))[0] == pytest.approx(0.5, abs=0.02)


def test_platt_single_class():
    with pytest.raises(FitError):
        fit_platt([0.2, 0.4], [1, 1])


def test_isotonic_examples():
    s = np.array([0.1, 0.3, 0.5, 0.9])
    ok = np.array([0, 0, 1, 1])
    np.testing.assert_array_equal(apply_calibration(fit_isotonic(s, ok), s), ok)
    m = fit_isotonic([0.9, 0.1], [0, 1])
    np.testing.assert_allclose(m.params["values"], [0.5, 0.5])
    assert apply_calibration(m, np.array([0.9]))[0] == 0.5
    ones = fit_isotonic([0.2, 0.5, 0.7], [1, 1, 1])
    np.testing.assert_array_equal(apply_calibration(ones, np.array([0.0, 0.4, 1.0])), 1.0)


def test_isotonic_ties_pooled_and_clamped():
    m = fit_isotonic([0.4, 0.4, 0.6], [0, 1, 1])
    np.testing.assert_allclose(m.params["values"], [0.5, 1.0])
    np.testing.assert_allclose(apply_calibration(m, np.array([0.0, 0.5, 0.99])), [0.5, 0.5, 1.0])


@pytest.mark.parametrize("pattern", list(itertools.product([0, 1], repeat=6)))
def test_isotonic_matches_exhaustive_oracle(pattern):
    s = np.array([0.05, 0.2, 0.35, 0.5, 0.7, 0.9])
    y = np.array(pattern, dtype=float)
    fitted = apply_calibration(fit_isotonic(s, y), s)
    np.testing.assert_allclose(fitted, monotone_fit_oracle(y), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=40))
def test_maps_are_monotone(pairs):
    s = np.array([p[0] for p in pairs])
    ok = np.array([p[1] for p in pairs])
    grid = np.sort(np.random.default_rng(0).random(1000))
    maps = [fit_isotonic(s, ok)]
    if ok.min() != ok.max():
        maps.append(fit_platt(s, ok, iters=200))
    for m in maps:
        out = apply_calibration(m, grid)
        assert np.all(np.diff(out) >= -1e-12)
        assert np.all((out >= 0) & (out <= 1))


def test_kind_input_mismatch():
    with pytest.raises(ContractError):
        apply_calibration(CalibrationMap("temperature", {"T": 1.0}), np.array([0.2, 0.4]))
    with pytest.raises(ContractError):
        apply_calibration(CalibrationMap("platt", {"a": -1.0, "b": 0.0}), np.zeros((2, 2)))
    with pytest.raises(ContractError):
        CalibrationMap("temperature", {"T": 0.0})
    with pytest.raises(ContractError):
        CalibrationMap("isotonic", {"breakpoints": [0.5, 0.2], "values": [0.1, 0.2]})


def test_identity_passthrough(rng):
    x = rng.random(5)
    np.testing.assert_array_equal(apply_calibration(CalibrationMap("identity"), x), x)


def test_map_json_round_trip():
    maps = [
        CalibrationMap("temperature", {"T": 1.7}),
        CalibrationMap("platt", {"a": -1.2, "b": 0.3}),
        fit_isotonic([0.1, 0.5, 0.8], [0, 1, 1]),
    ]
    grid = np.linspace(0.01, 0.99, 11)
    for m in maps:
        back = CalibrationMap.from_json(m.to_json())
        assert back.kind == m.kind
        assert json.loads(back.to_json()) == json.loads(m.to_json())
        if m.kind != "temperature":
            np.testing.assert_array_equal(apply_calibration(m, grid), apply_calibration(back, grid))


def test_compression_report_cases(rng):
    before = rng.uniform(0.3, 1.0, 200)
    ok = rng.random(200) < 0.8
    same = compression_report(before, before, ok.mean(), ok)
    assert same.delta_var == 0.0
    flat = compression_report(before, np.full(200, ok.mean()), ok.mean(), ok)
    assert flat.delta_var == pytest.approx(before.var())
    assert 0.309 ** 2 - 0.068 ** 2 == pytest.approx(0.0909, abs=1e-4)


def test_ece_not_worse_on_fitting_set(rng):
    from conflab.metrics import evaluate

    s = rng.uniform(0.5, 1.0, 400)
    ok = rng.random(400) < s ** 2
    base = evaluate(s, ok).ece
    for fit in (fit_platt, fit_isotonic):
        assert evaluate(apply_calibration(fit(s, ok), s), ok).ece <= base + 0.01


def test_sklearn_wrappers(rng):
    from sklearn.base import clone

    z, y = planted_temperature_set(n=500, scale=1.5, seed=3)
    ts = TemperatureScaler().fit(z, y)
    assert ts.transform(z).shape == z.shape
    assert clone(ts).get_params() == {"iters": 1000, "lr": 0.1}
    s = rng.random(100)
    ok = rng.random(100) < s
    for est in (PlattCalibrator(), IsotonicCalibrator()):
        out = est.fit(s, ok).transform(s)
        assert out.shape == (100,)
    assert set(CALIBRATORS) == {"temperature", "platt", "isotonic"}
