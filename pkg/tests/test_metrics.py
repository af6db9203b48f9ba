import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conflab.exceptions import ContractError
from conflab.metrics import bin_index, diversity, evaluate, guess_vs_abstain, passes_gate, score_cal

from oracles import hand_binned_ece


def test_constant_conf_at_accuracy():
    ok = np.array([1, 1, 1, 0] * 25, dtype=bool)
    r = evaluate(np.full(100, 0.75), ok)
    assert r.ece == pytest.approx(0.0, abs=1e-15)


def test_all_ones_half_correct():
    r = evaluate(np.ones(10), np.arange(10) % 2 == 0)
    assert r.ece == pytest.approx(0.5) and r.mce == pytest.approx(0.5)


def test_four_point_hand_case():
    r = evaluate([0.2, 0.2, 0.8, 0.8], [False, False, True, True], n_bins=10)
    assert r.ece == pytest.approx(0.2)


@pytest.mark.parametrize("seed", range(20))
def test_ece_matches_hand_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    conf = rng.random(n)
    conf[: n // 4] = np.round(conf[: n // 4] * 15) / 15  # exercise bin edges
    ok = rng.random(n) < 0.6
    r = evaluate(conf, ok, 15)
    ece, mce = hand_binned_ece(conf, ok, 15)
    assert abs(r.ece - ece) < 1e-12 and abs(r.mce - mce) < 1e-12
    assert abs(r.recompute_ece() - r.ece) < 1e-12
    assert r.mce >= r.ece - 1e-15


def test_bins_include_one_in_last():
    assert bin_index(np.array([0.0, 1 / 15, 0.999, 1.0]), 15).tolist() == [0, 1, 14, 14]


def test_gate():
    assert passes_gate(0.05, 0.2)
    assert not passes_gate(0.10, 0.2)
    assert not passes_gate(0.05, 0.15)
    r = evaluate(np.r_[np.full(50, 0.1), np.full(50, 0.9)], np.r_[np.arange(50) < 5, np.arange(50) < 45])
    assert r.passes_both == passes_gate(r.ece, r.std_conf)


def test_diversity():
    assert diversity(np.full(5, 0.3)) == (0.0, 0.0)
    std, norm = diversity(np.r_[np.zeros(5), np.ones(5)])
    assert std == pytest.approx(0.5) and norm == pytest.approx(1.0)
    assert not passes_gate(0.0, 0.021)


def test_score_cal():
    assert score_cal(0.8, 0.3, 0.7, 0.0, 0.0) == pytest.approx(0.8)
    assert score_cal(0.8, 0.0, 1.0, 1.0, 1.0) == pytest.approx(1.6)
    assert score_cal(0.9, 0.1, 0.5) == pytest.approx(0.9 * math.exp(-0.1) * 1.5)


def test_guess_vs_abstain():
    assert guess_vs_abstain(0.0, 0.4) == pytest.approx((0.6, 0.6))
    assert guess_vs_abstain(0.7, 0.0) == (1.0, 1.0)
    g, a = guess_vs_abstain(0.3, 0.5)
    assert g == pytest.approx(0.65) and a == pytest.approx(0.5)


def test_contracts():
    with pytest.raises(ContractError):
        evaluate([], [])
    with pytest.raises(ContractError):
        evaluate([1.2], [True])
    with pytest.raises(ContractError):
        evaluate([0.2, 0.3], [True])


def test_report_serialisation(tmp_path, rng):
    r = evaluate(rng.random(50), rng.random(50) < 0.5)
    r.to_json(tmp_path / "r.json")
    r.reliability_csv(tmp_path / "rel.csv")
    lines = (tmp_path / "rel.csv").read_text().split("\n")
    assert lines[0] == "bin_lo,bin_hi,count,avg_conf,avg_acc" and len(lines) == 17


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60), st.integers(1, 20))
def test_ece_properties(pairs, bins):
    conf = np.array([p[0] for p in pairs])
    ok = np.array([p[1] for p in pairs])
    r = evaluate(conf, ok, bins)
    assert 0.0 <= r.ece <= r.mce + 1e-12 <= 1.0 + 1e-12
    assert sum(b.count for b in r.bins) == len(conf)
