"""Gate arithmetic against closed forms and an external CDF."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.stats import norm

from hrm_lab import (ConfigurationError, GateVector, LinearModel,
                     expected_l0, gate_mask, hard_mask)

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


def _pair_of_vectors():
    return st.integers(1, 16).flatmap(lambda d: st.tuples(
        hnp.arrays(np.float64, d, elements=finite),
        hnp.arrays(np.float64, d, elements=finite)))


@settings(deadline=None)
@given(_pair_of_vectors())
def test_gate_mask_stays_in_unit_interval(arrs):
    mu, eps = arrs
    m = gate_mask(mu, eps)
    assert np.all(m >= 0.0) and np.all(m <= 1.0)


def test_gate_mask_identity_inside_interval():
    mu = np.array([0.0, 0.25, 0.5, 1.0])
    assert np.array_equal(gate_mask(mu, np.zeros(4)), mu)
    assert np.array_equal(gate_mask(np.array([-3.0, 5.0]), np.zeros(2)),
                          np.array([0.0, 1.0]))


def test_expected_l0_closed_form():
    assert abs(expected_l0(np.zeros(6), 0.5) - 3.0) < 1e-12
    got = expected_l0(np.array([0.25]), 0.5)
    assert abs(got - 0.6914624612740131) < 1e-12
    assert abs(expected_l0(np.full(3, 50.0), 0.5) - 3.0) < 1e-12


@settings(deadline=None)
@given(hnp.arrays(np.float64, 8, elements=finite),
       st.floats(min_value=0.05, max_value=5.0, allow_nan=False))
def test_expected_l0_matches_reference_cdf(mu, sigma):
    got = expected_l0(mu, sigma)
    want = float(norm.cdf(mu / sigma).sum())
    assert abs(got - want) <= 1e-9
    assert 0.0 <= got <= len(mu)


def test_expected_l0_rejects_bad_sigma():
    with pytest.raises(ConfigurationError):
        expected_l0(np.zeros(2), 0.0)
    with pytest.raises(ConfigurationError):
        expected_l0(np.zeros(2), -1.0)


def test_hard_mask_clips_then_thresholds():
    keep = hard_mask(np.array([0.5, 0.49, 2.0, -1.0]))
    assert keep.tolist() == [True, False, True, False]
    assert hard_mask(np.array([0.3, 0.7]), tau=0.25).tolist() == [True, True]


def test_gate_vector_sample_matches_mask_formula():
    gv = GateVector(np.array([0.2, 0.8, -0.1]), sigma_gate=0.5)
    m = gv.sample(np.random.default_rng(9))
    eps = np.random.default_rng(9).standard_normal(3) * 0.5
    assert np.array_equal(m, gate_mask(gv.mu, eps))
    assert np.array_equal(gv.deterministic(), np.array([0.2, 0.8, 0.0]))
    assert abs(gv.expected_open() - expected_l0(gv.mu, 0.5)) == 0.0


def test_gate_vector_validation():
    with pytest.raises(ConfigurationError):
        GateVector(np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        GateVector(np.zeros(2), sigma_gate=0.0)


def test_linear_model_applies_deterministic_gate():
    model = LinearModel(theta=np.array([2.0, 1.0]), intercept=0.5,
                        gate=GateVector(np.array([1.0, 0.0])))
    X = np.array([[1.0, 1.0], [2.0, -3.0]])
    assert np.allclose(model.predict(X), np.array([2.5, 4.5]))
    y = np.array([2.5, 4.5])
    assert model.mse(X, y) == 0.0


def test_linear_model_mse_manual():
    model = LinearModel(theta=np.array([1.0]), intercept=0.0)
    X = np.array([[1.0], [2.0]])
    y = np.array([2.0, 2.0])
    assert abs(model.mse(X, y) - 0.5) < 1e-15


def test_model_gate_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        LinearModel(theta=np.zeros(3), gate=GateVector(np.zeros(2)))


def test_model_save_load_round_trip(tmp_path):
    model = LinearModel(theta=np.array([0.1, -2.5, 0.0]), intercept=1.25,
                        gate=GateVector(np.array([0.9, 0.1, 0.6]),
                                        sigma_gate=0.25))
    path = tmp_path / "model.json"
    model.save(path, config={"method": "hrm"}, seed=7)
    back = LinearModel.load(path)
    assert np.array_equal(back.theta, model.theta)
    assert back.intercept == model.intercept
    assert np.array_equal(back.gate.mu, model.gate.mu)
    assert back.gate.sigma_gate == 0.25

    plain = LinearModel(theta=np.array([1.0]), intercept=0.0)
    plain.save(tmp_path / "plain.json")
    back = LinearModel.load(tmp_path / "plain.json")
    assert back.gate is None and back.theta.tolist() == [1.0]
