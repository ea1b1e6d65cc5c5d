"""Reference methods against normal equations, finite differences, and
the closed-form inner maximizer."""

import numpy as np
import pytest

from hrm_lab import (BaselineConfig, ConfigurationError, dro_defaults,
                     fit_dro, fit_erm, fit_irm, irm_defaults)
from hrm_lab.baselines import (_irm_grad, dro_inner_closed_form,
                               irm_objective)
from hrm_lab.invariant import EnvStats


def _ols(X, y):
    A = np.hstack([X, np.ones((len(y), 1))])
    w, *_ = np.linalg.lstsq(A, y, rcond=None)
    return w[:-1], w[-1]


def test_baseline_config_validation():
    with pytest.raises(ConfigurationError):
        BaselineConfig(method="lasso")
    with pytest.raises(ConfigurationError):
        BaselineConfig(learning_rate=0.0)
    with pytest.raises(ConfigurationError):
        BaselineConfig(epochs=-1)
    with pytest.raises(ConfigurationError):
        BaselineConfig(irm_lambda=-1.0)


def test_erm_matches_normal_equations():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(80, 5))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0, 3.0]) + 0.7 \
        + 0.1 * rng.normal(size=80)
    model = fit_erm(X, y)
    theta, b = _ols(X, y)
    assert np.abs(model.theta - theta).max() <= 1e-3
    assert abs(model.intercept - b) <= 1e-3


def test_erm_handles_aggressive_learning_rate():
    # requested step is capped by the quadratic's curvature, so a huge
    # learning rate must still converge
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 3))
    y = X @ np.array([2.0, 0.0, -1.0]) + rng.normal(scale=0.05, size=60)
    model = fit_erm(X, y, BaselineConfig(method="erm", learning_rate=1e6))
    theta, b = _ols(X, y)
    assert np.abs(model.theta - theta).max() <= 1e-3


def test_irm_needs_two_environments():
    X = np.ones((4, 2))
    with pytest.raises(ConfigurationError):
        fit_irm([(X, np.ones(4))])


def test_irm_identical_environments_reduce_to_ols():
    # with equal environments the penalty and its gradient vanish at the
    # least-squares solution, so gradient descent must land there
    rng = np.random.default_rng(2)
    X = rng.normal(size=(120, 3))
    y = X @ np.array([1.0, -0.5, 0.25]) + 0.3 + rng.normal(scale=0.2,
                                                           size=120)
    model = fit_irm([(X, y), (X, y)])
    theta, b = _ols(X, y)
    assert np.abs(model.theta - theta).max() <= 1e-6
    assert abs(model.intercept - b) <= 1e-6


def test_irm_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    stats = [EnvStats(rng.normal(size=(30, 3)), rng.normal(size=30),
                      np.ones(30)) for _ in range(2)]
    theta = rng.normal(size=3)
    b, lam = 0.2, 2.5
    g_th, g_b = _irm_grad(stats, theta, b, lam)
    h = 1e-6
    for j in range(3):
        hi, lo = theta.copy(), theta.copy()
        hi[j] += h
        lo[j] -= h
        est = (irm_objective(stats, hi, b, lam)
               - irm_objective(stats, lo, b, lam)) / (2 * h)
        assert abs(est - g_th[j]) / max(abs(est), abs(g_th[j]), 1e-8) <= 1e-4
    est = (irm_objective(stats, theta, b + h, lam)
           - irm_objective(stats, theta, b - h, lam)) / (2 * h)
    assert abs(est - g_b) / max(abs(est), abs(g_b), 1e-8) <= 1e-4


def test_dro_rejects_bad_gamma():
    with pytest.raises(ConfigurationError):
        fit_dro(np.ones((4, 1)), np.ones(4),
                BaselineConfig(method="dro", gamma=0.0))


def test_dro_inner_closed_form_oracle():
    # theta=0.8, x=1, y=0.2, gamma=2: residual 0.6, maximizer 0.48/1.36
    delta = dro_inner_closed_form(np.array([0.8]), 0.0, np.array([[1.0]]),
                                  np.array([0.2]), 2.0)
    assert delta[0, 0] == pytest.approx(0.48 / 1.36, rel=1e-12)
    with pytest.raises(ConfigurationError):
        dro_inner_closed_form(np.array([2.0]), 0.0, np.array([[1.0]]),
                              np.array([0.0]), 1.0)


def test_dro_inner_closed_form_is_the_maximizer():
    theta, b, gamma = np.array([0.8]), 0.0, 2.0
    x, y = 1.0, 0.2
    grid = np.linspace(-2.0, 2.0, 400001)
    obj = ((x + grid) * theta[0] + b - y) ** 2 - gamma * grid ** 2
    brute = grid[np.argmax(obj)]
    closed = dro_inner_closed_form(theta, b, np.array([[x]]), np.array([y]),
                                   gamma)[0, 0]
    assert abs(brute - closed) <= 1e-4


def test_dro_vanishing_adversary_matches_ols():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(120, 3))
    y = X @ np.array([1.0, -0.5, 0.25]) + 0.3 + rng.normal(scale=0.2,
                                                           size=120)
    model, trace = fit_dro(X, y, BaselineConfig(method="dro", gamma=1e8,
                                                epochs=600))
    theta, b = _ols(X, y)
    assert np.abs(model.theta - theta).max() <= 1e-6
    assert abs(model.intercept - b) <= 1e-6
    assert len(trace) == 600


def test_dro_defaults_shape():
    cfg = dro_defaults()
    assert cfg.method == "dro" and cfg.epochs == 600
    cfg = irm_defaults()
    assert cfg.method == "irm" and cfg.epochs == 4000
