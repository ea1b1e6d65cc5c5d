"""Gradient-variance penalty and gate fitting.

The two-point construction has a hand-computable penalty: with one sample
per environment at x=1 and targets +/-1, theta=0, b=0 and a fully open
gate, each environment's risk gradient is -/+2, the unbiased variance is
8, and the penalty ((variance * mask)^2 summed) is 64.
"""

import numpy as np
import pytest

from hrm_lab import (ConfigurationError, EnvStats, GateVector, LinearModel,
                     MpConfig, TrainingError, env_risk, fit_mp,
                     fit_mp_multistart, variance_penalty)
from hrm_lab.invariant import deterministic_objective, penalty_and_grads


def _two_point_stats():
    return [EnvStats(np.array([[1.0]]), np.array([1.0]), np.array([1.0])),
            EnvStats(np.array([[1.0]]), np.array([-1.0]), np.array([1.0]))]


def _random_stats(rng, n_envs=3, n=40, d=4):
    return [EnvStats(rng.normal(size=(n, d)), rng.normal(size=n), np.ones(n))
            for _ in range(n_envs)]


def test_penalty_two_point_oracle():
    val, g_th, g_b, g_mu = penalty_and_grads(
        _two_point_stats(), np.array([1.0]), np.array([0.0]), 0.0)
    assert abs(val - 64.0) < 1e-12
    assert variance_penalty(_two_point_stats(), np.array([1.0]),
                            np.array([0.0]), 0.0) == pytest.approx(64.0)


def test_penalty_zero_on_duplicated_environments():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(30, 3)), rng.normal(size=30)
    stats = [EnvStats(X, y, np.ones(30)), EnvStats(X, y, np.ones(30))]
    pen = variance_penalty(stats, np.full(3, 0.4), rng.normal(size=3), 0.1)
    assert abs(pen) < 1e-18


def test_penalty_order_invariant():
    rng = np.random.default_rng(8)
    stats = _random_stats(rng)
    mu, th, b = rng.uniform(0, 1, 4), rng.normal(size=4), 0.2
    fwd = variance_penalty(stats, mu, th, b)
    rev = variance_penalty(stats[::-1], mu, th, b)
    assert fwd == pytest.approx(rev, rel=1e-12)


def test_penalty_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    stats = _random_stats(rng)
    mu = rng.uniform(0.1, 0.9, size=4)
    theta = rng.normal(size=4)
    b = 0.3
    _, g_th, g_b, g_mu = penalty_and_grads(stats, mu, theta, b)
    h = 1e-6

    def fd(param, grad, setter):
        for j in range(len(param)):
            hi, lo = param.copy(), param.copy()
            hi[j] += h
            lo[j] -= h
            est = (setter(hi) - setter(lo)) / (2 * h)
            rel = abs(est - grad[j]) / max(abs(est), abs(grad[j]), 1e-8)
            assert rel <= 1e-4

    fd(theta, g_th, lambda t: variance_penalty(stats, mu, t, b))
    fd(mu, g_mu, lambda m: variance_penalty(stats, m, theta, b))
    est = (variance_penalty(stats, mu, theta, b + h)
           - variance_penalty(stats, mu, theta, b - h)) / (2 * h)
    assert abs(est - g_b) / max(abs(est), abs(g_b), 1e-8) <= 1e-4


def test_penalty_needs_two_environments():
    with pytest.raises(ConfigurationError):
        variance_penalty(_two_point_stats()[:1], np.array([1.0]),
                         np.array([0.0]), 0.0)


def test_env_stats_validation():
    with pytest.raises(ConfigurationError):
        EnvStats(np.ones((2, 1)), np.ones(2), np.array([1.0, -1.0]))
    with pytest.raises(ConfigurationError):
        EnvStats(np.ones((2, 1)), np.ones(2), np.zeros(2))


def test_env_stats_wmse_matches_direct():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(25, 3)), rng.normal(size=25)
    w = rng.uniform(0.5, 2.0, size=25)
    st = EnvStats(X, y, w)
    c, b = rng.normal(size=3), 0.4
    val, gc, gb = st.wmse_grad(c, b)
    direct = float(np.sum(w * (X @ c + b - y) ** 2) / w.sum())
    assert val == pytest.approx(direct, rel=1e-12)
    h = 1e-6
    for j in range(3):
        hi, lo = c.copy(), c.copy()
        hi[j] += h
        lo[j] -= h
        est = (st.wmse_grad(hi, b)[0] - st.wmse_grad(lo, b)[0]) / (2 * h)
        assert abs(est - gc[j]) / max(abs(est), abs(gc[j]), 1e-8) <= 1e-4


def test_env_risk_deterministic_oracle():
    st = EnvStats(np.array([[1.0]]), np.array([1.0]), np.array([1.0]))
    model = LinearModel(theta=np.array([0.5]), intercept=0.0)
    risk = env_risk(st, GateVector(np.array([1.0])), model, mc_samples=0)
    assert risk == pytest.approx(0.25)


def test_env_risk_sampling_matches_deterministic_when_gate_saturated():
    rng = np.random.default_rng(6)
    st = EnvStats(rng.normal(size=(40, 2)), rng.normal(size=40), np.ones(40))
    model = LinearModel(theta=np.array([0.7, -0.3]), intercept=0.1)
    gate = GateVector(np.full(2, 8.0))  # always clips to 1
    det = env_risk(st, gate, model, mc_samples=0)
    mc = env_risk(st, gate, model, rng=np.random.default_rng(0), mc_samples=3)
    assert mc == pytest.approx(det, rel=1e-12)
    with pytest.raises(ConfigurationError):
        env_risk(st, gate, model, mc_samples=-1)


def test_mp_config_validation():
    with pytest.raises(ConfigurationError):
        MpConfig(lam=-1.0)
    with pytest.raises(ConfigurationError):
        MpConfig(alpha=-0.1)
    with pytest.raises(ConfigurationError):
        MpConfig(sigma_gate=0.0)
    with pytest.raises(ConfigurationError):
        MpConfig(epochs=-1)
    with pytest.raises(ConfigurationError):
        MpConfig(mc_samples=0)


def test_fit_mp_epochs_zero_returns_copied_warm_start():
    rng = np.random.default_rng(1)
    stats = _random_stats(rng, n_envs=2, n=30, d=2)
    warm = (np.array([0.3, 0.7]), np.array([1.0, -1.0]), 0.5)
    mu, th, b, trace = fit_mp(stats, 2, MpConfig(epochs=0),
                              rng=np.random.default_rng(0), warm=warm)
    assert np.array_equal(mu, warm[0]) and np.array_equal(th, warm[1])
    assert b == warm[2] and trace == []
    warm[0][0] = 99.0
    assert mu[0] == 0.3  # no aliasing of the caller's arrays


def test_fit_mp_deterministic_given_rng():
    rng = np.random.default_rng(1)
    stats = _random_stats(rng, n_envs=2, n=50, d=3)
    cfg = MpConfig(lam=5.0, alpha=0.01, epochs=200)
    a = fit_mp(stats, 3, cfg, rng=np.random.default_rng(7))
    b = fit_mp(stats, 3, cfg, rng=np.random.default_rng(7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[2] == b[2]


def test_fit_mp_improves_objective():
    rng = np.random.default_rng(2)
    stats = _random_stats(rng, n_envs=2, n=60, d=3)
    cfg = MpConfig(lam=1.0, alpha=0.01, epochs=500)
    mu0, th0, b0 = np.full(3, 0.5), np.zeros(3), 0.0
    before = deterministic_objective(stats, mu0, th0, b0, cfg.lam, cfg.alpha,
                                     cfg.sigma_gate)
    mu, th, b, _ = fit_mp(stats, 3, cfg, rng=np.random.default_rng(0))
    after = deterministic_objective(stats, mu, th, b, cfg.lam, cfg.alpha,
                                    cfg.sigma_gate)
    assert after < before


def test_fit_mp_unpenalized_limit_matches_pooled_ols():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    y = X @ np.array([1.0, 2.0]) + 0.3 + rng.normal(scale=0.1, size=200)
    stats = [EnvStats(X[:100], y[:100], np.ones(100)),
             EnvStats(X[100:], y[100:], np.ones(100))]
    cfg = MpConfig(lam=0.0, alpha=0.0, epochs=4000)
    mu, th, b, _ = fit_mp(stats, 2, cfg, rng=np.random.default_rng(2))
    A = np.hstack([X, np.ones((200, 1))])
    w, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert np.allclose(np.clip(mu, 0, 1) * th, w[:-1], atol=1e-3)
    assert b == pytest.approx(w[-1], abs=1e-3)


def test_multistart_keeps_warm_start_on_tie():
    rng = np.random.default_rng(1)
    stats = _random_stats(rng, n_envs=2, n=30, d=2)
    b0 = float(sum(st.q1 for st in stats) / sum(st.sw for st in stats))
    cold = (np.full(2, -0.5), np.zeros(2), b0)
    cfg = MpConfig(lam=1.0, alpha=0.01, epochs=5)
    best = fit_mp_multistart(stats, 2, cfg, np.random.default_rng(1),
                             warm=cold, lam=1.0)
    direct = fit_mp(stats, 2, cfg, rng=np.random.default_rng(1), warm=cold,
                    lam=1.0)
    assert np.array_equal(best[0], direct[0])
    assert np.array_equal(best[1], direct[1])


def test_multistart_discards_poor_warm_start():
    rng = np.random.default_rng(5)
    stats = _random_stats(rng, n_envs=2, n=40, d=2)
    awful = (np.full(2, 0.9), np.full(2, 50.0), 25.0)
    cfg = MpConfig(lam=1.0, alpha=0.01, epochs=50)
    mu, th, b, _ = fit_mp_multistart(stats, 2, cfg, np.random.default_rng(3),
                                     warm=awful, lam=1.0)
    obj = deterministic_objective(stats, mu, th, b, 1.0, cfg.alpha,
                                  cfg.sigma_gate)
    warm_run = fit_mp(stats, 2, cfg, rng=np.random.default_rng(3), warm=awful,
                      lam=1.0)
    warm_obj = deterministic_objective(stats, warm_run[0], warm_run[1],
                                       warm_run[2], 1.0, cfg.alpha,
                                       cfg.sigma_gate)
    assert obj <= warm_obj
