"""Fast built-in sanity checks runnable from the command line.

Each check recomputes a quantity through an independent route (closed form,
finite differences, direct summation) and compares. The full test suite is
broader; this exists so an installed copy can be probed in seconds.
"""

import math

import numpy as np

from .baselines import fit_erm
from .clustering import (McConfig, e_step, environment_kl_gap, fit_mc,
                         partition_agreement)
from .datagen import SelectionBiasConfig, generate_selection_bias
from .gates import expected_l0, gate_mask
from .invariant import EnvStats, penalty_and_grads, variance_penalty
from .metrics import compute_metrics


def check_gate_clipping():
    rng = np.random.default_rng(0)
    mu = rng.normal(size=200) * 3
    eps = rng.normal(size=200) * 2
    m = gate_mask(mu, eps)
    assert m.min() >= 0.0 and m.max() <= 1.0, "mask left [0, 1]"


def check_expected_l0():
    got = expected_l0(np.zeros(4), 0.5)
    assert abs(got - 2.0) < 1e-12, "mu=0 should give d/2, got %r" % got
    got = expected_l0(np.array([0.25]), 0.5)
    want = 0.5 * (1.0 + math.erf(0.5 / math.sqrt(2.0)))
    assert abs(got - want) < 1e-12, "CDF(0.5) mismatch: %r" % got
    rng = np.random.default_rng(1)
    mu = rng.normal(size=32)
    val = expected_l0(mu, 0.7)
    assert 0.0 <= val <= 32.0, "expected_l0 out of [0, d]"


def check_penalty_gradients():
    rng = np.random.default_rng(2)
    stats = []
    for _ in range(3):
        X = rng.normal(size=(40, 4))
        y = rng.normal(size=40)
        stats.append(EnvStats(X, y, np.ones(40)))
    mu = rng.uniform(0.1, 0.9, size=4)
    theta = rng.normal(size=4)
    b = 0.3
    pen, g_th, g_b, g_mu = penalty_and_grads(stats, mu, theta, b)
    h = 1e-6
    for j in range(4):
        tp = theta.copy(); tp[j] += h
        tm = theta.copy(); tm[j] -= h
        fd = (variance_penalty(stats, mu, tp, b)
              - variance_penalty(stats, mu, tm, b)) / (2 * h)
        rel = abs(fd - g_th[j]) / max(abs(fd), abs(g_th[j]), 1e-8)
        assert rel <= 1e-4, "theta grad %d rel err %.2e" % (j, rel)
    fd = (variance_penalty(stats, mu, theta, b + h)
          - variance_penalty(stats, mu, theta, b - h)) / (2 * h)
    rel = abs(fd - g_b) / max(abs(fd), abs(g_b), 1e-8)
    assert rel <= 1e-4, "intercept grad rel err %.2e" % rel
    for j in range(4):
        mp = mu.copy(); mp[j] += h
        mm = mu.copy(); mm[j] -= h
        fd = (variance_penalty(stats, mp, theta, b)
              - variance_penalty(stats, mm, theta, b)) / (2 * h)
        rel = abs(fd - g_mu[j]) / max(abs(fd), abs(g_mu[j]), 1e-8)
        assert rel <= 1e-4, "mu grad %d rel err %.2e" % (j, rel)


def check_penalty_duplicate_envs():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    stats = [EnvStats(X, y, np.ones(30)), EnvStats(X, y, np.ones(30))]
    pen = variance_penalty(stats, np.full(3, 0.4), rng.normal(size=3), 0.1)
    assert abs(pen) < 1e-18, "identical envs must give zero penalty"


def check_em_monotone():
    rng = np.random.default_rng(4)
    n = 120
    psi = rng.normal(size=(n, 1))
    flip = rng.integers(0, 2, size=n)
    y = np.where(flip == 0, 2.0, -2.0) * psi[:, 0] + 0.2 * rng.normal(size=n)
    X = np.hstack([psi, rng.normal(size=(n, 1))])
    cfg = McConfig(k=2, sigma_y=0.5, em_iters=60, n_init=1, seed=4)
    part = fit_mc(X, y, np.array([1.0, 0.0]), cfg, rng=np.random.default_rng(4))
    diffs = np.diff(part.trace)
    assert np.all(diffs <= 1e-9), "EM objective increased by %r" % diffs.max()


def check_estep_rows():
    rng = np.random.default_rng(5)
    psi = rng.normal(size=(50, 2))
    y = rng.normal(size=50)
    centers = [np.array([1.0, 0.0]), np.array([-1.0, 0.5])]
    W = e_step(psi, y, centers, np.array([0.6, 0.4]), np.array([0.5, 0.5]))
    err = np.abs(W.sum(axis=1) - 1.0).max()
    assert err <= 1e-9, "E-step rows off by %.2e" % err


def check_erm_normal_equations():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(80, 5))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0, 3.0]) + 0.7 + 0.1 * rng.normal(size=80)
    model = fit_erm(X, y)
    Xa = np.hstack([X, np.ones((80, 1))])
    ref, *_ = np.linalg.lstsq(Xa, y, rcond=None)
    err = max(np.abs(model.theta - ref[:-1]).max(), abs(model.intercept - ref[-1]))
    assert err <= 1e-3, "ERM vs normal equations off by %.2e" % err


def check_metrics_direct():
    rng = np.random.default_rng(7)
    losses = rng.uniform(0.1, 2.0, size=9)
    rep = compute_metrics(losses)
    mean = sum(losses) / 9
    var = sum((v - mean) ** 2 for v in losses) / 8
    assert abs(rep.mean_error - mean) <= 1e-12
    assert abs(rep.std_error - math.sqrt(var)) <= 1e-12
    assert abs(rep.max_error - max(losses)) <= 1e-12


def check_generator_shapes():
    cfg = SelectionBiasConfig(r=1.9, sum=200, kappa=0.95)
    ds = generate_selection_bias(cfg, seed=11)
    assert ds.X.shape == (200, 10) and ds.y.shape == (200,)
    assert set(np.unique(ds.env_labels)) == {0, 1}
    assert int((ds.env_labels == 0).sum()) == 190


def check_planted_recovery():
    rng = np.random.default_rng(0)
    n = 400
    psi = rng.normal(size=(n, 1))
    lab = np.concatenate([np.zeros(n // 2, int), np.ones(n // 2, int)])
    y = np.where(lab == 0, 2.0, -2.0) * psi[:, 0] + 0.1 * rng.normal(size=n)
    cfg = McConfig(k=2, sigma_y=0.2, em_iters=100, n_init=5)
    part = fit_mc(psi, y, None, cfg, rng=np.random.default_rng(100))
    ag = partition_agreement(part.hard_labels, lab)
    assert ag >= 0.95, "planted mixture recovered at %.3f < 0.95" % ag


def check_variant_kl_dominance():
    # dropping the invariant block must not shrink the cross-environment
    # shift of the fitted conditional; require it on >= 9 of 10 seeds
    wins = 0
    for seed in range(1000, 1010):
        ds = generate_selection_bias(SelectionBiasConfig(), seed=seed)
        kl_variant, kl_all = environment_kl_gap(
            ds.X, ds.y, ds.env_labels, [9], holdout_frac=0.3, seed=seed)
        wins += int(kl_variant >= kl_all)
    assert wins >= 9, "variant-only KL dominated on only %d/10 seeds" % wins


CHECKS = (
    ("gate clipping bounds", check_gate_clipping),
    ("expected L0 closed form", check_expected_l0),
    ("penalty analytic vs finite-difference grads", check_penalty_gradients),
    ("zero penalty on duplicated environments", check_penalty_duplicate_envs),
    ("EM objective monotone", check_em_monotone),
    ("E-step row normalization", check_estep_rows),
    ("ERM matches normal equations", check_erm_normal_equations),
    ("metrics match direct summation", check_metrics_direct),
    ("selection generator shapes and split", check_generator_shapes),
    ("planted two-regression recovery", check_planted_recovery),
    ("variant-feature KL dominance", check_variant_kl_dominance),
)


def run_selftest(verbose=True):
    """Run every check; returns the list of (name, error-or-None)."""
    results = []
    for name, fn in CHECKS:
        try:
            fn()
            results.append((name, None))
            if verbose:
                print("ok   %s" % name)
        except Exception as e:  # report and keep going
            results.append((name, "%s: %s" % (type(e).__name__, e)))
            if verbose:
                print("FAIL %s: %s" % (name, results[-1][1]))
    return results
