"""Gated invariant predictor: masked weighted MSE across environments plus
an expected-L0 sparsity term and a cross-environment gradient-variance
penalty. Linear model throughout, so every term reduces to per-environment
sufficient statistics and full-batch gradient descent stays exact.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, TrainingError
from .gates import GateVector, LinearModel, gate_mask, norm_cdf, norm_pdf


@dataclass
class MpConfig:
    lam: float = 10.0
    alpha: float = 0.01
    sigma_gate: float = 0.5
    lr: float = 0.05
    epochs: int = 3000
    mc_samples: int = 1
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.lam < 0 or self.alpha < 0:
            raise ConfigurationError("lam and alpha must be nonnegative")
        if self.sigma_gate <= 0:
            raise ConfigurationError("sigma_gate must be positive")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("lr and clip_norm must be positive")
        if self.epochs < 0 or self.mc_samples < 1:
            raise ConfigurationError("epochs >= 0 and mc_samples >= 1 required")


class EnvStats:
    """Sufficient statistics of one weighted environment for squared loss.

    Everything the objective needs reduces to (sw, G, h, p, q1, q0), so one
    pass over the data supports any number of optimizer epochs.
    """

    def __init__(self, X, y, w):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        w = np.asarray(w, dtype=float)
        if w.min() < 0:
            raise ConfigurationError("environment weights must be nonnegative")
        if w.sum() <= 0:
            raise ConfigurationError("environment has zero total weight")
        W = w[:, None]
        self.sw = float(w.sum())
        self.G = X.T @ (W * X)
        self.h = X.T @ w
        self.p = X.T @ (w * y)
        self.q1 = float(w @ y)
        self.q0 = float(w @ (y * y))

    def wmse_grad(self, c, b):
        """Weighted MSE of x -> c.x + b, plus grads wrt c and b."""
        Gc = self.G @ c
        val = (c @ Gc + 2 * b * (self.h @ c) - 2 * (self.p @ c)
               + b * b * self.sw - 2 * b * self.q1 + self.q0) / self.sw
        gc = (2 * Gc + 2 * b * self.h - 2 * self.p) / self.sw
        gb = (2 * (self.h @ c) + 2 * b * self.sw - 2 * self.q1) / self.sw
        return val, gc, gb


def env_risk(stats, gate, model, rng=None, mc_samples=1):
    """Expected masked weighted MSE for one environment, Monte Carlo over
    the gate noise (deterministic mask when mc_samples=0)."""
    if mc_samples == 0:
        m = gate.deterministic()
        val, _, _ = stats.wmse_grad(m * model.theta, model.intercept)
        return float(val)
    if mc_samples < 0:
        raise ConfigurationError("mc_samples must be >= 0")
    acc = 0.0
    for _ in range(mc_samples):
        m = gate.sample(rng)
        val, _, _ = stats.wmse_grad(m * model.theta, model.intercept)
        acc += val
    return float(acc / mc_samples)


def penalty_and_grads(stats, mu, theta, b):
    """Pi = || Var_e(g_e) * mbar ||^2 with deterministic mask.

    g_e is the per-environment gradient of the masked weighted MSE wrt the
    masked coefficients; the variance is elementwise and unbiased (K-1).
    Returns (value, d/dtheta, d/db, d/dmbar).
    """
    K = len(stats)
    if K < 2:
        raise ConfigurationError("variance penalty needs >= 2 environments")
    d = len(mu)
    mbar = np.clip(mu, 0.0, 1.0)
    cbar = mbar * theta
    S = np.empty((K, d))
    A = []
    hs = []
    for i, st in enumerate(stats):
        _, gc, _ = st.wmse_grad(cbar, b)
        S[i] = gc
        A.append(2.0 * st.G / st.sw)
        hs.append(2.0 * st.h / st.sw)
    Gm = S * mbar[None, :]
    gbarm = Gm.mean(axis=0)
    Dm = Gm - gbarm
    v = (Dm ** 2).sum(axis=0) / (K - 1)
    val = float(((v * mbar) ** 2).sum())
    u = v * mbar ** 2
    gtheta = np.zeros(d)
    gb = 0.0
    gmbar = 2.0 * v ** 2 * mbar
    for i, st in enumerate(stats):
        w_e = u * Dm[i]
        gtheta += (4.0 / (K - 1)) * (A[i].T @ (w_e * mbar)) * mbar
        gb += (4.0 / (K - 1)) * float((w_e * mbar) @ hs[i])
        gmbar += (4.0 / (K - 1)) * (w_e * S[i])
        gmbar += (4.0 / (K - 1)) * (A[i].T @ (w_e * mbar)) * theta
    return val, gtheta, gb, gmbar


def variance_penalty(stats, mu, theta, b):
    """Penalty value only; gate mask applied deterministically."""
    val, _, _, _ = penalty_and_grads(stats, mu, theta, b)
    return val


def deterministic_objective(stats, mu, theta, b, lam, alpha, sigma_gate):
    """Full objective at the deterministic mask (no gate noise)."""
    K = len(stats)
    mbar = np.clip(mu, 0.0, 1.0)
    c = mbar * theta
    risk = 0.0
    for st in stats:
        val, _, _ = st.wmse_grad(c, b)
        risk += val
    risk /= K
    l0 = norm_cdf(mu / sigma_gate).sum()
    pen, _, _, _ = penalty_and_grads(stats, mu, theta, b)
    return float(risk + alpha * l0 + lam * pen)


def fit_mp(stats, d, config=None, rng=None, warm=None, lam=None,
           trace_every=0):
    """Train (mu, theta, b) by full-batch gradient descent.

    The risk term samples the gates (reparameterized, clip indicator for the
    mu gradient); the L0 and variance terms use closed forms at the current
    mu. lam overrides config.lam so loop schedules can anneal the penalty
    without rebuilding configs. epochs=0 returns the start point unchanged.
    """
    cfg = config or MpConfig()
    lam = cfg.lam if lam is None else lam
    if rng is None:
        rng = np.random.default_rng(0)
    if warm is None:
        mu = np.full(d, 0.5)
        theta = np.zeros(d)
        b = 0.0
    else:
        mu, theta, b = warm[0].copy(), warm[1].copy(), float(warm[2])
    K = len(stats)
    sigma = cfg.sigma_gate
    trace = []
    for ep in range(cfg.epochs):
        gt = np.zeros(d)
        gm = np.zeros(d)
        gb = 0.0
        for _ in range(cfg.mc_samples):
            eps = rng.standard_normal(d) * sigma
            raw = mu + eps
            m = np.clip(raw, 0.0, 1.0)
            inside = ((raw > 0) & (raw < 1)).astype(float)
            c = m * theta
            for st in stats:
                _, gc, gbe = st.wmse_grad(c, b)
                gt += (m * gc) / K
                gm += (theta * gc * inside) / K
                gb += gbe / K
        gt /= cfg.mc_samples
        gm /= cfg.mc_samples
        gb /= cfg.mc_samples
        gm += cfg.alpha * norm_pdf(mu / sigma) / sigma
        pv, pgt, pgb, pgm = penalty_and_grads(stats, mu, theta, b)
        inside_det = ((mu > 0) & (mu < 1)).astype(float)
        gt += lam * pgt
        gb += lam * pgb
        gm += lam * pgm * inside_det
        gn = math.sqrt(float(gt @ gt + gm @ gm + gb * gb))
        if not np.isfinite(gn):
            raise TrainingError("gate fit diverged at epoch %d" % ep)
        if gn > cfg.clip_norm:
            sc = cfg.clip_norm / gn
            gt *= sc
            gm *= sc
            gb *= sc
        theta -= cfg.lr * gt
        b -= cfg.lr * gb
        mu -= cfg.lr * gm
        if trace_every and ep % trace_every == 0:
            trace.append(deterministic_objective(stats, mu, theta, b, lam,
                                                 cfg.alpha, sigma))
    return mu, theta, b, trace


def fit_mp_multistart(stats, d, config, rng, warm=None, lam=None,
                      trace_every=0):
    """Run fit_mp from the warm start and from a closed-gate start, keep the
    lower deterministic objective. The closed start (mu=-0.5, theta=0,
    b=pooled mean) gives the optimizer a basin where every gate begins shut,
    which the penalty can then reopen selectively.
    """
    cfg = config or MpConfig()
    lam = cfg.lam if lam is None else lam
    b0 = sum(st.q1 for st in stats) / max(sum(st.sw for st in stats), 1e-12)
    best = None
    for w in (warm, (np.full(d, -0.5), np.zeros(d), b0)):
        mu, theta, b, tr = fit_mp(stats, d, cfg, rng=rng, warm=w, lam=lam,
                                  trace_every=trace_every)
        obj = deterministic_objective(stats, mu, theta, b, lam, cfg.alpha,
                                      cfg.sigma_gate)
        if best is None or obj < best[0]:
            best = (obj, mu, theta, b, tr)
    return best[1], best[2], best[3], best[4]


def gated_model(mu, theta, b, sigma_gate=0.5):
    return LinearModel(theta=theta, intercept=b,
                       gate=GateVector(mu=mu, sigma_gate=sigma_gate))
