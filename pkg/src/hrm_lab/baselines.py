"""Reference methods the harness compares against: pooled ERM, IRM with
given environment labels, and Lagrangian adversarial-perturbation DRO.
All linear, all full-batch gradient descent with a gradient-norm cap.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, TrainingError
from .gates import LinearModel
from .invariant import EnvStats


@dataclass
class BaselineConfig:
    method: str = "erm"
    learning_rate: float = 0.05
    epochs: int = 3000
    clip_norm: float = 10.0
    irm_lambda: float = 1.0
    gamma: float = 2.0
    inner_steps: int = 15
    inner_lr: float = 0.001
    seed: Optional[int] = None

    def __post_init__(self):
        if self.method not in ("erm", "irm", "dro"):
            raise ConfigurationError("unknown baseline method %r" % self.method)
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("learning_rate and clip_norm must be positive")
        if self.epochs < 0 or self.inner_steps < 0:
            raise ConfigurationError("epochs and inner_steps must be nonnegative")
        if self.irm_lambda < 0:
            raise ConfigurationError("irm_lambda must be nonnegative")


def fit_erm(X, y, config=None):
    """Pooled least squares by gradient descent.

    The step size is capped at 0.95 / lambda_max of the quadratic so the
    iteration contracts for any requested learning rate; with the default
    epoch budget this lands on the normal-equations solution to well below
    the 1e-3 documented tolerance.
    """
    cfg = config or BaselineConfig()
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    H = 2.0 * (Xa.T @ Xa) / n
    lam_max = float(np.linalg.eigvalsh(H).max())
    lr = min(cfg.learning_rate, 0.95 / max(lam_max, 1e-12))
    w = np.zeros(d + 1)
    ty = Xa.T @ y
    for ep in range(cfg.epochs):
        g = (H @ w - 2.0 * ty / n)
        gn = math.sqrt(float(g @ g))
        if not np.isfinite(gn):
            raise TrainingError("ERM diverged at epoch %d" % ep)
        if gn > cfg.clip_norm:
            g *= cfg.clip_norm / gn
        w -= lr * g
        if gn < 1e-12:
            break
    return LinearModel(theta=w[:-1], intercept=float(w[-1]))


def irm_penalty_terms(stats, theta, b):
    """Per-environment squared derivative of the environment risk wrt a
    scalar multiplier on the predictor, evaluated at multiplier 1."""
    out = []
    for st in stats:
        Gt = st.G @ theta
        D = (theta @ Gt + 2 * b * (st.h @ theta) + b * b * st.sw
             - theta @ st.p - b * st.q1) / st.sw
        out.append(4.0 * D * D)
    return out


def irm_objective(stats, theta, b, lam):
    K = len(stats)
    risk = sum(st.wmse_grad(theta, b)[0] for st in stats) / K
    pen = sum(irm_penalty_terms(stats, theta, b)) / K
    return float(risk + lam * pen)


def _irm_grad(stats, theta, b, lam):
    K = len(stats)
    gt = np.zeros(len(theta))
    gb = 0.0
    for st in stats:
        _, gc, gbb = st.wmse_grad(theta, b)
        Gt = st.G @ theta
        D = (theta @ Gt + 2 * b * (st.h @ theta) + b * b * st.sw
             - theta @ st.p - b * st.q1) / st.sw
        gpen_t = 8.0 * D * (2 * Gt + 2 * b * st.h - st.p) / st.sw
        gpen_b = 8.0 * D * (2 * (st.h @ theta) + 2 * b * st.sw - st.q1) / st.sw
        gt += (gc + lam * gpen_t) / K
        gb += (gbb + lam * gpen_b) / K
    return gt, gb


def irm_defaults():
    return BaselineConfig(method="irm", learning_rate=0.01, epochs=4000)


def fit_irm(envs, config=None):
    """Gradient descent on mean environment risk plus the scalar-multiplier
    gradient penalty. envs is a list of (X, y) pairs, one per labeled
    environment.
    """
    cfg = config or irm_defaults()
    if len(envs) < 2:
        raise ConfigurationError("IRM needs at least 2 environments")
    d = np.asarray(envs[0][0]).shape[1]
    stats = [EnvStats(np.asarray(X, float), np.asarray(y, float),
                      np.ones(len(y))) for X, y in envs]
    theta = np.zeros(d)
    b = 0.0
    for ep in range(cfg.epochs):
        gt, gb = _irm_grad(stats, theta, b, cfg.irm_lambda)
        gn = math.sqrt(float(gt @ gt + gb * gb))
        if not np.isfinite(gn):
            raise TrainingError("IRM diverged at epoch %d" % ep)
        if gn > cfg.clip_norm:
            gt *= cfg.clip_norm / gn
            gb *= cfg.clip_norm / gn
        theta -= cfg.learning_rate * gt
        b -= cfg.learning_rate * gb
    return LinearModel(theta=theta, intercept=float(b))


def dro_inner_closed_form(theta, b, X, y, gamma):
    """Exact per-sample maximizer of (theta.(x+delta)+b-y)^2 - gamma|delta|^2,
    valid when gamma > |theta|^2 (the inner problem is concave there)."""
    theta = np.asarray(theta, float)
    s = float(theta @ theta)
    if gamma <= s:
        raise ConfigurationError("closed form needs gamma > |theta|^2")
    r = np.asarray(X, float) @ theta + b - np.asarray(y, float)
    return r[:, None] * theta[None, :] / (gamma - s)


def dro_defaults():
    return BaselineConfig(method="dro", epochs=600)


def fit_dro(X, y, config=None):
    """Lagrangian adversarial training: a fixed number of inner ascent steps
    perturbs each sample against the current model, the outer step descends
    on the robust loss. Inner step size is capped at 0.25/gamma so the
    ascent map stays a contraction toward the inner maximizer.

    Returns (model, robust-loss trace).
    """
    cfg = config or dro_defaults()
    if cfg.gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, d = X.shape
    theta = np.zeros(d)
    b = 0.0
    gamma = cfg.gamma
    eta = min(cfg.inner_lr, 0.25 / gamma)
    lr = cfg.learning_rate
    trace = []
    for ep in range(cfg.epochs):
        delta = np.zeros_like(X)
        for _ in range(cfg.inner_steps):
            r = (X + delta) @ theta + b - y
            delta += eta * (2.0 * r[:, None] * theta[None, :] - 2.0 * gamma * delta)
        Xp = X + delta
        r = Xp @ theta + b - y
        rob = float(np.mean(r * r) - gamma * np.mean((delta * delta).sum(axis=1)))
        trace.append(rob)
        gt = 2.0 * (Xp.T @ r) / n
        gb = 2.0 * float(r.mean())
        gn = np.sqrt(float(gt @ gt + gb * gb))
        if not np.isfinite(gn):
            raise TrainingError("DRO diverged at epoch %d" % ep)
        if gn > cfg.clip_norm:
            sc = cfg.clip_norm / gn
            gt *= sc
            gb *= sc
        theta -= lr * gt
        b -= lr * gb
    return LinearModel(theta=theta, intercept=float(b)), trace
