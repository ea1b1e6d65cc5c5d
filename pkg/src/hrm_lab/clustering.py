"""Latent-environment discovery: EM over a mixture of linear regressions.

Points are clustered by which regression of y on the variant features
explains them, not by feature-space distance. Two noise models are
supported: a fixed likelihood scale sigma_y, and a per-component learned
scale with a floor (needed when components differ mainly in residual
variance rather than slope).
"""

import logging
import math
from dataclasses import dataclass
from itertools import permutations
from typing import Optional

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300


@dataclass
class ClusterCenter:
    coef: np.ndarray
    intercept: float = 0.0
    sigma_y: float = 0.5

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        if self.sigma_y <= 0:
            raise ConfigurationError("sigma_y must be positive")

    def predict(self, psi):
        return np.asarray(psi, float) @ self.coef + self.intercept


@dataclass
class McConfig:
    k: int = 2
    sigma_y: float = 0.5
    learn_sigma: bool = False
    sigma_floor: float = 0.1
    em_iters: int = 200
    inner_fit_iters: int = 1
    tol: float = 1e-6
    init_strategy: str = "kmeans++"
    n_init: int = 5
    intercept: bool = False
    q_floor: float = 0.0
    min_responsibility: float = 0.05
    min_cluster_frac: float = 0.0
    max_rescues: int = 10
    seed: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.sigma_y <= 0 or self.sigma_floor <= 0:
            raise ConfigurationError("sigma_y and sigma_floor must be positive")
        if self.em_iters < 0 or self.n_init < 1 or self.inner_fit_iters < 1:
            raise ConfigurationError("em_iters >= 0, n_init >= 1, inner_fit_iters >= 1")
        if self.init_strategy not in ("kmeans++", "quantile", "random", "mixed"):
            raise ConfigurationError("unknown init_strategy %r" % self.init_strategy)
        if not 0.0 <= self.q_floor < 1.0:
            raise ConfigurationError("q_floor must lie in [0, 1)")


@dataclass
class EnvironmentPartition:
    W: np.ndarray
    q: np.ndarray
    centers: Optional[np.ndarray]
    sigmas: Optional[np.ndarray]
    nll: float
    trace: list
    n_rescues: int = 0
    residuals: Optional[np.ndarray] = None

    @property
    def hard_labels(self):
        return self.W.argmax(axis=1)

    @property
    def k(self):
        return self.W.shape[1]

    def cluster_sizes(self):
        return np.bincount(self.hard_labels, minlength=self.k)


# ---------------- core operations ----------------

def center_likelihood(center, psi, y):
    """Gaussian density of y around the center's regression prediction."""
    resid = float(y) - float(center.predict(np.atleast_2d(psi))[0])
    s = center.sigma_y
    return math.exp(-resid * resid / (2 * s * s)) / (math.sqrt(2 * math.pi) * s)


def clustering_objective(psi, y, centers, q, sigmas, intercept=False):
    """Mean negative log mixture likelihood, densities floored at 1e-300."""
    psi = np.asarray(psi, float)
    y = np.asarray(y, float)
    q = np.asarray(q, float)
    sigmas = np.broadcast_to(np.asarray(sigmas, float), (len(q),))
    Xa = np.hstack([psi, np.ones((len(y), 1))]) if intercept else psi
    R = y[:, None] - Xa @ np.asarray(centers, float).T
    dens = np.exp(-R * R / (2 * sigmas[None, :] ** 2)) / (
        np.sqrt(2 * np.pi) * sigmas[None, :])
    mix = np.maximum(dens @ q, DENSITY_FLOOR)
    return -float(np.log(mix).mean())


def e_step(psi, y, centers, q, sigmas, intercept=False):
    """Posterior responsibilities P(e_j | psi, y).

    Rows where every component density underflows get a uniform row and a
    logged warning.
    """
    psi = np.asarray(psi, float)
    y = np.asarray(y, float)
    q = np.asarray(q, float)
    K = len(q)
    sigmas = np.broadcast_to(np.asarray(sigmas, float), (K,))
    Xa = np.hstack([psi, np.ones((len(y), 1))]) if intercept else psi
    R = y[:, None] - Xa @ np.asarray(centers, float).T
    lq = (np.log(np.maximum(q[None, :], DENSITY_FLOOR))
          - np.log(sigmas[None, :])
          - R * R / (2 * sigmas[None, :] ** 2))
    mx = lq.max(axis=1, keepdims=True)
    dead = ~np.isfinite(mx.ravel())
    if dead.any():
        log.warning("e_step: %d rows underflowed; assigning uniform rows",
                    int(dead.sum()))
        lq[dead] = 0.0
        mx[dead] = 0.0
    pe = np.exp(lq - mx)
    return pe / pe.sum(axis=1, keepdims=True)


def m_step(psi, y, W, config):
    """Responsibility-weighted center refits and mixture weights.

    A cluster whose total responsibility falls below
    min_responsibility * N is re-seeded from the worst-fit points.
    """
    psi = np.asarray(psi, float)
    y = np.asarray(y, float)
    W = np.asarray(W, float)
    n, K = W.shape
    Xa = np.hstack([psi, np.ones((n, 1))]) if config.intercept else psi
    d = Xa.shape[1]
    centers = np.zeros((K, d))
    sigmas = np.full(K, config.sigma_y)
    tot = W.sum(axis=0)
    fitted = Xa @ _wls_batch(Xa, y, W).T
    overall = np.min(np.abs(y[:, None] - fitted), axis=1)
    for j in range(K):
        w = W[:, j]
        if tot[j] < config.min_responsibility * n:
            worst = np.argsort(-overall)[: max(n // 20, 10)]
            w = np.zeros(n)
            w[worst] = 1.0
        centers[j] = _wls(Xa, y, w)
        if config.learn_sigma:
            r = y - Xa @ centers[j]
            sigmas[j] = max(config.sigma_floor,
                            math.sqrt(float(w @ (r * r)) / max(w.sum(), 1e-12)))
    q = W.mean(axis=0)
    if config.q_floor > 0:
        q = np.maximum(q, config.q_floor)
    q = q / q.sum()
    return centers, q, sigmas


def _wls(Xa, y, w):
    sw = np.sqrt(np.maximum(w, 0.0))
    beta, *_ = np.linalg.lstsq(Xa * sw[:, None], y * sw, rcond=None)
    return beta


def _wls_batch(Xa, y, W):
    return np.vstack([_wls(Xa, y, W[:, j]) for j in range(W.shape[1])])


# ---------------- initializations ----------------

def kmeanspp_init(J, K, rng):
    """k-means++ style one-hot seeding on the joint (psi, y) space."""
    n = len(J)
    idx = [rng.integers(n)]
    for _ in range(K - 1):
        d2 = np.min([((J - J[i]) ** 2).sum(axis=1) for i in idx], axis=0)
        tot = d2.sum()
        probs = d2 / tot if tot > 0 else np.full(n, 1.0 / n)
        idx.append(rng.choice(n, p=probs))
    lab0 = np.argmin(((J[:, None, :] - J[idx][None, :, :]) ** 2).sum(axis=2), axis=1)
    W0 = np.zeros((n, K))
    W0[np.arange(n), lab0] = 1.0
    return W0


def quantile_init(psi, y, K):
    """One-hot groups by quantiles of absolute pooled-fit residual."""
    n = len(y)
    Xa = np.hstack([psi, np.ones((n, 1))])
    w, *_ = np.linalg.lstsq(Xa, y, rcond=None)
    r2 = np.abs(y - Xa @ w)
    qs = np.quantile(r2, np.linspace(0, 1, K + 1)[1:-1])
    g = np.searchsorted(qs, r2)
    W0 = np.zeros((n, K))
    W0[np.arange(n), g] = 1.0
    return W0


def random_init(n, K, rng):
    return rng.dirichlet(np.ones(K), size=n)


def _build_inits(psi, y, config, rng):
    J = np.hstack([psi, y[:, None]])
    K = config.k
    s = config.init_strategy
    if s == "kmeans++":
        return [kmeanspp_init(J, K, rng) for _ in range(config.n_init)]
    if s == "quantile":
        return [quantile_init(psi, y, K)]
    if s == "random":
        return [random_init(len(y), K, rng) for _ in range(config.n_init)]
    inits = [quantile_init(psi, y, K)]
    inits += [kmeanspp_init(J, K, rng) for _ in range(4)]
    inits += [random_init(len(y), K, rng) for _ in range(3)]
    return inits


# ---------------- EM engines ----------------

def _em_fixed(psi, y, W0, config):
    """EM with fixed likelihood scale. The first pass fits the seed
    partition, so em_iters bounds the number of E-step refinements."""
    n, K = W0.shape
    Xa = np.hstack([psi, np.ones((n, 1))]) if config.intercept else psi
    W = W0.copy()
    trace = []
    centers = None
    R = None
    sigma = config.sigma_y
    q = np.full(K, 1.0 / K)
    for it in range(config.em_iters + 1):
        q = W.mean(axis=0)
        if config.q_floor > 0:
            q = np.maximum(q, config.q_floor)
        q = q / q.sum()
        cs = []
        for j in range(K):
            cs.append(_wls(Xa, y, W[:, j]))
        centers = np.vstack(cs)
        R = y[:, None] - Xa @ centers.T
        logh = -0.5 * np.log(2 * np.pi * sigma ** 2) - R * R / (2 * sigma ** 2)
        lq = np.log(np.maximum(q[None, :], DENSITY_FLOOR)) + logh
        mx = lq.max(axis=1, keepdims=True)
        pe = np.exp(lq - mx)
        s = pe.sum(axis=1, keepdims=True)
        trace.append(-float((np.log(s).squeeze(1) + mx.squeeze(1)).mean()))
        W = pe / s
        if it >= 1 and trace[-2] - trace[-1] < config.tol:
            break
    return EnvironmentPartition(W=W, q=q, centers=centers,
                                sigmas=np.full(K, sigma), nll=trace[-1],
                                trace=trace, n_rescues=0, residuals=R)


def _em_learned(psi, y, W0, config):
    """EM with per-component learned noise scale and starved-cluster rescue."""
    n, K = W0.shape
    Xa = np.hstack([psi, np.ones((n, 1))]) if config.intercept else psi
    d = Xa.shape[1]
    W = W0.copy()
    trace = []
    rescues = 0
    C = np.zeros((K, d))
    sig = np.ones(K)
    q = np.full(K, 1.0 / K)
    R = None
    nll = np.inf
    for it in range(config.em_iters):
        for j in range(K):
            w = W[:, j]
            sw = max(w.sum(), 1e-12)
            A = Xa * w[:, None]
            G = A.T @ Xa + 1e-9 * np.eye(d)
            C[j] = np.linalg.solve(G, A.T @ y)
            r = y - Xa @ C[j]
            sig[j] = max(np.sqrt((w * r * r).sum() / sw), config.sigma_floor)
        q = W.mean(axis=0)
        R = y[:, None] - Xa @ C.T
        lq = (np.log(np.maximum(q[None, :], DENSITY_FLOOR))
              - np.log(sig[None, :])
              - R * R / (2 * sig[None, :] ** 2))
        mx = lq.max(axis=1, keepdims=True)
        pe = np.exp(lq - mx)
        s = pe.sum(axis=1, keepdims=True)
        W = pe / s
        nll = -float((np.log(s).ravel() + mx.ravel()).mean()) + 0.5 * np.log(2 * np.pi)
        if it >= 1 and rescues < config.max_rescues:
            tot = W.sum(axis=0)
            for j in range(K):
                if tot[j] < config.min_responsibility * n:
                    fit = (W * R * R).sum(axis=1)
                    worst = np.argsort(fit)[-max(n // 20, 10):]
                    W[worst, :] = 0.0
                    W[worst, j] = 1.0
                    W = W / np.maximum(W.sum(axis=1, keepdims=True), DENSITY_FLOOR)
                    rescues += 1
        trace.append(nll)
        if len(trace) >= 2 and abs(trace[-2] - trace[-1]) < config.tol:
            break
    return EnvironmentPartition(W=W, q=q, centers=C, sigmas=sig.copy(),
                                nll=nll, trace=trace, n_rescues=rescues,
                                residuals=R)


def sharpen(partition, sigma):
    """Re-run one E-step at the found centers with a smaller scale, making
    the soft responsibilities more decisive without changing the centers."""
    R = partition.residuals
    q = partition.q
    logh = -R * R / (2 * sigma ** 2)
    lq = np.log(np.maximum(q[None, :], DENSITY_FLOOR)) + logh
    mx = lq.max(axis=1, keepdims=True)
    pe = np.exp(lq - mx)
    return pe / pe.sum(axis=1, keepdims=True)


def fit_mc(X, y, psi_selector, config, rng=None, init_W=None):
    """Cluster on psi = psi_selector * X (elementwise column weights).

    Runs EM from several seedings and keeps the best mean NLL; when
    min_cluster_frac > 0, candidates whose smallest hard cluster is below
    that fraction are only used if no candidate passes the filter.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if psi_selector is None:
        psi = X
    else:
        sel = np.asarray(psi_selector, float)
        if sel.max() <= 0:
            raise ConfigurationError(
                "psi_selector is all-zero (every gate closed); fall back to psi = X")
        psi = sel[None, :] * X
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = len(y)
    if init_W is not None:
        inits = [np.asarray(init_W, float)]
    else:
        inits = _build_inits(psi, y, config, rng)
    if config.em_iters == 0:
        W0 = inits[0]
        return EnvironmentPartition(W=W0.copy(), q=W0.mean(axis=0),
                                    centers=None, sigmas=None, nll=np.inf,
                                    trace=[], n_rescues=0)
    engine = _em_learned if config.learn_sigma else _em_fixed
    best = None
    best_valid = None
    for W0 in inits:
        part = engine(psi, y, W0, config)
        if best is None or part.nll < best.nll:
            best = part
        if config.min_cluster_frac > 0:
            sz = np.bincount(part.hard_labels, minlength=config.k)
            if (sz.min() >= config.min_cluster_frac * n
                    and (best_valid is None or part.nll < best_valid.nll)):
                best_valid = part
    if config.min_cluster_frac > 0 and best_valid is not None:
        return best_valid
    return best


def partition_agreement(labels_a, labels_b, k=None):
    """Best hard-label accuracy over all cluster relabelings."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ConfigurationError("label vectors differ in length")
    if k is None:
        k = int(max(a.max(), b.max())) + 1
    if k > 8:
        raise ConfigurationError("permutation search is factorial; k > 8 unsupported")
    best = 0.0
    for perm in permutations(range(k)):
        m = np.array(perm)[a]
        best = max(best, float((m == b).mean()))
    return best


def suggest_k(X, y, psi_selector, config, k_values, rng=None):
    """Advisory BIC-style sweep over candidate cluster counts."""
    from dataclasses import replace
    out = {}
    n = len(y)
    for k in k_values:
        cfg = replace(config, k=k)
        part = fit_mc(X, y, psi_selector, cfg, rng=rng)
        d = (X.shape[1] + (1 if cfg.intercept else 0) +
             (1 if cfg.learn_sigma else 0))
        n_params = k * d + (k - 1)
        out[k] = 2 * n * part.nll + n_params * math.log(n)
    return out


def environment_kl_gap(X, y, env_labels, variant_dims, holdout_frac=0.5,
                       seed=0):
    """Average held-out KL between the two environments' fitted Gaussian
    conditionals, once over all columns and once over the variant columns
    only. Returns (kl_variant, kl_all).
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    env_labels = np.asarray(env_labels)
    envs = np.unique(env_labels)
    if len(envs) != 2:
        raise ConfigurationError("KL gap check needs exactly 2 environments")
    rng = np.random.default_rng(seed)
    n = len(y)
    holdout = rng.uniform(size=n) < holdout_frac
    out = []
    for cols in (np.asarray(variant_dims, int), np.arange(X.shape[1])):
        fits = []
        for e in envs:
            idx = (env_labels == e) & ~holdout
            Xa = np.hstack([X[idx][:, cols], np.ones((int(idx.sum()), 1))])
            w, *_ = np.linalg.lstsq(Xa, y[idx], rcond=None)
            resid = y[idx] - Xa @ w
            var = max(float(np.mean(resid ** 2)), 1e-12)
            fits.append((w, var))
        Xh = np.hstack([X[holdout][:, cols], np.ones((int(holdout.sum()), 1))])
        (w1, v1), (w2, v2) = fits
        m1 = Xh @ w1
        m2 = Xh @ w2
        kl = 0.5 * np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / (2 * v2) - 0.5
        out.append(float(kl.mean()))
    return out[0], out[1]
