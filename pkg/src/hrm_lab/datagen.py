"""Seeded synthetic generators for the two distribution-shift mechanisms.

Selection bias: rejection sampling couples a designated variant column
block V_b to the clean response with strength/direction r. Anti-causal:
the response feeds the variant block with component-dependent noise, so
the spurious correlation strength varies by environment.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dataset import Dataset
from .errors import ConfigurationError, GenerationError

THETA_PATTERN = np.array([0.5, -1.0, 1.0, -0.5, 1.0, -1.0])


def theta_phi_pattern(n_phi):
    """Invariant coefficients [1/2, -1, 1, -1/2, 1, -1, ...] extended cyclically."""
    reps = int(np.ceil(n_phi / len(THETA_PATTERN)))
    return np.tile(THETA_PATTERN, reps)[:n_phi].copy()


@dataclass
class SelectionBiasConfig:
    d: int = 10
    n_phi: int = 9
    n_b: int = 1
    r: float = 1.9
    beta: float = 1.0
    sum: int = 2000
    kappa: float = 0.95
    r_minor: float = -1.1
    noise_std: float = float(np.sqrt(0.3))

    def __post_init__(self):
        self.n_psi = self.d - self.n_phi
        if self.n_psi < self.n_b or self.n_b < 1:
            raise ConfigurationError("need n_phi + n_psi = d with n_psi >= n_b >= 1")
        if abs(self.r) <= 1 or abs(self.r_minor) <= 1:
            raise ConfigurationError("|r| must exceed 1")
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigurationError("kappa must lie in [0, 1]")
        if self.n_phi < 3:
            raise ConfigurationError("n_phi must be >= 3 for the cubic term")


@dataclass
class AntiCausalConfig:
    n_phi: int = 9
    n_psi: int = 1
    k: int = 10
    means: Optional[List] = None
    sigmas: Optional[List] = None
    beta: float = 0.1
    theta_phi: Optional[np.ndarray] = None
    theta_psi: Optional[np.ndarray] = None
    noise_var: float = 0.3

    def __post_init__(self):
        if self.means is None:
            base = [(0, 0, 0, 1, 1), (0, 0, 0, 1, -1), (0, 0, 0, -1, 1)]
            base += [(0, 0, 0, -1, -1)] * 7
            self.means = base[: self.k]
        if self.sigmas is None:
            self.sigmas = [0.2, 0.5, 1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0][: self.k]
        if len(self.means) != self.k or len(self.sigmas) != self.k:
            raise ConfigurationError("means and sigmas must have k entries")
        if any(s <= 0 for s in self.sigmas):
            raise ConfigurationError("component sigmas must be positive")
        if self.n_phi < 3:
            raise ConfigurationError("n_phi must be >= 3 for the cubic term")

    def sample_thetas(self, rng):
        """Draw (theta_phi, theta_psi) once per experiment and pin them."""
        self.theta_phi = 1.0 + rng.standard_normal(self.n_phi)
        self.theta_psi = 0.5 + np.sqrt(0.1) * rng.standard_normal(self.n_psi)
        return self.theta_phi, self.theta_psi


def invariant_response(phi, theta_phi, beta, noise):
    """theta_phi . phi + beta * phi_1 * phi_2 * phi_3 + noise."""
    phi = np.asarray(phi, dtype=float)
    theta_phi = np.asarray(theta_phi, dtype=float)
    if phi.shape[-1] != theta_phi.shape[0]:
        raise ConfigurationError("phi and theta_phi dimensions differ")
    if theta_phi.shape[0] < 3:
        raise ConfigurationError("need at least 3 invariant dims")
    return (phi @ theta_phi
            + beta * phi[..., 0] * phi[..., 1] * phi[..., 2]
            + noise)


def selection_probability(y_clean, v_b, r):
    """Acceptance probability prod_i |r|^(-5 |y_clean - sign(r) v_i|)."""
    if abs(r) <= 1:
        raise ConfigurationError("selection requires |r| > 1")
    v_b = np.atleast_1d(np.asarray(v_b, dtype=float))
    expo = -5.0 * np.abs(y_clean - np.sign(r) * v_b)
    return float(np.power(abs(r), expo).prod())


def _sample_raw(config, n, rng):
    """Pre-selection pool: phi from the shared-Z chain, psi iid N(0,1)."""
    Z = rng.standard_normal((n, config.n_phi + 1))
    phi = 0.8 * Z[:, : config.n_phi] + 0.2 * Z[:, 1 : config.n_phi + 1]
    psi = rng.standard_normal((n, config.n_psi))
    return phi, psi


def _select_env(config, r, n, rng, max_factor=1000):
    """Rejection-sample n points under bias strength r."""
    th = theta_phi_pattern(config.n_phi)
    out_X, out_y, got, attempts = [], [], 0, 0
    while got < n:
        batch = max(4 * (n - got), 1000)
        attempts += batch
        if attempts > max_factor * max(n, 1):
            raise GenerationError(
                "rejection sampling exceeded %d attempts for n=%d at r=%.3f"
                % (attempts, n, r))
        phi, psi = _sample_raw(config, batch, rng)
        f = invariant_response(phi, th, config.beta, 0.0)
        v = psi[:, : config.n_b]
        p = np.power(abs(r), -5.0 * np.abs(f[:, None] - np.sign(r) * v)).prod(axis=1)
        keep = rng.uniform(size=batch) <= p
        out_X.append(np.hstack([phi[keep], psi[keep]]))
        out_y.append(f[keep] + config.noise_std * rng.standard_normal(int(keep.sum())))
        got += int(keep.sum())
    if n == 0:
        return (np.zeros((0, config.d)), np.zeros(0))
    X = np.vstack(out_X)[:n]
    y = np.concatenate(out_y)[:n]
    return X, y


def generate_selection_bias(config, seed, rng=None):
    """Pooled two-source training set: kappa*sum at r, rest at r_minor.

    Pass an existing rng to keep consuming one stream across calls (the
    reproduce pipelines generate train and test sets back to back).
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    n1 = int(round(config.kappa * config.sum))
    n2 = config.sum - n1
    X1, y1 = _select_env(config, config.r, n1, rng)
    X2, y2 = _select_env(config, config.r_minor, n2, rng)
    X = np.vstack([X1, X2])
    y = np.concatenate([y1, y2])
    labels = np.concatenate([np.zeros(n1, int), np.ones(n2, int)])
    return Dataset(X=X, y=y, env_labels=labels,
                   invariant_dims=np.arange(config.n_phi), seed=seed,
                   meta={"generator": "selection_bias", "r": config.r,
                         "r_minor": config.r_minor, "kappa": config.kappa,
                         "beta": config.beta, "n_b": config.n_b})


def generate_test_grid(config, r_values, n_per_env, seed, rng=None):
    """One single-source dataset per r value, same theta/beta as training."""
    out = []
    if rng is None:
        rng = np.random.default_rng(seed)
    for r in r_values:
        if abs(r) <= 1:
            raise ConfigurationError("test grid r=%.3f has |r| <= 1" % r)
        X, y = _select_env(config, r, n_per_env, rng)
        out.append(Dataset(X=X, y=y, invariant_dims=np.arange(config.n_phi),
                           seed=seed, meta={"generator": "selection_bias",
                                            "r": r, "test": True}))
    return out


def generate_anti_causal(config, env_weights, seed, n_per_env=1000, rng=None):
    """One Dataset per environment; env_weights is a mixture vector per env.

    Each sample's psi-noise std is the sigma of the component that produced
    its phi. theta_phi/theta_psi must have been drawn (sample_thetas) or set.
    One-hot environments skip the component draw, so their stream matches a
    plain single-component sampler exactly.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    if config.theta_phi is None or config.theta_psi is None:
        config.sample_thetas(rng)
    th_phi = np.asarray(config.theta_phi, dtype=float)
    th_psi = np.asarray(config.theta_psi, dtype=float)
    means = np.zeros((config.k, config.n_phi))
    for i, m in enumerate(config.means):
        m = np.asarray(m, dtype=float)
        means[i, : min(len(m), config.n_phi)] = m[: config.n_phi]
    sigmas = np.asarray(config.sigmas, dtype=float)
    out = []
    for e, z in enumerate(env_weights):
        z = np.asarray(z, dtype=float)
        if z.shape[0] != config.k or z.min() < 0 or abs(z.sum() - 1.0) > 1e-9:
            raise ConfigurationError("environment %d mixture weights off the simplex" % e)
        if z.max() == 1.0:
            comp = np.full(n_per_env, int(z.argmax()))
        else:
            comp = rng.choice(config.k, size=n_per_env, p=z)
        phi = rng.standard_normal((n_per_env, config.n_phi)) + means[comp]
        noise = np.sqrt(config.noise_var) * rng.standard_normal(n_per_env)
        y = invariant_response(phi, th_phi, config.beta, noise)
        psi = np.outer(y, th_psi) + rng.standard_normal(
            (n_per_env, config.n_psi)) * sigmas[comp][:, None]
        out.append(Dataset(X=np.hstack([phi, psi]), y=y,
                           env_labels=np.full(n_per_env, e, dtype=int),
                           invariant_dims=np.arange(config.n_phi), seed=seed,
                           meta={"generator": "anti_causal", "env": e,
                                 "weights": z.tolist()}))
    return out


def one_hot_environments(k, env_components):
    """Mixture-weight rows that put all mass on one component per environment."""
    out = []
    for c in env_components:
        z = np.zeros(k)
        z[c] = 1.0
        out.append(z)
    return out
