"""Clipped-Gaussian feature gates and the linear model they modulate."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

_SQRT2 = math.sqrt(2.0)


def norm_cdf(z):
    z = np.asarray(z, dtype=float)
    return 0.5 * (1.0 + np.vectorize(math.erf)(z / _SQRT2))


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def gate_mask(mu, epsilon):
    """Realized gate values clip(mu + epsilon, 0, 1)."""
    return np.clip(np.asarray(mu, float) + np.asarray(epsilon, float), 0.0, 1.0)


def expected_l0(mu, sigma_gate):
    """Expected number of open gates: sum_j P(mu_j + eps_j > 0)."""
    if sigma_gate <= 0:
        raise ConfigurationError("sigma_gate must be positive")
    return float(norm_cdf(np.asarray(mu, float) / sigma_gate).sum())


def hard_mask(mu, tau=0.5):
    """Binary selection: dims whose deterministic gate reaches tau."""
    return (np.clip(np.asarray(mu, float), 0.0, 1.0) >= tau)


@dataclass
class GateVector:
    mu: np.ndarray
    sigma_gate: float = 0.5

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.mu.ndim != 1:
            raise ConfigurationError("mu must be a vector")
        if self.sigma_gate <= 0:
            raise ConfigurationError("sigma_gate must be positive")

    def sample(self, rng):
        return gate_mask(self.mu, rng.standard_normal(self.mu.shape) * self.sigma_gate)

    def deterministic(self):
        return np.clip(self.mu, 0.0, 1.0)

    def expected_open(self):
        return expected_l0(self.mu, self.sigma_gate)


@dataclass
class LinearModel:
    theta: np.ndarray
    intercept: float = 0.0
    gate: GateVector = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 1:
            raise ConfigurationError("theta must be a vector")
        if self.gate is not None and self.gate.mu.shape != self.theta.shape:
            raise ConfigurationError("gate and theta dimensions differ")

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        c = self.theta if self.gate is None else self.gate.deterministic() * self.theta
        return X @ c + self.intercept

    def mse(self, X, y):
        return float(np.mean((self.predict(X) - np.asarray(y, float)) ** 2))

    def save(self, path, config=None, seed=None):
        path = Path(path)
        blob = {
            "theta": self.theta.tolist(),
            "intercept": float(self.intercept),
            "mu": None if self.gate is None else self.gate.mu.tolist(),
            "sigma_gate": None if self.gate is None else self.gate.sigma_gate,
            "config": config,
            "seed": seed,
        }
        path.write_text(json.dumps(blob, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
        gate = None
        if blob.get("mu") is not None:
            gate = GateVector(np.asarray(blob["mu"], float), blob["sigma_gate"])
        return cls(theta=np.asarray(blob["theta"], float),
                   intercept=blob["intercept"], gate=gate)
