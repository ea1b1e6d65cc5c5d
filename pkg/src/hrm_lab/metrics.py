"""Per-environment error summaries: mean, unbiased std, max."""

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import ConfigurationError


@dataclass
class MetricsReport:
    per_env: List[float]
    mean_error: float
    std_error: float
    max_error: float

    @property
    def n_envs(self):
        return len(self.per_env)


def compute_metrics(losses):
    """Mean/Std/Max across test environments; std uses the n-1 denominator."""
    losses = [float(v) for v in np.asarray(losses, dtype=float).ravel()]
    if len(losses) < 2:
        raise ConfigurationError("metrics need >= 2 test environments")
    arr = np.asarray(losses)
    return MetricsReport(per_env=losses,
                         mean_error=float(arr.mean()),
                         std_error=float(arr.std(ddof=1)),
                         max_error=float(arr.max()))


def aggregate_reports(reports):
    """Average each metric over runs; per-env errors averaged elementwise."""
    if not reports:
        raise ConfigurationError("no reports to aggregate")
    n_envs = {r.n_envs for r in reports}
    if len(n_envs) != 1:
        raise ConfigurationError("reports disagree on environment count")
    per_env = np.mean([r.per_env for r in reports], axis=0)
    return MetricsReport(
        per_env=[float(v) for v in per_env],
        mean_error=float(np.mean([r.mean_error for r in reports])),
        std_error=float(np.mean([r.std_error for r in reports])),
        max_error=float(np.mean([r.max_error for r in reports])))


def evaluate_model(model, test_sets):
    """Per-environment MSE of a fitted model over a list of Datasets."""
    losses = [model.mse(ds.X, ds.y) for ds in test_sets]
    return compute_metrics(losses)
