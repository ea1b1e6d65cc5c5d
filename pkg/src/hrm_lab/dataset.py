"""Dataset container plus CSV/manifest serialization."""

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError


@dataclass
class Dataset:
    """Design matrix X (n x d), targets y (n), optional ground truth.

    env_labels and invariant_dims are evaluation-only metadata; no
    training code may read them unless it is an oracle baseline.
    """

    X: np.ndarray
    y: np.ndarray
    env_labels: Optional[np.ndarray] = None
    invariant_dims: Optional[np.ndarray] = None
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise ConfigurationError("X must be 2-dimensional")
        if self.X.shape[0] != self.y.shape[0]:
            raise ConfigurationError("X and y row counts differ")
        if self.X.shape[0] < 1:
            raise ConfigurationError("dataset must contain at least one row")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ConfigurationError("dataset contains NaN or Inf entries")
        if self.env_labels is not None:
            self.env_labels = np.asarray(self.env_labels, dtype=int)
            if self.env_labels.shape[0] != self.X.shape[0]:
                raise ConfigurationError("env_labels length mismatch")
        if self.invariant_dims is not None:
            self.invariant_dims = np.asarray(self.invariant_dims, dtype=int)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def save(self, out_dir, name="dataset"):
        """Write <name>.csv (x_0..x_{d-1}, y[, env]) and <name>.manifest.json."""
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, name + ".csv")
        cols = ["x_%d" % j for j in range(self.d)] + ["y"]
        body = [self.X, self.y[:, None]]
        if self.env_labels is not None:
            cols.append("env")
            body.append(self.env_labels[:, None].astype(float))
        M = np.hstack(body)
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for row in M:
                fh.write(",".join(repr(v) for v in row) + "\n")
        manifest = {
            "n": int(self.n),
            "d": int(self.d),
            "seed": self.seed,
            "invariant_dims": None if self.invariant_dims is None
            else [int(i) for i in self.invariant_dims],
            "meta": _jsonable(self.meta),
        }
        with open(os.path.join(out_dir, name + ".manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return csv_path

    @classmethod
    def concat(cls, datasets):
        """Stack several datasets into one; env labels are kept per source
        dataset (falling back to the source index when absent)."""
        if not datasets:
            raise ConfigurationError("nothing to concatenate")
        labels = []
        for i, ds in enumerate(datasets):
            if ds.env_labels is not None:
                labels.append(ds.env_labels)
            else:
                labels.append(np.full(ds.n, i, dtype=int))
        return cls(X=np.vstack([ds.X for ds in datasets]),
                   y=np.concatenate([ds.y for ds in datasets]),
                   env_labels=np.concatenate(labels),
                   invariant_dims=datasets[0].invariant_dims,
                   seed=datasets[0].seed,
                   meta={"concat_of": len(datasets), **datasets[0].meta})

    @classmethod
    def load(cls, csv_path):
        with open(csv_path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        M = np.array([[float(v) for v in row] for row in rows])
        has_env = header[-1] == "env"
        d = len(header) - 1 - (1 if has_env else 0)
        env = M[:, -1].astype(int) if has_env else None
        return cls(X=M[:, :d], y=M[:, d], env_labels=env)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
