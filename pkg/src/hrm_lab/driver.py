"""Alternating optimization: cluster on current variant features, refit the
gated predictor on the found environments, convert the new mask back into
variant features, repeat.
"""

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .clustering import McConfig, fit_mc, partition_agreement, sharpen
from .dataset import Dataset
from .errors import ConfigurationError, HrmLabError
from .gates import GateVector, LinearModel
from .invariant import (EnvStats, MpConfig, deterministic_objective, fit_mp,
                        fit_mp_multistart)


@dataclass
class HrmConfig:
    rounds: int = 5
    stop_tol: float = 0.01
    convert: str = "soft"
    tau: float = 0.5
    handoff: str = "soft"
    sharpen_sigma: float = 0.25
    lam_explore: Optional[float] = None
    mp_multi_start: bool = False
    min_env_points: int = 0
    warm_start: bool = True
    final_refit: bool = True
    seed: int = 0
    mc: McConfig = field(default_factory=McConfig)
    mp: MpConfig = field(default_factory=MpConfig)

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        if self.convert not in ("soft", "hard_threshold"):
            raise ConfigurationError("convert must be soft or hard_threshold")
        if self.convert == "hard_threshold" and not 0.0 < self.tau < 1.0:
            raise ConfigurationError("tau must lie in (0, 1)")
        if self.handoff not in ("soft", "sharpen", "hard", "sample"):
            raise ConfigurationError("unknown handoff %r" % self.handoff)
        if self.stop_tol < 0:
            raise ConfigurationError("stop_tol must be nonnegative")


@dataclass
class HrmState:
    gate: GateVector
    model: LinearModel
    theta: np.ndarray
    intercept: float
    selected: np.ndarray
    partition: object
    history: list
    agreement_initial: Optional[float]
    agreement_final: Optional[float]
    rounds_completed: int
    converged: bool


def _psi_selector(M, config):
    """Column weights for the convert step psi = selector * X."""
    if config.convert == "soft":
        sel = 1.0 - M
    else:
        sel = ((1.0 - M) >= config.tau).astype(float)
    if sel.max() < 1e-12:
        return None
    return sel


def _handoff(partition, config, rng):
    """Environment weights handed to the predictor stage."""
    W = partition.W
    if config.handoff == "soft":
        return W
    if config.handoff == "sharpen":
        return sharpen(partition, config.sharpen_sigma)
    n, K = W.shape
    Wh = np.zeros_like(W)
    if config.handoff == "hard":
        Wh[np.arange(n), W.argmax(axis=1)] = 1.0
    else:
        draws = np.array([rng.choice(K, p=W[i] / W[i].sum()) for i in range(n)])
        Wh[np.arange(n), draws] = 1.0
    return Wh


def _env_stats(X, y, Wh, min_points):
    n = len(y)
    stats = [EnvStats(X, y, Wh[:, j]) for j in range(Wh.shape[1])
             if Wh[:, j].sum() > min_points]
    if len(stats) < 2:
        stats = [EnvStats(X, y, np.ones(n)), EnvStats(X, y, np.ones(n))]
    return stats


def hard_select_refit(X, y, mu, tau=0.5):
    """Final packaging: OLS on the dims whose gate reaches tau.

    Returns a full-width coefficient vector (zeros on dropped dims)."""
    keep = np.clip(mu, 0, 1) >= tau
    theta = np.zeros(len(mu))
    Xa = np.hstack([X[:, keep], np.ones((len(y), 1))])
    w, *_ = np.linalg.lstsq(Xa, y, rcond=None)
    theta[keep] = w[:-1]
    return theta, float(w[-1]), keep


def run_hrm(data, config=None, true_labels=None, out_dir=None):
    """Full alternating loop.

    Round t: fit the gated predictor on the current environment weights
    (exploration penalty weight lam_explore on non-final rounds, config.mp.lam
    on the last), convert the mask, re-cluster. Stops early once the mask
    moves less than stop_tol in sup-norm, with a final polish fit at the
    final penalty weight. history holds one (mask, objective, agreement)
    record per completed round.
    """
    config = config or HrmConfig()
    if isinstance(data, Dataset):
        X, y = data.X, data.y
        if true_labels is None:
            true_labels = data.env_labels
    else:
        X, y = data
        X = np.asarray(X, float)
        y = np.asarray(y, float)
    t_start = time.time()
    rng = np.random.default_rng(config.seed)
    n, d = X.shape
    lam_x = config.lam_explore if config.lam_explore is not None else config.mp.lam
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def agree(part):
        if true_labels is None:
            return None
        return partition_agreement(part.hard_labels, true_labels, config.mc.k)

    M = np.zeros(d)
    trace_every = 100 if out is not None else 0
    try:
        part = fit_mc(X, y, None, config.mc, rng=rng)
    except HrmLabError as e:
        raise type(e)("round 0 clustering: %s" % e) from e
    Wh = _handoff(part, config, rng)
    ag0 = agree(part)
    agf = ag0
    warm = None
    mu = theta = b = None
    history = []
    converged = False
    for t in range(config.rounds):
        stats = _env_stats(X, y, Wh, config.min_env_points)
        last = t == config.rounds - 1
        try:
            start = warm if config.warm_start else None
            if last:
                mu, theta, b, tr = fit_mp(stats, d, config.mp, rng=rng,
                                          warm=start,
                                          trace_every=trace_every)
            elif config.mp_multi_start:
                mu, theta, b, tr = fit_mp_multistart(stats, d, config.mp, rng,
                                                     warm=start, lam=lam_x,
                                                     trace_every=trace_every)
            else:
                mu, theta, b, tr = fit_mp(stats, d, config.mp, rng=rng,
                                          warm=start, lam=lam_x,
                                          trace_every=trace_every)
        except HrmLabError as e:
            raise type(e)("round %d predictor fit: %s" % (t, e)) from e
        warm = (mu, theta, b)
        M_new = np.clip(mu, 0.0, 1.0)
        if not last and np.max(np.abs(M_new - M)) < config.stop_tol:
            mu, theta, b, tr = fit_mp(stats, d, config.mp, rng=rng, warm=warm,
                                      trace_every=trace_every)
            warm = (mu, theta, b)
            converged = True
            obj = deterministic_objective(stats, mu, theta, b, config.mp.lam,
                                          config.mp.alpha,
                                          config.mp.sigma_gate)
            history.append({"round": t, "mask": np.clip(mu, 0, 1).tolist(),
                            "objective": obj, "agreement": agf,
                            "lam": config.mp.lam, "converged": True})
            _write_round(out, t, mu, theta, b, part, tr, config, True)
            break
        M = M_new
        sel = _psi_selector(M_new, config)
        try:
            part = fit_mc(X, y, sel, config.mc, rng=rng)
        except HrmLabError as e:
            raise type(e)("round %d clustering: %s" % (t, e)) from e
        Wh = _handoff(part, config, rng)
        agf = agree(part)
        obj = deterministic_objective(stats, mu, theta, b,
                                      config.mp.lam if last else lam_x,
                                      config.mp.alpha, config.mp.sigma_gate)
        history.append({"round": t, "mask": M_new.tolist(), "objective": obj,
                        "agreement": agf,
                        "lam": config.mp.lam if last else lam_x,
                        "converged": False})
        _write_round(out, t, mu, theta, b, part, tr, config, False)

    if config.final_refit:
        theta_hat, b_hat, keep = hard_select_refit(X, y, mu)
    else:
        theta_hat = np.clip(mu, 0, 1) * theta
        b_hat = float(b)
        keep = np.clip(mu, 0, 1) >= 0.5
    gate = GateVector(mu=mu.copy(), sigma_gate=config.mp.sigma_gate)
    model = LinearModel(theta=theta_hat, intercept=b_hat)
    state = HrmState(gate=gate, model=model, theta=np.asarray(theta).copy(),
                     intercept=float(b), selected=keep, partition=part,
                     history=history, agreement_initial=ag0,
                     agreement_final=agf, rounds_completed=len(history),
                     converged=converged)
    if out is not None:
        manifest = {
            "seed": config.seed,
            "rounds_completed": len(history),
            "converged": converged,
            "elapsed_sec": time.time() - t_start,
            "mask": np.clip(mu, 0, 1).tolist(),
            "selected_dims": np.flatnonzero(keep).tolist(),
            "agreement_initial": ag0,
            "agreement_final": agf,
            "config": _config_dict(config),
        }
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return state


def run_hrm_single(data, config=None, true_labels=None, out_dir=None):
    """Single-round ablation: one clustering pass, one predictor fit."""
    config = config or HrmConfig()
    return run_hrm(data, replace(config, rounds=1), true_labels=true_labels,
                   out_dir=out_dir)


def _write_round(out, t, mu, theta, b, part, trace, config, converged):
    if out is None:
        return
    rd = out / ("round_%02d" % t)
    rd.mkdir(parents=True, exist_ok=True)
    (rd / "mask.json").write_text(json.dumps({
        "mu": np.asarray(mu).tolist(),
        "mask": np.clip(mu, 0, 1).tolist(),
        "theta": np.asarray(theta).tolist(),
        "intercept": float(b),
        "converged": converged,
    }, indent=2) + "\n", encoding="utf-8")
    W = part.W
    lines = ["row_index,hard_label," + ",".join(
        "w_%d" % (j + 1) for j in range(W.shape[1]))]
    hard = part.hard_labels
    for i in range(W.shape[0]):
        lines.append("%d,%d," % (i, hard[i])
                     + ",".join(repr(float(v)) for v in W[i]))
    (rd / "partition.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    tl = ["step,objective"]
    for i, v in enumerate(trace):
        tl.append("%d,%s" % (i, repr(float(v))))
    (rd / "objective_trace.csv").write_text("\n".join(tl) + "\n",
                                            encoding="utf-8")
    (rd / "manifest.json").write_text(json.dumps({
        "round": t, "converged": converged, "k": W.shape[1],
        "cluster_sizes": np.bincount(hard, minlength=W.shape[1]).tolist(),
        "nll": None if part.nll is None else float(part.nll),
    }, indent=2) + "\n", encoding="utf-8")


def _config_dict(config):
    from dataclasses import asdict
    d = asdict(config)
    return d
