"""Seeded multi-run experiment pipelines and the two reproduction tables.

Every run derives its generator and optimizer seeds from the master seed,
generates train and test data from one stream, fits each requested method
on the identical Dataset, and reports per-environment MSE. Aggregation
averages each per-run metric across runs.
"""

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import (BaselineConfig, dro_defaults, fit_dro, fit_erm,
                        fit_irm, irm_defaults)
from .clustering import McConfig
from .dataset import Dataset
from .datagen import (AntiCausalConfig, SelectionBiasConfig,
                      generate_anti_causal, generate_selection_bias,
                      generate_test_grid, one_hot_environments)
from .driver import HrmConfig, run_hrm, run_hrm_single
from .errors import ConfigurationError, HrmLabError
from .invariant import MpConfig
from .metrics import aggregate_reports, compute_metrics, evaluate_model

SELECTION_TEST_GRID = (-3.0, -2.7, -2.3, -1.9, -1.5, 1.5, 1.9, 2.3, 2.7, 3.0)
METHOD_ORDER = ("erm", "dro", "irm", "hrm_s", "hrm")
METHOD_LABELS = {"erm": "ERM", "dro": "DRO", "irm": "IRM",
                 "hrm_s": "HRM^s", "hrm": "HRM"}
TABLE_IDS = ("sim-selection-s1", "anti-causal-s1")


def selection_mc_config():
    return McConfig(k=2, sigma_y=0.65, learn_sigma=False, em_iters=200,
                    tol=1e-6, init_strategy="kmeans++", n_init=5,
                    intercept=False, q_floor=0.0)


def selection_hrm_config(seed=0):
    """Tuned loop for the rejection-sampled scenario: decisive soft
    responsibilities via a sharpened E-step, strong penalty while the mask
    is still moving, standard penalty for the final fit."""
    return HrmConfig(rounds=5, stop_tol=0.01, handoff="sharpen",
                     sharpen_sigma=0.25, lam_explore=60.0,
                     mp_multi_start=False, min_env_points=0, seed=seed,
                     mc=selection_mc_config(),
                     mp=MpConfig(lam=10.0, alpha=0.01))


def anti_causal_mc_config():
    return McConfig(k=3, learn_sigma=True, sigma_floor=0.1, em_iters=200,
                    tol=1e-6, init_strategy="mixed", intercept=False,
                    min_responsibility=0.05, min_cluster_frac=0.02)


def anti_causal_hrm_config(seed=0):
    """Tuned loop for the response-to-feature scenario: components differ in
    residual variance, so the noise scale is learned per component, the
    handoff is hard, and the predictor gets a closed-gate alternative start
    while exploring."""
    return HrmConfig(rounds=5, stop_tol=0.01, handoff="hard",
                     lam_explore=200.0, mp_multi_start=True,
                     min_env_points=20, seed=seed,
                     mc=anti_causal_mc_config(),
                     mp=MpConfig(lam=10.0, alpha=0.05))


@dataclass
class ExperimentSpec:
    scenario: str = "selection_bias"
    methods: Sequence[str] = METHOD_ORDER
    n_runs: int = 10
    master_seed: int = 0
    r_values: Sequence[float] = (1.9,)
    n_train: int = 2000
    kappa: float = 0.95
    n_phi: int = 9
    n_psi: int = 1
    n_test: int = 10000
    test_grid: Sequence[float] = SELECTION_TEST_GRID
    n_train_per_env: int = 1000
    n_test_per_env: int = 5000
    out_dir: Optional[str] = None
    write_hrm_artifacts: bool = False

    def __post_init__(self):
        if self.scenario not in ("selection_bias", "anti_causal"):
            raise ConfigurationError("unknown scenario %r" % self.scenario)
        if self.n_runs < 1:
            raise ConfigurationError("n_runs must be >= 1")
        if not self.methods:
            raise ConfigurationError("at least one method required")
        for m in self.methods:
            if m not in METHOD_ORDER:
                raise ConfigurationError("unknown method %r" % m)


def selection_seeds(master_seed, run):
    return master_seed + 1000 + run, master_seed + 500 + run


def anti_causal_seeds(master_seed, run):
    return master_seed + 4000 + run, master_seed + 500 + run


def _run_methods(train, tests, methods, scenario, hrm_seed, hrm_out=None):
    cells = {}
    for m in methods:
        t0 = time.time()
        try:
            extra = {}
            if m == "erm":
                model = fit_erm(train.X, train.y)
            elif m == "dro":
                model, _ = fit_dro(train.X, train.y, dro_defaults())
            elif m == "irm":
                envs = [(train.X[train.env_labels == j],
                         train.y[train.env_labels == j])
                        for j in np.unique(train.env_labels)]
                model = fit_irm(envs, irm_defaults())
            else:
                cfg = (selection_hrm_config(hrm_seed)
                       if scenario == "selection_bias"
                       else anti_causal_hrm_config(hrm_seed))
                out = None if hrm_out is None else str(Path(hrm_out) / m)
                if m == "hrm_s":
                    state = run_hrm_single(train, cfg, out_dir=out)
                else:
                    state = run_hrm(train, cfg, out_dir=out)
                model = state.model
                extra = {"agreement_initial": state.agreement_initial,
                         "agreement_final": state.agreement_final,
                         "rounds": state.rounds_completed,
                         "selected_dims":
                             np.flatnonzero(state.selected).tolist()}
            rep = evaluate_model(model, tests)
            cells[m] = {"per_env": rep.per_env, "mean": rep.mean_error,
                        "std": rep.std_error, "max": rep.max_error,
                        "seconds": time.time() - t0, **extra}
        except HrmLabError as e:
            cells[m] = {"error": "%s: %s" % (type(e).__name__, e),
                        "seconds": time.time() - t0}
    return cells


def _selection_cell(args):
    (r, run, master, n_train, kappa, n_phi, n_psi, n_test, grid, methods,
     out_dir) = args
    data_seed, hrm_seed = selection_seeds(master, run)
    rng = np.random.default_rng(data_seed)
    gen = SelectionBiasConfig(d=n_phi + n_psi, n_phi=n_phi, r=r, sum=n_train,
                              kappa=kappa)
    t0 = time.time()
    train = generate_selection_bias(gen, data_seed, rng=rng)
    tests = generate_test_grid(gen, grid, n_test, data_seed, rng=rng)
    gen_seconds = time.time() - t0
    cells = _run_methods(train, tests, methods, "selection_bias", hrm_seed,
                         hrm_out=out_dir)
    cells["_gen_seconds"] = gen_seconds
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "cells.json").write_text(
            json.dumps(cells, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    return cells


def _anti_causal_cell(args):
    (run, master, n_phi, n_psi, n_train_env, n_test_env, methods,
     out_dir) = args
    data_seed, hrm_seed = anti_causal_seeds(master, run)
    rng = np.random.default_rng(data_seed)
    gen = AntiCausalConfig(n_phi=n_phi, n_psi=n_psi)
    gen.sample_thetas(rng)
    t0 = time.time()
    train_envs = generate_anti_causal(
        gen, one_hot_environments(gen.k, [0, 1, 2]), data_seed,
        n_per_env=n_train_env, rng=rng)
    tests = generate_anti_causal(
        gen, one_hot_environments(gen.k, range(gen.k)), data_seed,
        n_per_env=n_test_env, rng=rng)
    gen_seconds = time.time() - t0
    train = Dataset.concat(train_envs)
    cells = _run_methods(train, tests, methods, "anti_causal", hrm_seed,
                         hrm_out=out_dir)
    cells["_gen_seconds"] = gen_seconds
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "cells.json").write_text(
            json.dumps(cells, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    return cells


def pool_size(n_tasks):
    raw = os.environ.get("HRM_LAB_THREADS")
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigurationError("HRM_LAB_THREADS must be an integer")
        if cap < 1:
            raise ConfigurationError("HRM_LAB_THREADS must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def _map_tasks(fn, tasks):
    """Order-preserving map over a process pool; results land at the index
    of their task regardless of completion order."""
    workers = pool_size(len(tasks))
    if workers == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def _aggregate_column(run_cells, methods):
    """run_cells: {run_index: {method: cell}} -> per-method aggregate."""
    agg = {}
    for m in methods:
        reports = []
        fails = []
        agree_pairs = []
        seconds = 0.0
        for run in sorted(run_cells):
            cell = run_cells[run][m]
            seconds += cell.get("seconds", 0.0)
            if "error" in cell:
                fails.append({"run": run, "error": cell["error"]})
                continue
            reports.append(compute_metrics(cell["per_env"]))
            if cell.get("agreement_initial") is not None:
                agree_pairs.append((cell["agreement_initial"],
                                    cell["agreement_final"]))
        entry = {"n_ok": len(reports), "failures": fails, "seconds": seconds}
        if reports:
            rep = aggregate_reports(reports)
            entry.update({"mean": rep.mean_error, "std": rep.std_error,
                          "max": rep.max_error, "per_env": rep.per_env})
        if agree_pairs:
            entry["agreement_improved"] = int(
                sum(1 for a, b in agree_pairs if b > a))
            entry["agreement_initial_mean"] = float(
                np.mean([a for a, _ in agree_pairs]))
            entry["agreement_final_mean"] = float(
                np.mean([b for _, b in agree_pairs]))
        agg[m] = entry
    return agg


def run_experiment(spec):
    """Execute every (column, run) task, aggregate, and write outputs."""
    t0 = time.time()
    out = Path(spec.out_dir) if spec.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def run_dir(col_tag, run):
        if out is None or not spec.write_hrm_artifacts:
            return None
        return str(out / ("run_%s_%02d" % (col_tag, run)))

    methods = tuple(spec.methods)
    columns = {}
    if spec.scenario == "selection_bias":
        tasks = []
        keys = []
        for r in spec.r_values:
            tag = ("r%g" % r).replace("-", "m").replace(".", "p")
            for run in range(spec.n_runs):
                tasks.append((r, run, spec.master_seed, spec.n_train,
                              spec.kappa, spec.n_phi, spec.n_psi, spec.n_test,
                              tuple(spec.test_grid), methods,
                              run_dir(tag, run)))
                keys.append(("r=%g" % r, run))
        results = _map_tasks(_selection_cell, tasks)
    else:
        tasks = [(run, spec.master_seed, spec.n_phi, spec.n_psi,
                  spec.n_train_per_env, spec.n_test_per_env, methods,
                  run_dir("envs", run))
                 for run in range(spec.n_runs)]
        keys = [("envs", run) for run in range(spec.n_runs)]
        results = _map_tasks(_anti_causal_cell, tasks)

    by_col = {}
    for (col, run), cells in zip(keys, results):
        by_col.setdefault(col, {})[run] = cells
    for col, run_cells in by_col.items():
        columns[col] = _aggregate_column(run_cells, methods)

    result = {
        "scenario": spec.scenario,
        "methods": list(methods),
        "n_runs": spec.n_runs,
        "master_seed": spec.master_seed,
        "columns": columns,
        "per_run": {col: by_col[col] for col in by_col},
        "elapsed_sec": time.time() - t0,
    }
    if out is not None:
        _write_outputs(out, spec, result)
    return result


def _fmt(v):
    return repr(float(v))


def _write_outputs(out, spec, result):
    methods = list(spec.methods)
    cols = list(result["columns"])
    lines = []
    if spec.scenario == "selection_bias":
        lines.append("method,r,mean_error,std_error,max_error")
        for m in methods:
            for col in cols:
                e = result["columns"][col][m]
                r_val = col.split("=", 1)[1]
                if "mean" in e:
                    lines.append("%s,%s,%s,%s,%s" % (
                        METHOD_LABELS[m], r_val, _fmt(e["mean"]),
                        _fmt(e["std"]), _fmt(e["max"])))
                else:
                    lines.append("%s,%s,nan,nan,nan" % (METHOD_LABELS[m], r_val))
    else:
        lines.append("method,env,error")
        for m in methods:
            e = result["columns"]["envs"][m]
            per = e.get("per_env")
            for j in range(len(per) if per else 0):
                lines.append("%s,%d,%s" % (METHOD_LABELS[m], j + 1,
                                           _fmt(per[j])))
            if per is None:
                lines.append("%s,all,nan" % METHOD_LABELS[m])
    (out / "results.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    md = []
    if spec.scenario == "selection_bias":
        md.append("| Method | " + " | ".join(cols) + " |")
        md.append("|" + "---|" * (len(cols) + 1))
        for m in methods:
            row = [METHOD_LABELS[m]]
            for col in cols:
                e = result["columns"][col][m]
                row.append("%.3f/%.3f" % (e["mean"], e["std"])
                           if "mean" in e else "FAILED")
            md.append("| " + " | ".join(row) + " |")
    else:
        n_env = 0
        for m in methods:
            per = result["columns"]["envs"][m].get("per_env")
            if per:
                n_env = len(per)
                break
        md.append("| Method | " + " | ".join("e%d" % (j + 1)
                                             for j in range(n_env)) + " |")
        md.append("|" + "---|" * (n_env + 1))
        for m in methods:
            e = result["columns"]["envs"][m]
            per = e.get("per_env")
            cells = (["%.3f" % v for v in per] if per
                     else ["FAILED"] * n_env)
            md.append("| " + METHOD_LABELS[m] + " | " + " | ".join(cells) + " |")
    (out / "results.md").write_text("\n".join(md) + "\n", encoding="utf-8")

    manifest = {
        "scenario": spec.scenario,
        "methods": methods,
        "n_runs": spec.n_runs,
        "master_seed": spec.master_seed,
        "spec": _spec_dict(spec),
        "method_configs": {
            "erm": asdict(BaselineConfig(method="erm")),
            "irm": asdict(irm_defaults()),
            "dro": asdict(dro_defaults()),
            "hrm": _hrm_config_dict(spec.scenario),
        },
        "runs": _run_manifest(spec),
        "elapsed_sec": result["elapsed_sec"],
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def _spec_dict(spec):
    d = asdict(spec)
    d["methods"] = list(d["methods"])
    d["r_values"] = list(d["r_values"])
    d["test_grid"] = list(d["test_grid"])
    return d


def _hrm_config_dict(scenario):
    cfg = (selection_hrm_config(0) if scenario == "selection_bias"
           else anti_causal_hrm_config(0))
    return asdict(cfg)


def _run_manifest(spec):
    runs = []
    seed_fn = (selection_seeds if spec.scenario == "selection_bias"
               else anti_causal_seeds)
    for run in range(spec.n_runs):
        data_seed, hrm_seed = seed_fn(spec.master_seed, run)
        runs.append({"run": run, "data_seed": data_seed,
                     "hrm_seed": hrm_seed})
    return runs


def reproduce(table_id, n_runs=10, master_seed=0, out_dir=None,
              methods=METHOD_ORDER, artifacts=True):
    """Build and run the experiment behind a named results table."""
    if table_id == "sim-selection-s1":
        spec = ExperimentSpec(scenario="selection_bias",
                              r_values=(1.5, 1.9, 2.3), n_runs=n_runs,
                              master_seed=master_seed, out_dir=out_dir,
                              methods=methods,
                              write_hrm_artifacts=artifacts)
    elif table_id == "anti-causal-s1":
        spec = ExperimentSpec(scenario="anti_causal", n_runs=n_runs,
                              master_seed=master_seed, out_dir=out_dir,
                              methods=methods,
                              write_hrm_artifacts=artifacts)
    else:
        raise ConfigurationError(
            "unknown table id %r (known: %s)" % (table_id, ", ".join(TABLE_IDS)))
    return run_experiment(spec)
