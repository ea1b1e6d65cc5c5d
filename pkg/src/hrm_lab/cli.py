"""Command-line entry point.

Subcommands
  generate   write a synthetic dataset described by a JSON config
  train      fit one method on a saved dataset, write model.json
  evaluate   score a saved model on a saved dataset, write metrics.json
  reproduce  run a named results table end to end
  selftest   run the built-in sanity checks

Exit codes: 0 success, 2 configuration/usage error, 3 generation or
training failure.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import dro_defaults, fit_dro, fit_erm, fit_irm, irm_defaults
from .dataset import Dataset
from .datagen import (AntiCausalConfig, SelectionBiasConfig,
                      generate_anti_causal, generate_selection_bias,
                      one_hot_environments)
from .driver import run_hrm, run_hrm_single
from .errors import (ConfigurationError, GenerationError, HrmLabError,
                     TrainingError)
from .experiment import (METHOD_ORDER, TABLE_IDS, anti_causal_hrm_config,
                         reproduce, selection_hrm_config)
from .gates import LinearModel
from .metrics import compute_metrics
from .selftest import run_selftest

SCHEMA_VERSION = 1


def load_config(path):
    if path is None:
        raise ConfigurationError("--config is required for this subcommand")
    p = Path(path)
    if not p.exists():
        raise ConfigurationError("config file not found: %s" % path)
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError("config is not valid JSON: %s" % e)
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            "unsupported schema_version %r (expected %d)"
            % (version, SCHEMA_VERSION))
    return cfg


def _build_dataclass(cls, params, what):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(params) - fields
    if unknown:
        raise ConfigurationError(
            "unknown %s fields: %s" % (what, ", ".join(sorted(unknown))))
    return cls(**params)


def _override(obj, params, what):
    fields = {f.name for f in dataclasses.fields(obj)}
    unknown = set(params) - fields
    if unknown:
        raise ConfigurationError(
            "unknown %s fields: %s" % (what, ", ".join(sorted(unknown))))
    return dataclasses.replace(obj, **params)


def cmd_generate(ns):
    cfg = load_config(ns.config)
    scenario = cfg.get("scenario")
    seed = ns.seed if ns.seed is not None else int(cfg.get("seed", 0))
    out = Path(ns.out or "data")
    params = dict(cfg.get("params", {}))
    if scenario == "selection_bias":
        gen = _build_dataclass(SelectionBiasConfig, params, "selection_bias")
        ds = generate_selection_bias(gen, seed)
    elif scenario == "anti_causal":
        gen = _build_dataclass(AntiCausalConfig, params, "anti_causal")
        rng = np.random.default_rng(seed)
        gen.sample_thetas(rng)
        envs = cfg.get("envs", [0, 1, 2])
        n_per_env = int(cfg.get("n_per_env", 1000))
        parts = generate_anti_causal(
            gen, one_hot_environments(gen.k, envs), seed,
            n_per_env=n_per_env, rng=rng)
        ds = Dataset.concat(parts)
    else:
        raise ConfigurationError(
            "scenario must be 'selection_bias' or 'anti_causal', got %r"
            % scenario)
    ds.save(str(out), name=cfg.get("name", "dataset"))
    print("wrote %s" % (out / (cfg.get("name", "dataset") + ".csv")))
    return 0


def _train_one(method, data, cfg, seed):
    if method == "erm":
        return fit_erm(data.X, data.y)
    if method == "dro":
        base = dro_defaults()
        model, _ = fit_dro(data.X, data.y,
                           _override(base, cfg.get("dro", {}), "dro"))
        return model
    if method == "irm":
        if data.env_labels is None:
            raise ConfigurationError("irm needs a dataset with an env column")
        envs = [(data.X[data.env_labels == j], data.y[data.env_labels == j])
                for j in np.unique(data.env_labels)]
        base = irm_defaults()
        return fit_irm(envs, _override(base, cfg.get("irm", {}), "irm"))
    if method in ("hrm", "hrm_s"):
        preset = cfg.get("preset", "selection_bias")
        if preset == "selection_bias":
            hrm_cfg = selection_hrm_config(seed)
        elif preset == "anti_causal":
            hrm_cfg = anti_causal_hrm_config(seed)
        else:
            raise ConfigurationError("unknown preset %r" % preset)
        hrm_cfg = _override(hrm_cfg, cfg.get("hrm", {}), "hrm")
        hrm_cfg = dataclasses.replace(
            hrm_cfg,
            mc=_override(hrm_cfg.mc, cfg.get("mc", {}), "mc"),
            mp=_override(hrm_cfg.mp, cfg.get("mp", {}), "mp"))
        runner = run_hrm_single if method == "hrm_s" else run_hrm
        return runner(data, hrm_cfg).model
    raise ConfigurationError(
        "unknown method %r (choose from %s)" % (method, ", ".join(METHOD_ORDER)))


def cmd_train(ns):
    cfg = load_config(ns.config)
    data_path = cfg.get("data")
    if not data_path:
        raise ConfigurationError("config needs a 'data' path to a dataset CSV")
    data = Dataset.load(data_path)
    method = ns.method or cfg.get("method", "hrm")
    seed = ns.seed if ns.seed is not None else int(cfg.get("seed", 0))
    model = _train_one(method, data, cfg, seed)
    out = Path(ns.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.json"
    model.save(model_path, config={"method": method, "data": str(data_path)},
               seed=seed)
    print("wrote %s" % model_path)
    return 0


def cmd_evaluate(ns):
    cfg = load_config(ns.config)
    model_path = cfg.get("model")
    data_path = cfg.get("data")
    if not model_path or not data_path:
        raise ConfigurationError("config needs 'model' and 'data' paths")
    model = LinearModel.load(model_path)
    data = Dataset.load(data_path)
    if data.env_labels is not None and len(np.unique(data.env_labels)) >= 2:
        losses = [model.mse(data.X[data.env_labels == j],
                            data.y[data.env_labels == j])
                  for j in np.unique(data.env_labels)]
        rep = compute_metrics(losses)
        blob = {"per_env": rep.per_env, "mean_error": rep.mean_error,
                "std_error": rep.std_error, "max_error": rep.max_error}
    else:
        mse = model.mse(data.X, data.y)
        blob = {"per_env": [mse], "mean_error": mse, "std_error": None,
                "max_error": mse}
    out = Path(ns.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.json"
    path.write_text(json.dumps(blob, indent=2) + "\n", encoding="utf-8")
    print("wrote %s" % path)
    print("mean_error %.6f" % blob["mean_error"])
    return 0


def cmd_reproduce(ns):
    out = ns.out or ("results_" + ns.table_id.replace("-", "_"))
    result = reproduce(ns.table_id, n_runs=ns.runs,
                       master_seed=ns.seed if ns.seed is not None else 0,
                       out_dir=out)
    print("wrote %s" % (Path(out) / "results.csv"))
    for col, per_method in result["columns"].items():
        for m, entry in per_method.items():
            if "mean" in entry:
                print("%-16s %-6s mean %.3f std %.3f max %.3f"
                      % (col, m, entry["mean"], entry["std"], entry["max"]))
            else:
                print("%-16s %-6s FAILED (%d runs)" % (col, m,
                                                       len(entry["failures"])))
    return 0


def cmd_selftest(ns):
    results = run_selftest(verbose=True)
    failures = [r for r in results if r[1] is not None]
    print("%d/%d checks passed" % (len(results) - len(failures), len(results)))
    return 0 if not failures else 1


def build_parser():
    p = argparse.ArgumentParser(
        prog="hrm-lab",
        description="Latent-environment discovery and invariant regression "
                    "benchmark harness.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config", required=True, help="JSON generator config")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", default=None, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit one method on a saved dataset")
    t.add_argument("--config", required=True, help="JSON training config")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None, help="output directory")
    t.add_argument("--method", choices=list(METHOD_ORDER), default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a saved model on a dataset")
    e.add_argument("--config", required=True, help="JSON evaluation config")
    e.add_argument("--out", default=None, help="output directory")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("reproduce", help="run a named results table")
    r.add_argument("table_id", choices=list(TABLE_IDS))
    r.add_argument("--runs", type=int, default=10)
    r.add_argument("--seed", type=int, default=None, help="master seed")
    r.add_argument("--out", default=None, help="output directory")
    r.set_defaults(func=cmd_reproduce)

    s = sub.add_parser("selftest", help="run built-in sanity checks")
    s.set_defaults(func=cmd_selftest)
    return p


def cli_main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code if e.code is not None else 0
        return int(code) if isinstance(code, int) else 2
    try:
        return ns.func(ns)
    except ConfigurationError as e:
        print("config error: %s" % e, file=sys.stderr)
        return 2
    except (GenerationError, TrainingError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 3
    except HrmLabError as e:
        print("error: %s" % e, file=sys.stderr)
        return 3


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
