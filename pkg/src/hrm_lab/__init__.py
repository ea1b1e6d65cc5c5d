"""Latent-environment discovery and invariant regression toolkit.

Heterogeneous Risk Minimization alternates two modules: a mixture-of-
regressions clusterer that splits pooled data into latent environments
using the currently-variant features, and a gated linear predictor whose
cross-environment gradient-variance penalty pushes the gates onto the
invariant features. Baselines (ERM, IRM, DRO), synthetic shift
generators, metrics, and a seeded experiment runner round out the
benchmark harness.
"""

__version__ = "0.1.0"

from .baselines import (BaselineConfig, dro_defaults, fit_dro, fit_erm,
                        fit_irm, irm_defaults)
from .clustering import (ClusterCenter, EnvironmentPartition, McConfig,
                         fit_mc, partition_agreement, sharpen, suggest_k)
from .dataset import Dataset
from .datagen import (AntiCausalConfig, SelectionBiasConfig,
                      generate_anti_causal, generate_selection_bias,
                      generate_test_grid, one_hot_environments)
from .driver import HrmConfig, HrmState, run_hrm, run_hrm_single
from .errors import (ConfigurationError, GenerationError, HrmLabError,
                     TrainingError)
from .experiment import (ExperimentSpec, anti_causal_hrm_config, reproduce,
                         run_experiment, selection_hrm_config)
from .gates import GateVector, LinearModel, expected_l0, gate_mask, hard_mask
from .invariant import (EnvStats, MpConfig, env_risk, fit_mp,
                        fit_mp_multistart, variance_penalty)
from .metrics import (MetricsReport, aggregate_reports, compute_metrics,
                      evaluate_model)

__all__ = [
    "AntiCausalConfig", "BaselineConfig", "ClusterCenter",
    "ConfigurationError", "Dataset", "EnvStats", "EnvironmentPartition",
    "ExperimentSpec", "GateVector", "GenerationError", "HrmConfig",
    "HrmLabError", "HrmState", "LinearModel", "McConfig", "MetricsReport",
    "MpConfig", "SelectionBiasConfig", "TrainingError",
    "aggregate_reports", "anti_causal_hrm_config", "compute_metrics",
    "dro_defaults", "env_risk", "evaluate_model", "expected_l0", "fit_dro",
    "fit_erm", "fit_irm", "fit_mc", "fit_mp", "fit_mp_multistart",
    "gate_mask", "generate_anti_causal", "generate_selection_bias",
    "generate_test_grid", "hard_mask", "irm_defaults",
    "one_hot_environments", "partition_agreement", "reproduce",
    "run_experiment", "run_hrm", "run_hrm_single", "selection_hrm_config",
    "sharpen", "suggest_k", "variance_penalty",
]
