"""Shared fixtures.

The two reproduction pipelines are expensive (several minutes each), so
they run once per session and every test that needs a full results table
reads from the same run.
"""

import pytest

from hrm_lab import reproduce


@pytest.fixture(scope="session")
def selection_results(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim_selection_s1")
    result = reproduce("sim-selection-s1", n_runs=10, master_seed=0,
                       out_dir=str(out))
    return result, out


@pytest.fixture(scope="session")
def anti_causal_results(tmp_path_factory):
    out = tmp_path_factory.mktemp("anti_causal_s1")
    result = reproduce("anti-causal-s1", n_runs=10, master_seed=0,
                       out_dir=str(out))
    return result, out
