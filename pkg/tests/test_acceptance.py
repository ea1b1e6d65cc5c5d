"""Acceptance gate: the numeric claims the package is shipped against.

Each criterion is one test. The canonical tables are produced once per
session by the fixtures in conftest.py (10 runs, master seed 0) and every
assertion below reads from those tables. Runtime criteria use the summed
per-cell wall times recorded by the runner, which on a single worker is
the serial cost of the column.
"""

import time

from hrm_lab.selftest import run_selftest


def _column_runtime(result, col):
    total = 0.0
    for run_cells in result["per_run"][col].values():
        for key, cell in run_cells.items():
            if key == "_gen_seconds":
                total += cell
            else:
                total += cell.get("seconds", 0.0)
    return total


def test_criterion_1_selection_r19_errors(selection_results):
    result, _ = selection_results
    col = result["columns"]["r=1.9"]
    hrm, erm, irm = col["hrm"], col["erm"], col["irm"]
    assert hrm["n_ok"] == 10 and erm["n_ok"] == 10 and irm["n_ok"] == 10
    assert abs(hrm["mean"] - 0.449) <= 0.05, \
        "HRM mean %.4f not within 0.05 of 0.449" % hrm["mean"]
    assert hrm["std"] <= 0.05, "HRM std %.4f > 0.05" % hrm["std"]
    assert erm["mean"] >= hrm["mean"] + 0.03, \
        "ERM %.4f not >= HRM %.4f + 0.03" % (erm["mean"], hrm["mean"])
    assert abs(irm["mean"] - 0.456) <= 0.05, \
        "IRM mean %.4f not within 0.05 of 0.456" % irm["mean"]
    runtime = _column_runtime(result, "r=1.9")
    assert runtime < 600, "r=1.9 column took %.0fs" % runtime
    print("criterion 1 PASS: HRM %.3f+-%.3f ERM %.3f IRM %.3f (%.0fs)"
          % (hrm["mean"], hrm["std"], erm["mean"], irm["mean"], runtime))


def test_criterion_2_ordering_across_r(selection_results):
    result, _ = selection_results
    wins = 0
    detail = []
    for col_name in ("r=1.5", "r=1.9", "r=2.3"):
        col = result["columns"][col_name]
        means_ok = (col["hrm"]["mean"] <= col["irm"]["mean"]
                    <= col["erm"]["mean"])
        stds = {m: col[m]["std"] for m in col}
        std_ok = stds["hrm"] <= min(stds.values())
        wins += int(means_ok and std_ok)
        detail.append("%s mean_order=%s hrm_min_std=%s"
                      % (col_name, means_ok, std_ok))
    assert wins >= 2, "ordering held in %d/3 columns (%s)" % (wins,
                                                              "; ".join(detail))
    print("criterion 2 PASS: %d/3 columns (%s)" % (wins, "; ".join(detail)))


def test_criterion_3_single_round_ablation(selection_results):
    result, _ = selection_results
    col = result["columns"]["r=1.9"]
    full = col["hrm"]["mean"]
    single = col["hrm_s"]["mean"]
    assert single >= full + 0.01, \
        "HRM^s %.4f not above HRM %.4f by 0.01" % (single, full)
    print("criterion 3 PASS: HRM^s %.3f vs HRM %.3f (margin %.3f)"
          % (single, full, single - full))


def test_criterion_4_anti_causal_flatness(anti_causal_results):
    result, _ = anti_causal_results
    col = result["columns"]["envs"]
    hrm, erm = col["hrm"], col["erm"]
    assert hrm["n_ok"] == 10 and erm["n_ok"] == 10
    tail = hrm["per_env"][3:]
    hrm_range = max(tail) - min(tail)
    erm_growth = erm["per_env"][9] - erm["per_env"][3]
    assert hrm_range <= 0.08, "HRM e4..e10 range %.4f > 0.08" % hrm_range
    assert erm_growth >= 0.15, "ERM e10-e4 growth %.4f < 0.15" % erm_growth
    runtime = _column_runtime(result, "envs")
    assert runtime < 600, "anti-causal column took %.0fs" % runtime
    print("criterion 4 PASS: HRM range %.4f ERM growth %.2f (%.0fs)"
          % (hrm_range, erm_growth, runtime))


def test_criterion_5_partition_agreement_improves(selection_results):
    result, _ = selection_results
    hrm = result["columns"]["r=1.9"]["hrm"]
    improved = hrm["agreement_improved"]
    assert improved >= 8, "agreement improved in %d/10 runs" % improved
    print("criterion 5 PASS: %d/10 runs improved (%.3f -> %.3f mean)"
          % (improved, hrm["agreement_initial_mean"],
             hrm["agreement_final_mean"]))


def test_criterion_6_property_suite():
    t0 = time.time()
    results = run_selftest(verbose=False)
    elapsed = time.time() - t0
    failures = [(name, err) for name, err in results if err is not None]
    assert not failures, "property checks failed: %s" % failures
    assert elapsed < 180, "property suite took %.0fs" % elapsed
    print("criterion 6 PASS: %d checks in %.1fs" % (len(results), elapsed))
