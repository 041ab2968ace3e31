"""
Unit tests for the experiment grid: expansion, repetitions and aggregation.
"""

import json

import numpy as np
import pytest

from estimation.pipeline import (
    aggregate_rows,
    expand_grid,
    run_experiment,
    scaled_columns,
    scheme_label,
    with_defaults,
)
from utils.runtime import RUN_LOG_NAME, RunContext


def example1_config(**overrides):
    config = {
        "testbed": "example1",
        "functions": ["j+0.5"],
        "schemes": [{"kind": "cmc"}, {"kind": "cartesian", "m0": 1}],
        "R": [200],
        "repetitions": 2,
    }
    config.update(overrides)
    return config


# ============================================================================
# Test: Grid expansion
# ============================================================================


@pytest.mark.unit
def test_grid_crosses_functions_schemes_allocations_and_budgets():
    config = with_defaults(example1_config(
        functions=["j+0.5", "h1"],
        schemes=[{"kind": "cmc"}, {"kind": "cartesian", "m0": 2}],
        allocations=["prop", "opt"],
        R=[100, 400],
    ))
    cells = expand_grid(config)
    # cmc ignores the allocations
    assert len(cells) == 2 * (1 + 2) * 2
    assert [c.index for c in cells] == list(range(len(cells)))
    assert {c.method for c in cells} == {"CMC", "prop", "opt"}


@pytest.mark.unit
def test_scheme_labels():
    assert scheme_label({"kind": "cmc"}) == "cmc"
    assert scheme_label({"kind": "spherical", "m_r": 3, "m0": 2}) == "spherical(m0=2,m_r=3)"
    assert scheme_label({"kind": "cartesian", "m0": 2, "edges": [[0]]}) == "cartesian(m0=2)"


# ============================================================================
# Test: Running repetitions
# ============================================================================


@pytest.mark.unit
def test_single_stratum_reproduces_crude_monte_carlo(out_dir):
    result = run_experiment(example1_config(), RunContext(seed=7, out_dir=out_dir))
    by_rep = {}
    for cell, rep, report in result.reports:
        by_rep.setdefault(rep, {})[report.method] = report
    for reports in by_rep.values():
        assert reports["prop"].estimate == pytest.approx(reports["CMC"].estimate, rel=1e-12)
        assert reports["prop"].sd == pytest.approx(reports["CMC"].sd, rel=1e-12)


@pytest.mark.unit
def test_runs_are_reproducible(out_dir):
    first = run_experiment(example1_config(), RunContext(seed=3, out_dir=out_dir))
    second = run_experiment(example1_config(), RunContext(seed=3, out_dir=out_dir))
    other = run_experiment(example1_config(), RunContext(seed=4, out_dir=out_dir))
    assert [r["E"] for r in first.detail] == [r["E"] for r in second.detail]
    assert [r["E"] for r in first.detail] != [r["E"] for r in other.detail]


@pytest.mark.unit
def test_repetitions_differ_from_each_other(out_dir):
    result = run_experiment(example1_config(functions=["h1"], schemes=[{"kind": "cmc"}]),
                            RunContext(seed=1, out_dir=out_dir))
    assert result.detail[0]["E"] != result.detail[1]["E"]


@pytest.mark.unit
def test_parallel_repetitions_match_serial(out_dir):
    config = example1_config(repetitions=4, schemes=[{"kind": "cartesian", "m0": 2}])
    serial = run_experiment(config, RunContext(seed=11, out_dir=out_dir, threads=1))
    parallel = run_experiment(config, RunContext(seed=11, out_dir=out_dir, threads=3))
    assert [r["E"] for r in serial.detail] == [r["E"] for r in parallel.detail]


@pytest.mark.unit
def test_optimal_allocation_reports_the_pilot(out_dir):
    config = example1_config(schemes=[{"kind": "cartesian", "m0": 2}], allocations=["opt"],
                             R=[400], repetitions=1)
    result = run_experiment(config, RunContext(seed=2, out_dir=out_dir))
    row = result.detail[0]
    assert row["method"] == "opt"
    assert row["R_prime"] == 50
    assert row["m"] == 4


@pytest.mark.unit
def test_selected_dims_by_pilot_variance(out_dir):
    config = example1_config(
        schemes=[{"kind": "selected", "eta": 1, "m0": 2, "select": "high-variance", "R0": 64}],
        R=[100], repetitions=1,
    )
    result = run_experiment(config, RunContext(seed=2, out_dir=out_dir))
    assert result.detail[0]["m"] == 2


@pytest.mark.unit
def test_rows_carry_oracle_and_accuracy(out_dir):
    result = run_experiment(example1_config(), RunContext(seed=5, out_dir=out_dir))
    truth = 0.3149
    for row in result.detail:
        assert row["I"] == pytest.approx(truth, abs=1e-3)
        assert row["CI_lo"] < row["E"] < row["CI_hi"]
        assert row["AC"] is None or row["AC"] == "inf" or row["AC"] > 0


@pytest.mark.unit
def test_each_estimate_is_logged(out_dir):
    run_experiment(example1_config(), RunContext(seed=5, out_dir=out_dir))
    lines = (out_dir / RUN_LOG_NAME).read_text(encoding="utf-8").splitlines()
    records = [json.loads(line) for line in lines]
    assert len(records) == 4
    assert {r["event"] for r in records} == {"estimate"}
    assert all(r["seed"] == 5 and len(r["config_hash"]) == 64 for r in records)


# ============================================================================
# Test: Observations and trained models
# ============================================================================


@pytest.mark.unit
def test_observation_rows_are_appended_once(out_dir):
    config = example1_config(model={"kind": "exact", "n": 300}, include_obs=True,
                             schemes=[{"kind": "cmc"}])
    result = run_experiment(config, RunContext(seed=5, out_dir=out_dir))
    obs = [r for r in result.detail if r["method"] == "obs"]
    assert len(obs) == 1
    assert obs[0]["scheme"] == "observations"
    assert obs[0]["R"] == 300
    assert result.aggregate[-1]["method"] == "obs"


@pytest.mark.fast
def test_gmm_model_runs_crude_monte_carlo(out_dir):
    config = example1_config(model={"kind": "gmm", "k": 2, "n": 400}, schemes=[{"kind": "cmc"}],
                             repetitions=1)
    result = run_experiment(config, RunContext(seed=5, out_dir=out_dir))
    methods = [r["method"] for r in result.detail]
    # trained models report the observation estimate by default
    assert methods == ["CMC", "obs"]
    assert result.traces[0]


@pytest.mark.fast
def test_retraining_per_repetition(out_dir):
    config = example1_config(model={"kind": "gmm", "k": 1, "n": 200}, schemes=[{"kind": "cmc"}],
                             retrain_per_rep=True)
    result = run_experiment(config, RunContext(seed=5, out_dir=out_dir))
    obs = [r for r in result.detail if r["method"] == "obs"]
    assert len(obs) == 2
    assert obs[0]["E"] != obs[1]["E"]


# ============================================================================
# Test: Aggregation
# ============================================================================


@pytest.mark.unit
def test_aggregate_is_the_mean_over_repetitions(out_dir):
    config = example1_config(repetitions=3)
    result = run_experiment(config, RunContext(seed=9, out_dir=out_dir))
    assert len(result.aggregate) == 2
    for i, row in enumerate(result.aggregate):
        group = result.detail[i::2]
        assert row["K"] == 3
        assert row["E"] == pytest.approx(np.mean([r["E"] for r in group]))
        assert row["SD"] == pytest.approx(np.mean([r["SD"] for r in group]))


@pytest.mark.unit
def test_mean_accuracy_averages_the_per_repetition_values():
    cells = expand_grid(with_defaults(example1_config(schemes=[{"kind": "cmc"}])))
    base = {"method": "CMC", "f": "j+0.5", "scheme": "cmc", "m": 1, "R": 200, "R_prime": 0,
            "I": 0.5, "SD": 0.01}
    detail = [dict(base, E=0.49, AC=2.0), dict(base, E=0.4, AC=1.0)]
    row = aggregate_rows(detail, cells, 2, seed=0)[0]
    assert row["AC"] == pytest.approx(1.5)
    assert row["E"] == pytest.approx(0.445)


@pytest.mark.unit
def test_single_repetition_aggregate_equals_the_detail(out_dir):
    result = run_experiment(example1_config(), RunContext(seed=9, out_dir=out_dir), repetitions=1)
    for detail, aggregate in zip(result.detail, result.aggregate):
        assert aggregate["E"] == detail["E"]
        assert aggregate["K"] == 1


@pytest.mark.unit
def test_scaled_columns():
    assert scaled_columns(0.01234, 0.0002, 0.0125) == pytest.approx(
        {"E*": 1.234, "SD*": 0.02, "I*": 1.25})
    assert scaled_columns(0.5, 0.1, None)["I*"] is None


# ============================================================================
# Test: Example 1 at R = 2^12
# ============================================================================


def _by_method(result):
    grouped = {}
    for _, _, report in result.reports:
        grouped.setdefault(report.method, []).append(report)
    return grouped


def example1_tail_config(**overrides):
    return example1_config(**{
        "functions": ["j+1.2"],
        "schemes": [{"kind": "cmc"}, {"kind": "cartesian", "m0": 4}],
        "allocations": ["prop", "opt"],
        "R": [4096],
        **overrides,
    })


@pytest.mark.slow
def test_variance_ordering_with_the_exact_map(out_dir):
    result = run_experiment(example1_tail_config(repetitions=200),
                            RunContext(seed=2024, out_dir=out_dir))
    reports = _by_method(result)
    assert {len(v) for v in reports.values()} == {200}
    assert reports["prop"][0].m == 16

    realized = {method: float(np.var([r.estimate for r in group], ddof=1))
                for method, group in reports.items()}
    reported = {method: float(np.mean([r.sd ** 2 for r in group]))
                for method, group in reports.items()}
    # averaged per-repetition variance estimates carry little noise
    assert reported["opt"] <= reported["prop"] <= 1.05 * reported["CMC"]
    assert realized["opt"] <= 1.05 * realized["prop"]
    assert realized["opt"] <= 1.05 * realized["CMC"]
    assert realized["prop"] <= 1.25 * realized["CMC"]
    # the optimal split removes most of the variance on this tail probability
    assert realized["opt"] < 0.3 * realized["CMC"]


@pytest.mark.slow
def test_confidence_intervals_are_calibrated(out_dir):
    config = example1_tail_config(allocations=["opt"], repetitions=100)
    result = run_experiment(config, RunContext(seed=2024, out_dir=out_dir))
    reports = _by_method(result)
    lengths = {}
    for method in ("CMC", "opt"):
        group = reports[method]
        assert len(group) == 100
        missing = sum(not (r.ci[0] <= r.true_value <= r.ci[1]) for r in group)
        assert 1 <= missing <= 9
        lengths[method] = float(np.mean([r.ci[1] - r.ci[0] for r in group]))
    assert lengths["opt"] / lengths["CMC"] < 0.6


@pytest.mark.slow
def test_trained_flow_pipeline_beats_the_observations(out_dir):
    config = example1_tail_config(
        allocations=["opt"],
        repetitions=10,
        model={"kind": "flow", "n": 1000, "epochs": 300, "patience": 30,
               "learning_rate": 3e-3},
    )
    more_accurate = 0
    for seed in (1, 2, 3):
        result = run_experiment(config, RunContext(seed=seed, out_dir=out_dir))
        reports = _by_method(result)
        mean_sd = {method: float(np.mean([r.sd for r in reports[method]]))
                   for method in ("CMC", "opt")}
        assert mean_sd["opt"] < mean_sd["CMC"]

        obs = [row for row in result.detail if row["method"] == "obs"]
        assert len(obs) == 1
        flow_ac = float(np.mean([r.accuracy for r in reports["CMC"]]))
        if flow_ac > float(obs[0]["AC"]):
            more_accurate += 1
    # a stochastic criterion: most seeds, not all
    assert more_accurate >= 2
