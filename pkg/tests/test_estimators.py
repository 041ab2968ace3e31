"""
Unit tests for allocation, crude and stratified estimators and report metrics.
"""

import math

import numpy as np
import pytest

from estimation.estimators import (
    METHOD_CMC,
    METHOD_OBS,
    METHOD_OPT,
    METHOD_PROP,
    EstimateReport,
    accuracy,
    cmc_estimate,
    cmc_estimate_map,
    confidence_interval,
    format_float,
    observation_estimate,
    optimal_allocation,
    optimal_fractions,
    pilot_budget,
    proportional_allocation,
    proportional_estimate,
    run_optimal_pipeline,
    sample_stats,
    stratified_estimate,
    stratified_variance,
    variance_decomposition,
)
from estimation.flow import IdentityMap
from estimation.strata import build_cartesian, build_radial, build_spherical
from utils.errors import BudgetTooSmallError, DomainError
from utils.sampling import RngStream

HALF_NORMAL_SD = math.sqrt(1 - 2 / math.pi)


def first_coordinate_squared(x):
    return x[:, 0] ** 2


def skewed_linear(x):
    # within-stratum sds 1 and 3 under a two-cell split at 0
    return np.where(x[:, 0] <= 0, x[:, 0], 3 * x[:, 0]) / HALF_NORMAL_SD


# ============================================================================
# Test: Allocation
# ============================================================================


@pytest.mark.unit
def test_proportional_largest_remainder_breaks_ties_by_index():
    alloc = proportional_allocation([0.25] * 4, 10)
    assert alloc.counts == (3, 3, 2, 2)
    assert alloc.total == 10
    assert not alloc.fallback_proportional


@pytest.mark.unit
def test_proportional_pins_small_strata_to_the_floor():
    alloc = proportional_allocation([0.9, 0.05, 0.05], 20, min_per_stratum=2)
    assert alloc.counts == (16, 2, 2)


@pytest.mark.unit
@pytest.mark.parametrize("R", [16, 17, 57, 1000, 1001])
def test_allocations_sum_to_budget(R, rng):
    p = rng.open_uniform(8)
    p = p / p.sum()
    sd = rng.open_uniform(8) * 3
    for alloc in (proportional_allocation(p, R), optimal_allocation(p, sd, R)):
        assert sum(alloc.counts) == R
        assert min(alloc.counts) >= 2


@pytest.mark.unit
def test_budget_too_small():
    with pytest.raises(BudgetTooSmallError):
        proportional_allocation([1 / 3] * 3, 5)


@pytest.mark.unit
def test_allocation_rejects_bad_probabilities():
    with pytest.raises(DomainError):
        proportional_allocation([0.5, 0.6], 10)
    with pytest.raises(DomainError):
        optimal_allocation([0.5, 0.5], [1.0], 10)


@pytest.mark.unit
def test_neyman_allocation_follows_weighted_sds():
    alloc = optimal_allocation([0.5, 0.5], [1.0, 3.0], 100)
    assert alloc.counts == (25, 75)


@pytest.mark.unit
def test_neyman_gives_zero_variance_strata_the_floor():
    alloc = optimal_allocation([0.5, 0.5], [0.0, 1.0], 10, min_per_stratum=2)
    assert alloc.counts == (2, 8)
    assert not alloc.fallback_proportional


@pytest.mark.unit
def test_neyman_falls_back_when_every_sd_is_zero(caplog):
    alloc = optimal_allocation([0.25] * 4, [0.0] * 4, 12)
    assert alloc.fallback_proportional
    assert alloc.counts == (3, 3, 3, 3)
    assert "proportional" in caplog.text


@pytest.mark.unit
def test_pilot_budget_rounds_halves_up():
    assert pilot_budget(100) == 13
    assert pilot_budget(96) == 12
    assert pilot_budget(1000, 0.1) == 100


# ============================================================================
# Test: Crude Monte Carlo
# ============================================================================


@pytest.mark.unit
def test_sample_stats_uses_unbiased_variance():
    stats = sample_stats(np.array([1.0, 2.0, 3.0, 4.0]))
    assert stats.count == 4
    assert stats.mean == 2.5
    assert stats.sample_variance == pytest.approx(5 / 3)
    with pytest.raises(DomainError):
        sample_stats(np.array([1.0]))


@pytest.mark.unit
def test_cmc_estimate():
    report = cmc_estimate(lambda n: np.arange(1.0, n + 1), 4)
    assert report.method == METHOD_CMC
    assert report.estimate == 2.5
    assert report.sd == pytest.approx(math.sqrt(5 / 3 / 4))
    with pytest.raises(DomainError):
        cmc_estimate(lambda n: np.zeros(n), 1)


@pytest.mark.unit
def test_observation_estimate():
    data = np.array([[1.0, 0.0], [3.0, 0.0], [5.0, 0.0]])
    report = observation_estimate(lambda x: x[:, 0], data)
    assert report.method == METHOD_OBS
    assert report.estimate == 3.0
    assert report.budget == 3


@pytest.mark.fast
def test_cmc_through_identity_map_is_unbiased(rng):
    report = cmc_estimate_map(IdentityMap(2), first_coordinate_squared, 20_000, rng)
    assert abs(report.estimate - 1.0) < 4 * report.sd
    assert report.sd == pytest.approx(math.sqrt(2 / 20_000), rel=0.05)


# ============================================================================
# Test: Stratified estimation
# ============================================================================


@pytest.mark.unit
@pytest.mark.parametrize("d", [1, 3])
def test_single_stratum_is_bitwise_crude_monte_carlo(d):
    f = first_coordinate_squared
    transport = IdentityMap(d)
    stratified = proportional_estimate(build_cartesian(d, 1), transport, f, 500, RngStream(5))
    crude = cmc_estimate_map(transport, f, 500, RngStream(5))
    assert stratified.estimate == crude.estimate
    assert stratified.sd == crude.sd


@pytest.mark.unit
def test_thread_count_does_not_change_the_estimate():
    scheme = build_spherical(3, 2, 2)
    transport = IdentityMap(3)
    serial = proportional_estimate(scheme, transport, first_coordinate_squared, 800, RngStream(9))
    threaded = proportional_estimate(scheme, transport, first_coordinate_squared, 800, RngStream(9),
                                     threads=4)
    assert serial.estimate == threaded.estimate
    assert serial.sd == threaded.sd


@pytest.mark.fast
@pytest.mark.parametrize("scheme", [build_cartesian(2, 3), build_radial(2, 4),
                                    build_spherical(2, 2, 2)], ids=lambda s: s.kind)
def test_stratified_estimate_is_unbiased(scheme, rng):
    report = proportional_estimate(scheme, IdentityMap(2), first_coordinate_squared, 6000, rng)
    assert report.method == METHOD_PROP
    assert report.m == scheme.m
    assert sum(s.count for s in report.per_stratum) == 6000
    assert abs(report.estimate - 1.0) < 4 * report.sd


@pytest.mark.unit
def test_stratified_estimate_checks_allocation(rng):
    scheme = build_cartesian(1, 2)
    alloc = proportional_allocation([1 / 3] * 3, 9)
    with pytest.raises(DomainError):
        stratified_estimate(scheme, IdentityMap(1), first_coordinate_squared, alloc, rng)


@pytest.mark.unit
def test_optimal_pipeline_report(rng):
    scheme = build_cartesian(1, 2)
    report = run_optimal_pipeline(scheme, IdentityMap(1), skewed_linear, 400, rng)
    assert report.method == METHOD_OPT
    assert report.pilot_budget == 50
    assert report.allocation.total == 400
    assert sum(report.allocation.counts) == 400
    assert len(report.pilot_stats) == 2
    assert sum(s.count for s in report.pilot_stats) == 50
    # the noisier upper half gets more of the draws
    assert report.allocation.counts[1] > report.allocation.counts[0]
    assert report.printed_variance == pytest.approx((report.posthoc_sd * math.sqrt(400)) ** 2)


@pytest.mark.unit
def test_optimal_pipeline_rejects_bad_pilot_fraction(rng):
    with pytest.raises(DomainError):
        run_optimal_pipeline(build_cartesian(1, 2), IdentityMap(1), skewed_linear, 400, rng,
                             pilot_fraction=0.0)


@pytest.mark.unit
def test_optimal_pipeline_with_too_small_pilot(rng):
    with pytest.raises(BudgetTooSmallError):
        run_optimal_pipeline(build_cartesian(1, 8), IdentityMap(1), skewed_linear, 64, rng)


@pytest.mark.slow
def test_variance_ordering_over_repetitions():
    """Var(opt) < Var(prop) < Var(CMC), and reported sds track the spread."""
    scheme = build_cartesian(1, 2)
    transport = IdentityMap(1)
    R = 400
    estimates = {METHOD_CMC: [], METHOD_PROP: [], METHOD_OPT: []}
    reported = {METHOD_CMC: [], METHOD_PROP: []}
    master = RngStream(2024)
    for rep in range(1000):
        rng = master.spawn("rep", rep)
        crude = cmc_estimate_map(transport, skewed_linear, R, rng)
        prop = proportional_estimate(scheme, transport, skewed_linear, R, rng)
        opt = run_optimal_pipeline(scheme, transport, skewed_linear, R, rng)
        estimates[METHOD_CMC].append(crude.estimate)
        estimates[METHOD_PROP].append(prop.estimate)
        estimates[METHOD_OPT].append(opt.estimate)
        reported[METHOD_CMC].append(crude.sd ** 2)
        reported[METHOD_PROP].append(prop.sd ** 2)

    spread = {method: np.var(values, ddof=1) for method, values in estimates.items()}
    assert spread[METHOD_OPT] < spread[METHOD_PROP] < spread[METHOD_CMC]

    between = 0.25 * (3 * math.sqrt(2 / math.pi) / HALF_NORMAL_SD
                      + math.sqrt(2 / math.pi) / HALF_NORMAL_SD) ** 2
    assert np.mean(reported[METHOD_PROP]) == pytest.approx(5.0 / R, rel=0.05)
    assert np.mean(reported[METHOD_CMC]) == pytest.approx((5.0 + between) / R, rel=0.05)


# ============================================================================
# Test: Report metrics
# ============================================================================


@pytest.mark.unit
def test_confidence_interval():
    report = EstimateReport(estimate=1.0, sd=0.1, method=METHOD_CMC, budget=10)
    lo, hi = confidence_interval(report, 0.05)
    assert lo == pytest.approx(1.0 - 0.1959963984540054)
    assert hi == pytest.approx(1.0 + 0.1959963984540054)
    flat = EstimateReport(estimate=2.0, sd=0.0, method=METHOD_CMC, budget=10)
    assert confidence_interval(flat) == (2.0, 2.0)
    with pytest.raises(DomainError):
        confidence_interval(report, 1.0)


@pytest.mark.unit
def test_accuracy():
    assert accuracy(1.0, 1.1) == pytest.approx(1.0)
    assert accuracy(-2.0, -2.0002) == pytest.approx(4.0)
    assert accuracy(0.5, 0.5) == math.inf
    with pytest.raises(DomainError):
        accuracy(0.0, 0.1)


@pytest.mark.unit
def test_report_with_oracle_and_csv_row():
    report = EstimateReport(estimate=0.5, sd=0.01, method=METHOD_PROP, budget=100, m=4)
    scored = report.with_oracle(0.5, alpha=0.1)
    assert scored.accuracy == math.inf
    assert scored.ci[2] == 0.1
    row = scored.csv_row("j+1", seed=3)
    assert row["AC"] == "inf"
    assert row["m"] == 4
    assert row["R"] == 100
    assert row["seed"] == 3
    assert report.with_oracle(None).accuracy is None
    assert format_float(-math.inf) == "-inf"
    assert format_float(None) is None


@pytest.mark.unit
def test_variance_decomposition():
    within, between, total = variance_decomposition([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0])
    assert (within, between, total) == (1.0, 1.0, 2.0)


@pytest.mark.unit
def test_optimal_fractions_minimise_stratified_variance():
    p = np.array([0.5, 0.5])
    sigma = np.array([1.0, 3.0])
    best = optimal_fractions(p, sigma)
    np.testing.assert_allclose(best, [0.25, 0.75])
    assert stratified_variance(p, sigma, best) == pytest.approx(np.sum(p * sigma) ** 2)
    assert stratified_variance(p, sigma, p) == pytest.approx(np.sum(p * sigma ** 2))
    assert stratified_variance(p, sigma, best) < stratified_variance(p, sigma, p)
    with pytest.raises(DomainError):
        stratified_variance(p, sigma, [1.0, 0.0])
