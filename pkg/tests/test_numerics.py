"""
Unit tests for the special functions and one-dimensional routines.
"""

import math

import numpy as np
import pytest

from utils.errors import DomainError, InvalidBracketError
from utils.numerics import (
    Interval,
    QuadratureSpec,
    chi2_cdf,
    chi2_quantile,
    find_root_monotone,
    integrate,
    sin_power_norm,
    std_normal_cdf,
    std_normal_quantile,
)

# ============================================================================
# Test: Normal distribution function and quantile
# ============================================================================


@pytest.mark.unit
def test_std_normal_cdf_known_values():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(1.959963984540054) == pytest.approx(0.975, abs=1e-12)
    assert std_normal_cdf(-1.0) == pytest.approx(0.15865525393145707, abs=1e-14)


@pytest.mark.unit
def test_std_normal_quantile_known_values():
    assert std_normal_quantile(0.5) == 0.0
    assert std_normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-10)
    assert std_normal_quantile(1e-10) == pytest.approx(-6.361340902404056, abs=1e-8)


@pytest.mark.unit
@pytest.mark.parametrize("x", np.linspace(-6.0, 5.0, 23))
def test_std_normal_quantile_inverts_cdf(x):
    assert std_normal_quantile(std_normal_cdf(x)) == pytest.approx(x, abs=1e-8)


@pytest.mark.unit
@pytest.mark.parametrize("p", [1e-12, 0.001, 0.3, 0.5, 0.77, 0.999, 1 - 1e-9])
def test_std_normal_cdf_inverts_quantile(p):
    assert std_normal_cdf(std_normal_quantile(p)) == pytest.approx(p, rel=1e-12, abs=1e-15)


@pytest.mark.unit
@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float('nan')])
def test_std_normal_quantile_rejects_closed_endpoints(p):
    with pytest.raises(DomainError):
        std_normal_quantile(p)


@pytest.mark.unit
def test_std_normal_cdf_rejects_non_finite():
    with pytest.raises(DomainError):
        std_normal_cdf(float('nan'))


# ============================================================================
# Test: Chi-squared
# ============================================================================


@pytest.mark.unit
def test_chi2_cdf_known_values():
    assert chi2_cdf(0.0, 3) == 0.0
    assert chi2_cdf(3.841458820694124, 1) == pytest.approx(0.95, abs=1e-12)
    # d = 2 is an exponential with mean 2
    assert chi2_cdf(2.0, 2) == pytest.approx(1 - math.exp(-1.0), abs=1e-14)


@pytest.mark.unit
@pytest.mark.parametrize("d", [1, 2, 3, 5, 30])
@pytest.mark.parametrize("p", [0.01, 0.25, 0.5, 0.9, 0.999999])
def test_chi2_quantile_inverts_cdf(p, d):
    assert chi2_cdf(chi2_quantile(p, d), d) == pytest.approx(p, rel=1e-10)


@pytest.mark.unit
def test_chi2_rejects_bad_arguments():
    with pytest.raises(DomainError):
        chi2_cdf(-1.0, 2)
    with pytest.raises(DomainError):
        chi2_cdf(1.0, 0)
    with pytest.raises(DomainError):
        chi2_quantile(1.0, 2)
    with pytest.raises(DomainError):
        chi2_quantile(0.5, 2.5)


# ============================================================================
# Test: sin^k normalisation
# ============================================================================


@pytest.mark.unit
def test_sin_power_norm_closed_forms():
    assert sin_power_norm(1) == pytest.approx(2.0, rel=1e-14)
    assert sin_power_norm(2) == pytest.approx(math.pi / 2, rel=1e-14)
    assert sin_power_norm(3) == pytest.approx(4.0 / 3.0, rel=1e-14)
    assert sin_power_norm(4) == pytest.approx(3 * math.pi / 8, rel=1e-14)


@pytest.mark.unit
def test_sin_power_norm_matches_quadrature():
    value = integrate(lambda t: math.sin(t) ** 7, 0.0, math.pi)
    assert sin_power_norm(7) == pytest.approx(value, abs=1e-9)


@pytest.mark.unit
def test_sin_power_norm_rejects_zero():
    with pytest.raises(DomainError):
        sin_power_norm(0)


# ============================================================================
# Test: Quadrature and root finding
# ============================================================================


@pytest.mark.unit
@pytest.mark.parametrize("rule", ["adaptive-simpson", "gauss-legendre"])
def test_integrate_smooth_function(rule):
    spec = QuadratureSpec(rule=rule, abs_tol=1e-11)
    assert integrate(math.sin, 0.0, math.pi, spec) == pytest.approx(2.0, abs=1e-9)
    assert integrate(math.exp, 0.0, 1.0, spec) == pytest.approx(math.e - 1, abs=1e-9)


@pytest.mark.unit
def test_integrate_degenerate_and_reversed_limits():
    assert integrate(math.exp, 1.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        integrate(math.exp, 1.0, 0.0)
    with pytest.raises(DomainError):
        QuadratureSpec(rule="trapezoid")


@pytest.mark.unit
def test_find_root_monotone():
    root = find_root_monotone(lambda x: x ** 3 - 2.0, 0.0, 2.0)
    assert root == pytest.approx(2.0 ** (1.0 / 3.0), abs=1e-11)
    assert find_root_monotone(lambda x: x, 0.0, 1.0) == 0.0


@pytest.mark.unit
def test_find_root_monotone_without_sign_change():
    with pytest.raises(InvalidBracketError):
        find_root_monotone(lambda x: x * x + 1.0, -1.0, 1.0)


@pytest.mark.unit
def test_interval_is_half_open():
    window = Interval(0.0, 1.0)
    assert not window.contains(0.0)
    assert window.contains(1.0)
    assert window.length == 1.0
    with pytest.raises(DomainError):
        Interval(1.0, 1.0)
