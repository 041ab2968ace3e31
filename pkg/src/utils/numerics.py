"""
Numerical utility functions

Special functions and one-dimensional routines every stratification scheme
depends on: normal and chi-squared distribution functions with their inverses,
the sin^k normalisation constants, quadrature and bracketed root finding.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize, special

from utils.errors import ConvergenceError, DomainError, InvalidBracketError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Interval:
    """Half-open interval (lo, hi]; endpoints may be infinite where a scheme allows it."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"Interval requires lo < hi, got ({self.lo}, {self.hi})")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo < x <= self.hi


@dataclass(frozen=True)
class QuadratureSpec:
    """How `integrate` should evaluate an integral."""

    rule: str = "adaptive-simpson"
    abs_tol: float = 1e-10
    max_subdivisions: int = 60

    def __post_init__(self):
        if self.rule not in ("adaptive-simpson", "gauss-legendre"):
            raise DomainError(f"Unknown quadrature rule: {self.rule}")
        if not self.abs_tol > 0:
            raise DomainError("abs_tol must be positive")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be at least 1")


def _require_finite(x: float, name: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x!r}")
    return x


def _require_probability(p: float) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"Probability must lie in (0, 1), got {p!r}")
    return p


def _require_dof(d: int) -> int:
    if int(d) != d or d < 1:
        raise DomainError(f"Degrees of freedom must be a positive integer, got {d!r}")
    return int(d)


def std_normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT_2PI


def std_normal_cdf(x: float) -> float:
    """Standard normal distribution function Φ(x)."""
    return float(special.ndtr(_require_finite(x, "x")))


def std_normal_quantile(p: float) -> float:
    """
    Inverse of Φ.

    Starts from scipy's rational approximation and takes one Newton step on
    `std_normal_cdf` when that step brings Φ(x) closer to p, so the pair stays
    self-consistent.
    """
    p = _require_probability(p)
    if p == 0.5:
        return 0.0
    x = float(special.ndtri(p))
    density = std_normal_pdf(x)
    if density > 0.0:
        refined = x - (std_normal_cdf(x) - p) / density
        if abs(std_normal_cdf(refined) - p) < abs(std_normal_cdf(x) - p):
            x = refined
    return x


def chi2_cdf(x: float, d: int) -> float:
    """χ²_d distribution function, the regularised lower incomplete gamma P(d/2, x/2)."""
    d = _require_dof(d)
    x = float(x)
    if x < 0 or math.isnan(x):
        raise DomainError(f"chi2_cdf requires x >= 0, got {x!r}")
    return float(special.gammainc(0.5 * d, 0.5 * x))


def chi2_quantile(p: float, d: int) -> float:
    """Inverse of `chi2_cdf`; upper-tail probabilities go through the complement."""
    p = _require_probability(p)
    d = _require_dof(d)
    if p > 0.5:
        return 2.0 * float(special.gammainccinv(0.5 * d, 1.0 - p))
    return 2.0 * float(special.gammaincinv(0.5 * d, p))


def sin_power_norm(k: int) -> float:
    """c_k = ∫₀^π sinᵏ(x) dx = B(1/2, (k+1)/2)."""
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k!r}")
    return math.exp(float(special.betaln(0.5, 0.5 * (k + 1))))


def _adaptive_simpson(f, a, b, tol, max_depth):
    def simpson(fa, fm, fb, lo, hi):
        return (hi - lo) * (fa + 4.0 * fm + fb) / 6.0

    def recurse(lo, hi, fa, fm, fb, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        left_mid = 0.5 * (lo + mid)
        right_mid = 0.5 * (mid + hi)
        flm = f(left_mid)
        frm = f(right_mid)
        left = simpson(fa, flm, fm, lo, mid)
        right = simpson(fm, frm, fb, mid, hi)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps:
            return left + right + delta / 15.0
        if depth >= max_depth:
            raise ConvergenceError(
                f"adaptive Simpson did not converge on [{lo}, {hi}] after {max_depth} levels"
            )
        return (recurse(lo, mid, fa, flm, fm, left, 0.5 * eps, depth + 1)
                + recurse(mid, hi, fm, frm, fb, right, 0.5 * eps, depth + 1))

    fa, fb = f(a), f(b)
    fm = f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 1)


def _gauss_legendre(f, a, b, tol, max_doublings):
    def rule(order):
        nodes, weights = leggauss(order)
        x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        return 0.5 * (b - a) * sum(w * f(float(t)) for t, w in zip(x, weights))

    order = 8
    previous = rule(order)
    for _ in range(max_doublings):
        order *= 2
        current = rule(order)
        if abs(current - previous) <= tol:
            return current
        previous = current
    raise ConvergenceError(f"Gauss-Legendre did not converge up to order {order}")


def integrate(f: Callable[[float], float], a: float, b: float,
              spec: QuadratureSpec = QuadratureSpec()) -> float:
    """
    Integrate a smooth scalar function over a finite interval.

    Args:
        f: Integrand
        a, b: Finite limits with a <= b
        spec: Rule and tolerance

    Returns:
        The integral to within spec.abs_tol for smooth integrands
    """
    a = _require_finite(a, "a")
    b = _require_finite(b, "b")
    if a > b:
        raise DomainError(f"integrate requires a <= b, got [{a}, {b}]")
    if a == b:
        return 0.0
    if spec.rule == "gauss-legendre":
        # order doubles each round, so a handful of rounds is plenty
        return _gauss_legendre(f, a, b, spec.abs_tol, min(spec.max_subdivisions, 10))
    return _adaptive_simpson(f, a, b, spec.abs_tol, spec.max_subdivisions)


def find_root_monotone(g: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-12) -> float:
    """
    Root of a monotone function on a sign-changing bracket.

    Raises:
        InvalidBracketError: if g(lo) and g(hi) have the same strict sign
    """
    if not lo <= hi:
        raise InvalidBracketError(f"Bracket [{lo}, {hi}] is empty")
    g_lo, g_hi = g(lo), g(hi)
    if g_lo == 0.0:
        return float(lo)
    if g_hi == 0.0:
        return float(hi)
    if g_lo * g_hi > 0.0:
        raise InvalidBracketError(
            f"No sign change on [{lo}, {hi}]: g(lo)={g_lo!r}, g(hi)={g_hi!r}"
        )
    return float(optimize.brentq(g, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                                 maxiter=500))
