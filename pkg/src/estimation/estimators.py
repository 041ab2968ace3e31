"""
Crude and stratified Monte Carlo estimators

Reports carry the estimate, its standard deviation and, when an oracle value is
known, the accuracy and confidence interval. Per-stratum draws come from
rng.spawn(j) so the combined estimate is the same however the strata are
scheduled across threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from estimation.strata import StrataScheme, sample_latent_batch
from utils.errors import BudgetTooSmallError, DomainError
from utils.numerics import std_normal_quantile
from utils.sampling import RngStream

logger = logging.getLogger(__name__)

DEFAULT_MIN_PER_STRATUM = 2
DEFAULT_PILOT_FRACTION = 1.0 / 8.0

METHOD_CMC = "CMC"
METHOD_PROP = "prop"
METHOD_OPT = "opt"
METHOD_GENERAL = "general"
METHOD_OBS = "obs"

CSV_COLUMNS = ["method", "f", "m", "R", "R_prime", "E", "SD", "AC", "CI_lo", "CI_hi", "seed"]

TargetFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Allocation:
    counts: Tuple[int, ...]
    total: int
    fallback_proportional: bool = False

    @property
    def m(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class StratumStats:
    count: int
    mean: float
    sample_variance: float

    @property
    def sd(self) -> float:
        return math.sqrt(self.sample_variance)


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    sd: float
    method: str
    budget: int
    m: int = 1
    pilot_budget: int = 0
    accuracy: Optional[float] = None
    ci: Optional[Tuple[float, float, float]] = None
    true_value: Optional[float] = None
    per_stratum: Optional[Tuple[StratumStats, ...]] = field(default=None, repr=False)
    pilot_stats: Optional[Tuple[StratumStats, ...]] = field(default=None, repr=False)
    allocation: Optional[Allocation] = field(default=None, repr=False)
    posthoc_sd: Optional[float] = None
    printed_variance: Optional[float] = None
    fallback_proportional: bool = False

    def with_oracle(self, true_value: Optional[float], alpha: float = 0.05) -> "EstimateReport":
        """Attach the confidence interval and, when I is known, the accuracy."""
        lo, hi = confidence_interval(self, alpha)
        ac = None if true_value is None else accuracy(true_value, self.estimate)
        return replace(self, ci=(lo, hi, alpha), accuracy=ac, true_value=true_value)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["accuracy"] = format_float(self.accuracy)
        return doc

    def csv_row(self, f_name: str, seed: int) -> Dict[str, object]:
        lo, hi = (self.ci[0], self.ci[1]) if self.ci else (None, None)
        return {
            "method": self.method,
            "f": f_name,
            "m": self.m,
            "R": self.budget,
            "R_prime": self.pilot_budget,
            "E": self.estimate,
            "SD": self.sd,
            "AC": format_float(self.accuracy),
            "CI_lo": lo,
            "CI_hi": hi,
            "seed": seed,
        }


def format_float(x: Optional[float]):
    """Infinite accuracies serialise as the string 'inf'."""
    if x is None:
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def sample_stats(y: np.ndarray) -> StratumStats:
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise DomainError(f"need at least 2 draws for a sample variance, got {y.size}")
    return StratumStats(int(y.size), float(np.mean(y)), float(np.var(y, ddof=1)))


# =====================================================
# CRUDE MONTE CARLO
# =====================================================

def cmc_estimate(draw: Callable[[int], np.ndarray], R: int) -> EstimateReport:
    """
    Sample mean of R iid draws with estimator variance Ŝ²/R.

    Args:
        draw: Called once with R, returns R realisations of Y
        R: Budget
    """
    if R < 2:
        raise DomainError(f"cmc_estimate needs R >= 2, got {R}")
    stats = sample_stats(draw(R))
    return EstimateReport(stats.mean, math.sqrt(stats.sample_variance / R), METHOD_CMC, R)


def cmc_estimate_map(transport, f: TargetFn, R: int, rng: RngStream) -> EstimateReport:
    """CMC through a transport map; latent draws come from rng.spawn(0), as stratum 0 would."""
    stream = rng.spawn(0)
    return cmc_estimate(lambda n: f(transport.forward(stream.standard_normal((n, transport.dimension)))), R)


def observation_estimate(f: TargetFn, observations: np.ndarray) -> EstimateReport:
    """Ŷ^obs: the sample mean of f over the training observations."""
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    report = cmc_estimate(lambda n: f(observations), observations.shape[0])
    return replace(report, method=METHOD_OBS)


# =====================================================
# ALLOCATION
# =====================================================

def _apportion(weights: np.ndarray, R: int, minimum: int) -> Tuple[int, ...]:
    """
    Integer split of R proportional to weights with a floor at `minimum`.

    Strata whose share falls below the floor are pinned to it and the rest is
    re-split among the others; the final rounding is largest remainder with
    ties going to the lower index.
    """
    m = weights.size
    if R < m * minimum:
        raise BudgetTooSmallError(
            f"budget R={R} cannot give each of {m} strata {minimum} draws"
        )
    pinned = np.zeros(m, dtype=bool)
    while True:
        free = np.flatnonzero(~pinned)
        remaining = R - minimum * int(pinned.sum())
        free_weight = weights[free].sum()
        if free_weight > 0:
            share = remaining * weights[free] / free_weight
        else:
            share = np.full(free.size, remaining / free.size)
        low = share < minimum
        if not low.any():
            break
        pinned[free[low]] = True

    counts = np.full(m, minimum, dtype=np.int64)
    base = np.floor(share).astype(np.int64)
    leftover = remaining - int(base.sum())
    order = np.argsort(-(share - base), kind="stable")
    base[order[:leftover]] += 1
    counts[free] = base
    return tuple(int(c) for c in counts)


def _check_probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("stratum probabilities must be non-negative and sum to 1")
    return p


def proportional_allocation(p: Sequence[float], R: int,
                            min_per_stratum: int = DEFAULT_MIN_PER_STRATUM) -> Allocation:
    """R_j ∝ p_j, largest-remainder rounded, floored at min_per_stratum."""
    p = _check_probs(p)
    return Allocation(_apportion(p, int(R), min_per_stratum), int(R))


def optimal_allocation(p: Sequence[float], pilot_sd: Sequence[float], R: int,
                       min_per_stratum: int = DEFAULT_MIN_PER_STRATUM) -> Allocation:
    """
    Neyman split R_j ∝ p_j·ŝ'_j.

    Strata with ŝ'_j = 0 get exactly min_per_stratum. An all-zero pilot falls
    back to the proportional split and sets fallback_proportional.
    """
    p = _check_probs(p)
    sd = np.asarray(pilot_sd, dtype=float).reshape(-1)
    if sd.size != p.size or np.any(sd < 0):
        raise DomainError("pilot_sd must be non-negative with one entry per stratum")
    weights = p * sd
    if not np.any(weights > 0):
        logger.warning("all pilot standard deviations are zero; using proportional allocation")
        return Allocation(_apportion(p, int(R), min_per_stratum), int(R), True)
    return Allocation(_apportion(weights, int(R), min_per_stratum), int(R))


# =====================================================
# STRATIFIED ESTIMATION
# =====================================================

def _stratum_draws(scheme: StrataScheme, transport, f: TargetFn, j: int, n: int,
                   rng: RngStream) -> np.ndarray:
    z = sample_latent_batch(scheme, j, n, rng.spawn(j))
    return np.asarray(f(transport.forward(z)), dtype=float)


def stratified_estimate(scheme: StrataScheme, transport, f: TargetFn, alloc: Allocation,
                        rng: RngStream, method: str = METHOD_GENERAL,
                        threads: int = 1) -> EstimateReport:
    """
    Ŷ = Σ p_j Ŷ_j with V̂ar = Σ p_j² ŝ_j² / R_j.

    Args:
        scheme: Strata of the latent Gaussian
        transport: Map pushing latent draws to data space
        f: Vectorised target, rows in, values out
        alloc: Per-stratum counts
        rng: Stratum j draws from rng.spawn(j)
        method: Report tag
        threads: Worker threads for the per-stratum draws
    """
    if alloc.m != scheme.m:
        raise DomainError(f"allocation has {alloc.m} strata, scheme has {scheme.m}")
    if min(alloc.counts) < 2:
        raise BudgetTooSmallError("every stratum needs at least 2 draws")

    def run(j: int) -> StratumStats:
        return sample_stats(_stratum_draws(scheme, transport, f, j, alloc.counts[j], rng))

    if threads > 1 and scheme.m > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(run, range(scheme.m)))
    else:
        stats = [run(j) for j in range(scheme.m)]

    p = scheme.probs
    means = np.array([s.mean for s in stats])
    variances = np.array([s.sample_variance for s in stats])
    counts = np.asarray(alloc.counts, dtype=float)
    estimate = float(np.sum(p * means))
    sd = math.sqrt(float(np.sum(p ** 2 * variances / counts)))
    return EstimateReport(estimate, sd, method, alloc.total, m=scheme.m, per_stratum=tuple(stats),
                          allocation=alloc, fallback_proportional=alloc.fallback_proportional)


def proportional_estimate(scheme: StrataScheme, transport, f: TargetFn, R: int, rng: RngStream,
                          min_per_stratum: int = DEFAULT_MIN_PER_STRATUM,
                          threads: int = 1) -> EstimateReport:
    alloc = proportional_allocation(scheme.probs, R, min_per_stratum)
    return stratified_estimate(scheme, transport, f, alloc, rng, METHOD_PROP, threads)


def pilot_budget(R: int, pilot_fraction: float = DEFAULT_PILOT_FRACTION) -> int:
    """R' = round(pilot_fraction·R), halves rounded up."""
    return int(math.floor(pilot_fraction * R + 0.5))


def run_optimal_pipeline(scheme: StrataScheme, transport, f: TargetFn, R: int, rng: RngStream,
                         pilot_fraction: float = DEFAULT_PILOT_FRACTION,
                         min_per_stratum: int = DEFAULT_MIN_PER_STRATUM,
                         threads: int = 1) -> EstimateReport:
    """
    Pilot proportional run of size R', Neyman split from its sds, then a fresh
    final run of size R. Pilot draws are extra and are not reused.

    The report's sd uses the general formula for the realised split; posthoc_sd
    is √(D²/R) with D = Σ p_j ŝ_j from the final run, and printed_variance is D².
    """
    if not 0.0 < pilot_fraction <= 1.0:
        raise DomainError(f"pilot_fraction must lie in (0, 1], got {pilot_fraction}")
    r_prime = pilot_budget(R, pilot_fraction)
    p = scheme.probs
    pilot_alloc = proportional_allocation(p, r_prime, min_per_stratum)
    pilot = stratified_estimate(scheme, transport, f, pilot_alloc, rng.spawn("pilot"),
                                METHOD_PROP, threads)
    pilot_sd = [s.sd for s in pilot.per_stratum]
    alloc = optimal_allocation(p, pilot_sd, R, min_per_stratum)
    final = stratified_estimate(scheme, transport, f, alloc, rng.spawn("final"), METHOD_OPT,
                                threads)
    spread = float(np.sum(p * np.array([s.sd for s in final.per_stratum])))
    return replace(final, pilot_budget=r_prime, pilot_stats=pilot.per_stratum,
                   posthoc_sd=spread / math.sqrt(R), printed_variance=spread ** 2)


# =====================================================
# REPORT METRICS
# =====================================================

def confidence_interval(report, alpha: float = 0.05) -> Tuple[float, float]:
    """E ± z_{1-α/2}·sd."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if report.sd == 0.0:
        return report.estimate, report.estimate
    half = std_normal_quantile(1.0 - alpha / 2.0) * report.sd
    return report.estimate - half, report.estimate + half


def accuracy(true_value: float, estimate: float) -> float:
    """AC = -log10|(I - E)/I|; +inf when E hits I exactly."""
    if true_value == 0:
        raise DomainError("accuracy is undefined for I = 0")
    if estimate == true_value:
        return math.inf
    return -math.log10(abs((true_value - estimate) / true_value))


def variance_decomposition(p: Sequence[float], stratum_means: Sequence[float],
                           stratum_vars: Sequence[float]) -> Tuple[float, float, float]:
    """(within, between, total) for Var Y = Σ p_j σ_j² + Σ p_j (I_j - I)²."""
    p = _check_probs(p)
    means = np.asarray(stratum_means, dtype=float)
    variances = np.asarray(stratum_vars, dtype=float)
    if means.shape != p.shape or variances.shape != p.shape:
        raise DomainError("one mean and one variance per stratum are required")
    within = float(np.sum(p * variances))
    overall = float(np.sum(p * means))
    between = float(np.sum(p * (means - overall) ** 2))
    return within, between, within + between


def stratified_variance(p: Sequence[float], sigma: Sequence[float],
                        fractions: Sequence[float]) -> float:
    """σ²_str(x) = Σ p_j² σ_j² / x_j, i.e. R·Var of the estimator under the split R_j = x_j R."""
    p = np.asarray(p, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    x = np.asarray(fractions, dtype=float)
    if np.any(x <= 0):
        raise DomainError("split fractions must be positive")
    return float(np.sum(p ** 2 * sigma ** 2 / x))


def optimal_fractions(p: Sequence[float], sigma: Sequence[float]) -> np.ndarray:
    weights = np.asarray(p, dtype=float) * np.asarray(sigma, dtype=float)
    return weights / weights.sum()
