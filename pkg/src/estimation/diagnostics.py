"""
Checks run against a stratification scheme

- equiprobability: chi-squared goodness of fit of classified Gaussian draws
- round-trip: draws made inside a stratum classify back into it
- ar-iterations: mean acceptance-rejection cost per polar angle vs π/c_k
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np
from scipy import stats

from estimation.strata import AXIS_PHI, StrataScheme, classify_latent_batch, sample_latent_batch
from utils.numerics import Interval, sin_power_norm
from utils.sampling import RngStream, ar_sample_sin_power_batch

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 1e-3
AR_RELATIVE_TOLERANCE = 0.05
MAX_ROUND_TRIP_STRATA = 256


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    details: Dict[str, object] = field(default_factory=dict)


def equiprobability_check(scheme: StrataScheme, n: int, rng: RngStream,
                          alpha: float = DEFAULT_ALPHA) -> CheckResult:
    """Classify n unstratified N(0, I) draws and test the counts against n·p_j."""
    z = rng.standard_normal((n, scheme.dimension))
    counts = np.bincount(classify_latent_batch(scheme, z), minlength=scheme.m)
    if scheme.m == 1:
        return CheckResult("equiprobability", True, {"statistic": 0.0, "p_value": 1.0})
    statistic, p_value = stats.chisquare(counts, f_exp=n * scheme.probs)
    return CheckResult("equiprobability", bool(p_value > alpha),
                       {"statistic": float(statistic), "p_value": float(p_value),
                        "alpha": alpha, "n": n})


def round_trip_check(scheme: StrataScheme, per_stratum: int, rng: RngStream) -> CheckResult:
    """
    Sample inside strata and classify the draws back. Large schemes are checked
    on an evenly spaced subset of strata.
    """
    step = max(1, math.ceil(scheme.m / MAX_ROUND_TRIP_STRATA))
    checked = list(range(0, scheme.m, step))
    misplaced = 0
    first_bad = None
    for j in checked:
        z = sample_latent_batch(scheme, j, per_stratum, rng.spawn(j))
        wrong = int(np.sum(classify_latent_batch(scheme, z) != j))
        if wrong and first_bad is None:
            first_bad = j
        misplaced += wrong
    return CheckResult("round-trip", misplaced == 0,
                       {"strata_checked": len(checked), "per_stratum": per_stratum,
                        "misplaced": misplaced, "first_bad_stratum": first_bad})


def ar_iteration_check(scheme: StrataScheme, n: int, rng: RngStream,
                       tolerance: float = AR_RELATIVE_TOLERANCE) -> CheckResult:
    """Mean AR iterations over full-window draws for each sinᵏ the scheme uses."""
    powers = sorted({axis.power for axis in scheme.axes if axis.kind == AXIS_PHI})
    per_power = {}
    passed = True
    for k in powers:
        _, iterations = ar_sample_sin_power_batch(k, Interval(0.0, math.pi), n,
                                                  rng.spawn("ar", k))
        expected = math.pi / sin_power_norm(k)
        mean = float(iterations.mean())
        ok = abs(mean - expected) <= tolerance * expected
        passed = passed and ok
        per_power[str(k)] = {"mean_iterations": mean, "expected": expected, "passed": ok}
    return CheckResult("ar-iterations", passed, {"powers": per_power})


def validate_scheme(scheme: StrataScheme, n_samples: int, rng: RngStream,
                    alpha: float = DEFAULT_ALPHA) -> Dict[str, object]:
    """All applicable checks; the AR check only runs for schemes with polar angles."""
    checks: List[CheckResult] = [
        equiprobability_check(scheme, n_samples, rng.spawn("equiprobability"), alpha),
        round_trip_check(scheme, max(2, min(100, n_samples // max(scheme.m, 1))),
                         rng.spawn("round-trip")),
    ]
    if any(axis.kind == AXIS_PHI for axis in scheme.axes):
        checks.append(ar_iteration_check(scheme, min(n_samples, 10_000), rng.spawn("ar")))
    for check in checks:
        if not check.passed:
            logger.warning(f"strata check {check.name} failed: {check.details}")
    return {
        "scheme": scheme.to_dict(),
        "passed": all(c.passed for c in checks),
        "checks": [asdict(c) for c in checks],
    }
