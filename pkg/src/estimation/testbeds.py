"""
Testbed distributions, target functions and data ingestion

Each testbed carries an exact sampler, an exact transport map from the standard
Gaussian (used for "exact model" estimates) and closed-form or quadrature
oracles for the target functions where one exists. Target functions are
vectorised: rows in, one value per row out.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import integrate, linalg, special, stats

from estimation.flow import ExactMap
from utils.errors import CsvParseError, DimensionMismatchError, DomainError
from utils.sampling import RngStream

logger = logging.getLogger(__name__)


# =====================================================
# TARGET FUNCTIONS
# =====================================================

@dataclass(frozen=True)
class TargetFunction:
    name: str
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    arity: Optional[int] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return evaluate_target(self, x)


def _indicator_above(x: np.ndarray, t: float) -> np.ndarray:
    return np.all(x > t, axis=1).astype(float)


def _indicator_below(x: np.ndarray, t: float) -> np.ndarray:
    return np.all(x <= t, axis=1).astype(float)


def _guarded(mask: np.ndarray, values: Callable[[np.ndarray], np.ndarray],
             arg: np.ndarray) -> np.ndarray:
    # values() only ever sees entries where mask holds
    out = np.zeros(arg.shape[0])
    out[mask] = values(arg[mask])
    return out


def _h1(x):
    on = np.all(x > 1.0, axis=1)
    return _guarded(on, lambda v: 1.0 / np.log(np.abs(v)), np.prod(x, axis=1))


def _h2(x):
    return np.sin(np.prod(x, axis=1)) * _indicator_above(x, 1.0)


def _h3(x):
    on = np.all(x > 1.0, axis=1)
    return _guarded(on, lambda v: 1.0 / v, np.prod(x, axis=1))


def _rho1(x):
    return np.sin(np.exp(x[:, 0]))


def _rho2(x):
    return np.log1p(np.abs(x[:, 0]))


def _rho3(x):
    a = np.abs(x[:, 0])
    return _guarded(a > 0, lambda v: 1.0 / np.log1p(v), a)


def _g1(x):
    return (np.maximum(x[:, 0], x[:, 1]) > 0.01).astype(float)


def _g2(x):
    return x[:, 1] / (1.0 + x[:, 0] ** 2)


def _g3(x):
    return np.abs(x[:, 0] * x[:, 1])


def _g4(x):
    return np.abs(np.cos(np.exp(x[:, 0] * x[:, 1])))


def _g5(x):
    s = np.abs(x[:, 0] + x[:, 1])
    return _guarded(s > 0, np.log, s)


def _g6(x):
    s = np.abs(x[:, 0] + x[:, 1])
    logs = _guarded(s > 0, np.log, s)
    return _guarded((s > 0) & (logs != 0), lambda v: 1.0 / np.abs(v), logs)


_FIXED_TARGETS = {
    "h1": (_h1, None), "h2": (_h2, None), "h3": (_h3, None),
    "rho1": (_rho1, 1), "rho2": (_rho2, 1), "rho3": (_rho3, 1),
    "g1": (_g1, 2), "g2": (_g2, 2), "g3": (_g3, 2),
    "g4": (_g4, 2), "g5": (_g5, 2), "g6": (_g6, 2),
}

_THRESHOLD = re.compile(r"^j([+-])(-?\d+(?:\.\d+)?)$")


def parse_target(name: str) -> TargetFunction:
    """
    Resolve a target by name: j+<t>, j-<t> (all coordinates above t / at most t),
    h1..h3, rho1..rho3, g1..g6.
    """
    match = _THRESHOLD.match(name)
    if match:
        t = float(match.group(2))
        if match.group(1) == "+":
            return TargetFunction(name, lambda x: _indicator_above(x, t))
        return TargetFunction(name, lambda x: _indicator_below(x, t))
    if name not in _FIXED_TARGETS:
        raise DomainError(f"unknown target function: {name!r}")
    evaluator, arity = _FIXED_TARGETS[name]
    return TargetFunction(name, evaluator, arity)


def threshold_of(name: str):
    """(direction, t) for threshold targets, else None."""
    match = _THRESHOLD.match(name)
    return (match.group(1), float(match.group(2))) if match else None


def evaluate_target(fn: TargetFunction, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if fn.arity is not None and arr.shape[1] != fn.arity:
        raise DimensionMismatchError(f"{fn.name} takes {fn.arity} coordinates, got {arr.shape[1]}")
    if fn.name.startswith("h") and arr.shape[1] < 2:
        raise DimensionMismatchError(f"{fn.name} needs at least 2 coordinates")
    values = fn.evaluator(arr)
    return float(values[0]) if single else values


# =====================================================
# TESTBEDS
# =====================================================

@dataclass(frozen=True)
class TargetSpec:
    name: str
    dimension: int
    sampler: Callable[[int, RngStream], np.ndarray] = field(repr=False)
    exact_map: Callable[[], ExactMap] = field(repr=False)
    oracle: Callable[[str], Optional[float]] = field(repr=False, default=lambda name: None)
    training_size: int = 1000
    functions: tuple = ()

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        return self.sampler(n, rng)

    def true_value(self, function_name: str) -> Optional[float]:
        return self.oracle(function_name)


def _bisect_increasing(cdf: Callable[[np.ndarray], np.ndarray], target: np.ndarray,
                       lo: float, hi: float, steps: int = 200) -> np.ndarray:
    lo = np.full(target.shape, lo)
    hi = np.full(target.shape, hi)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


# --- Example 1: density x1·exp(-x1(x2 + 1)) on the positive quadrant ---

def example1_sampler(n: int, rng: RngStream) -> np.ndarray:
    """X1 ~ Exp(1), then X2 | X1 ~ Exp(rate X1)."""
    x1 = -np.log(rng.open_uniform(n))
    x2 = -np.log(rng.open_uniform(n)) / x1
    return np.column_stack([x1, x2])


def _example1_forward(z):
    x1 = -special.log_ndtr(-z[:, 0])
    return np.column_stack([x1, -special.log_ndtr(-z[:, 1]) / x1])


def _example1_inverse(x):
    z1 = -special.ndtri(np.exp(-x[:, 0]))
    z2 = -special.ndtri(np.exp(-x[:, 0] * x[:, 1]))
    return np.column_stack([z1, z2])


def example1_oracle(name: str) -> Optional[float]:
    threshold = threshold_of(name)
    if threshold is None:
        return None
    direction, t = threshold
    if direction == "+":
        t = max(t, 0.0)
        return math.exp(-t * (t + 1.0)) / (t + 1.0)
    if t <= 0:
        return 0.0
    return -math.expm1(-t) + math.expm1(-t * (t + 1.0)) / (t + 1.0)


# --- Example A1: ½·U(0.2, 0.4) + ¼·N(0.6, 0.0046) + ¼·Beta(7, 1.1) ---

A1_WEIGHTS = (0.5, 0.25, 0.25)
A1_UNIFORM = (0.2, 0.4)
A1_NORMAL_MEAN = 0.6
A1_NORMAL_SD = math.sqrt(0.0046)
A1_BETA = (7.0, 1.1)


def exampleA1_cdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo, hi = A1_UNIFORM
    uniform = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    normal = special.ndtr((x - A1_NORMAL_MEAN) / A1_NORMAL_SD)
    beta = special.betainc(A1_BETA[0], A1_BETA[1], np.clip(x, 0.0, 1.0))
    return A1_WEIGHTS[0] * uniform + A1_WEIGHTS[1] * normal + A1_WEIGHTS[2] * beta


def exampleA1_sf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo, hi = A1_UNIFORM
    uniform = np.clip((hi - x) / (hi - lo), 0.0, 1.0)
    normal = special.ndtr(-(x - A1_NORMAL_MEAN) / A1_NORMAL_SD)
    beta = special.betaincc(A1_BETA[0], A1_BETA[1], np.clip(x, 0.0, 1.0))
    return A1_WEIGHTS[0] * uniform + A1_WEIGHTS[1] * normal + A1_WEIGHTS[2] * beta


def exampleA1_sampler(n: int, rng: RngStream) -> np.ndarray:
    """Categorical component, then a uniform, normal (variance 0.0046) or Beta(7, 1.1) draw."""
    component = np.searchsorted(np.cumsum(A1_WEIGHTS)[:-1], rng.open_uniform(n), side="right")
    u = rng.open_uniform(n)
    lo, hi = A1_UNIFORM
    x = np.where(component == 0, lo + (hi - lo) * u, 0.0)
    x = np.where(component == 1, A1_NORMAL_MEAN + A1_NORMAL_SD * special.ndtri(u), x)
    x = np.where(component == 2, special.betaincinv(A1_BETA[0], A1_BETA[1], u), x)
    return x[:, None]


def _exampleA1_forward(z):
    # solve on the side of the median where the probability is representable
    lower = z[:, 0] <= 0
    out = np.empty(z.shape[0])
    out[lower] = _bisect_increasing(exampleA1_cdf, special.ndtr(z[lower, 0]), -1.0, 2.0)
    out[~lower] = _bisect_increasing(lambda v: -exampleA1_sf(v), -special.ndtr(-z[~lower, 0]),
                                     -1.0, 2.0)
    return out[:, None]


def _exampleA1_inverse(x):
    cdf = exampleA1_cdf(x[:, 0])
    return np.where(cdf <= 0.5, special.ndtri(cdf), -special.ndtri(exampleA1_sf(x[:, 0])))[:, None]


def _exampleA1_expectation(rho: Callable[[float], float]) -> float:
    lo, hi = A1_UNIFORM
    uniform, _ = integrate.quad(lambda v: rho(v) / (hi - lo), lo, hi, epsabs=1e-12)
    normal, _ = integrate.quad(
        lambda v: rho(v) * stats.norm.pdf(v, A1_NORMAL_MEAN, A1_NORMAL_SD),
        A1_NORMAL_MEAN - 12 * A1_NORMAL_SD, A1_NORMAL_MEAN + 12 * A1_NORMAL_SD, epsabs=1e-12,
    )
    beta, _ = integrate.quad(lambda v: rho(v) * stats.beta.pdf(v, *A1_BETA), 0.0, 1.0,
                             epsabs=1e-12, limit=200)
    return A1_WEIGHTS[0] * uniform + A1_WEIGHTS[1] * normal + A1_WEIGHTS[2] * beta


def exampleA1_oracle(name: str) -> Optional[float]:
    threshold = threshold_of(name)
    if threshold is not None:
        direction, t = threshold
        return float(exampleA1_cdf(t) if direction == "-" else exampleA1_sf(t))
    if name == "rho1":
        return _exampleA1_expectation(lambda v: math.sin(math.exp(v)))
    if name == "rho2":
        return _exampleA1_expectation(lambda v: math.log1p(abs(v)))
    # rho3 has a non-integrable singularity at 0 under the normal component
    return None


# --- Example 2: multivariate Student-t, ν = 5, unit variances, 0.2 correlations ---

STUDENT_T_DOF = 5.0
STUDENT_T_CORRELATION = 0.2


def student_t_scale(d: int) -> np.ndarray:
    return np.full((d, d), STUDENT_T_CORRELATION) + (1.0 - STUDENT_T_CORRELATION) * np.eye(d)


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as e:
        raise DomainError(f"scale matrix is not positive definite: {e}") from e


def student_t_sampler(d: int, nu: float, mu, sigma, n: int, rng: RngStream) -> np.ndarray:
    """X = μ + L·Z / √(W/ν) with Z ~ N(0, I_d), W ~ χ²_ν and LLᵀ = Σ."""
    L = _cholesky(np.atleast_2d(np.asarray(sigma, dtype=float)))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (d,))
    z = rng.standard_normal((n, d))
    w = 2.0 * special.gammaincinv(0.5 * nu, rng.spawn("chi2").open_uniform(n))
    return mu + (z @ L.T) / np.sqrt(w / nu)[:, None]


def _student_t_maps(d: int, nu: float, mu, sigma):
    L = _cholesky(sigma)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (d,))

    def forward(z):
        r2 = np.einsum("ij,ij->i", z, z)
        upper = special.gammainc(0.5 * d, 0.5 * r2) > 0.5
        f = np.where(upper,
                     stats.f.isf(special.gammaincc(0.5 * d, 0.5 * r2), d, nu),
                     stats.f.ppf(special.gammainc(0.5 * d, 0.5 * r2), d, nu))
        scale = np.sqrt(d * f / np.where(r2 > 0, r2, 1.0))
        return mu + (z * scale[:, None]) @ L.T

    def inverse(x):
        w = linalg.solve_triangular(L, (x - mu).T, lower=True).T
        s2 = np.einsum("ij,ij->i", w, w)
        upper = stats.f.cdf(s2 / d, d, nu) > 0.5
        r2 = np.where(upper,
                      stats.chi2.isf(stats.f.sf(s2 / d, d, nu), d),
                      stats.chi2.ppf(stats.f.cdf(s2 / d, d, nu), d))
        scale = np.sqrt(r2 / np.where(s2 > 0, s2, 1.0))
        return w * scale[:, None]

    return forward, inverse


# --- Example 5: thirty coordinates of mixed marginals with two correlated 5-blocks ---

SYNTH30_NORMAL = {5: 1.0, 6: 1.2, 7: 1.4, 8: 1.6, 20: 1.0, 21: 1.2, 22: 1.4, 23: 1.6}
SYNTH30_EXPONENTIAL = {9: 0.4, 10: 0.5, 11: 0.6, 12: 0.7, 24: 0.4, 25: 0.5, 26: 0.6, 27: 0.7}
SYNTH30_GAMMA = {13: 1.6, 14: 1.8, 28: 1.6, 29: 1.8}
SYNTH30_GAMMA_SHAPE = 2.0
SYNTH30_BLOCKS = (
    (0, np.array([-1.0, 1.0, 2.0, 1.0, 1.0]), np.array([
        [55.0, 8.0, 17.0, 19.0, 23.0],
        [8.0, 8.0, 8.0, 9.0, 11.0],
        [17.0, 8.0, 13.0, 15.0, 20.0],
        [19.0, 9.0, 15.0, 23.0, 24.0],
        [23.0, 11.0, 20.0, 24.0, 32.0],
    ])),
    (15, np.array([1.0, -0.5, 0.0, 1.2, -0.8]), np.array([
        [1.0, 0.8, 0.6, 0.4, -0.3],
        [0.8, 2.0, 1.0, 0.7, -0.5],
        [0.6, 1.0, 1.5, 0.9, -0.4],
        [0.4, 0.7, 0.9, 1.2, -0.2],
        [-0.3, -0.5, -0.4, -0.2, 1.0],
    ])),
)


def _synth30_forward(z):
    x = np.empty_like(z)
    for i, sd in SYNTH30_NORMAL.items():
        x[:, i] = sd * z[:, i]
    for i, scale in SYNTH30_EXPONENTIAL.items():
        x[:, i] = -scale * special.log_ndtr(-z[:, i])
    for i, beta in SYNTH30_GAMMA.items():
        lower = z[:, i] <= 0
        x[:, i] = beta * np.where(
            lower,
            special.gammaincinv(SYNTH30_GAMMA_SHAPE, special.ndtr(np.minimum(z[:, i], 0.0))),
            special.gammainccinv(SYNTH30_GAMMA_SHAPE, special.ndtr(-np.maximum(z[:, i], 0.0))),
        )
    for start, mean, cov in SYNTH30_BLOCKS:
        L = _cholesky(cov)
        x[:, start:start + 5] = mean + z[:, start:start + 5] @ L.T
    return x


def _synth30_inverse(x):
    z = np.empty_like(x)
    for i, sd in SYNTH30_NORMAL.items():
        z[:, i] = x[:, i] / sd
    for i, scale in SYNTH30_EXPONENTIAL.items():
        z[:, i] = -special.ndtri(np.exp(-x[:, i] / scale))
    for i, beta in SYNTH30_GAMMA.items():
        p = special.gammainc(SYNTH30_GAMMA_SHAPE, x[:, i] / beta)
        q = special.gammaincc(SYNTH30_GAMMA_SHAPE, x[:, i] / beta)
        z[:, i] = np.where(p <= 0.5, special.ndtri(p), -special.ndtri(q))
    for start, mean, cov in SYNTH30_BLOCKS:
        L = _cholesky(cov)
        z[:, start:start + 5] = linalg.solve_triangular(
            L, (x[:, start:start + 5] - mean).T, lower=True).T
    return z


def synth30_sampler(n: int, rng: RngStream) -> np.ndarray:
    x = np.empty((n, 30))
    for i, sd in SYNTH30_NORMAL.items():
        x[:, i] = sd * rng.spawn("coord", i).standard_normal(n)
    for i, scale in SYNTH30_EXPONENTIAL.items():
        x[:, i] = -scale * np.log(rng.spawn("coord", i).open_uniform(n))
    for i, beta in SYNTH30_GAMMA.items():
        x[:, i] = beta * special.gammaincinv(SYNTH30_GAMMA_SHAPE,
                                             rng.spawn("coord", i).open_uniform(n))
    for start, mean, cov in SYNTH30_BLOCKS:
        z = rng.spawn("block", start).standard_normal((n, 5))
        x[:, start:start + 5] = mean + z @ _cholesky(cov).T
    return x


# --- catalogue ---

def _student_t_spec(d: int) -> TargetSpec:
    sigma = student_t_scale(d)
    forward, inverse = _student_t_maps(d, STUDENT_T_DOF, 0.0, sigma)
    return TargetSpec(
        name=f"student-t-d{d}",
        dimension=d,
        sampler=lambda n, rng: student_t_sampler(d, STUDENT_T_DOF, 0.0, sigma, n, rng),
        exact_map=lambda: ExactMap(d, f"student-t-d{d}", forward, inverse),
        training_size=5000,
        functions=("j+0.5", "j+1.0", "h1", "h2", "h3"),
    )


def _build_catalogue() -> Dict[str, TargetSpec]:
    specs = [
        TargetSpec(
            name="example1",
            dimension=2,
            sampler=example1_sampler,
            exact_map=lambda: ExactMap(2, "example1", _example1_forward, _example1_inverse),
            oracle=example1_oracle,
            training_size=1000,
            functions=("j+0.5", "j+1.2", "j+2.0", "h1", "h2", "h3"),
        ),
        TargetSpec(
            name="exampleA1",
            dimension=1,
            sampler=exampleA1_sampler,
            exact_map=lambda: ExactMap(1, "exampleA1", _exampleA1_forward, _exampleA1_inverse),
            oracle=exampleA1_oracle,
            training_size=1000,
            functions=("j-0.95", "j-0.99", "rho1", "rho2", "rho3"),
        ),
        _student_t_spec(3),
        _student_t_spec(4),
        TargetSpec(
            name="synth30",
            dimension=30,
            sampler=synth30_sampler,
            exact_map=lambda: ExactMap(30, "synth30", _synth30_forward, _synth30_inverse),
            training_size=5000,
            functions=("j+-1.0", "j+-0.5"),
        ),
    ]
    return {spec.name: spec for spec in specs}


CATALOGUE = _build_catalogue()


def get_testbed(name: str) -> TargetSpec:
    if name not in CATALOGUE:
        raise DomainError(f"unknown testbed {name!r}; choose one of {sorted(CATALOGUE)}")
    return CATALOGUE[name]


# =====================================================
# CSV INGESTION
# =====================================================

def load_csv_matrix(path, n_columns: Optional[int] = None,
                    apply_first_difference: bool = False) -> np.ndarray:
    """
    Read numeric columns from a CSV with a header row.

    Columns count as numeric when their first data cell parses as a number;
    the first n_columns of those are kept (all of them when n_columns is None).
    Line numbers in errors are 1-based file lines, the header being line 1.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise CsvParseError(str(e)) from e
    except pd.errors.EmptyDataError as e:
        raise CsvParseError("file is empty") from e

    if frame.empty:
        columns = list(frame.columns) if n_columns is None else list(frame.columns)[:n_columns]
        if n_columns is not None and len(columns) < n_columns:
            raise CsvParseError(f"expected {n_columns} columns, found {len(columns)}")
        values = np.empty((0, len(columns)))
    else:
        first = pd.to_numeric(frame.iloc[0], errors="coerce")
        numeric = [c for c in frame.columns if not pd.isna(first[c])]
        if n_columns is not None:
            if len(numeric) < n_columns:
                raise CsvParseError(f"expected {n_columns} numeric columns, found {len(numeric)}",
                                    line=2)
            numeric = numeric[:n_columns]
        parsed = frame[numeric].apply(pd.to_numeric, errors="coerce")
        bad_rows = np.flatnonzero(parsed.isna().to_numpy().any(axis=1))
        if bad_rows.size:
            row = int(bad_rows[0])
            column = next(c for c in numeric if pd.isna(parsed.iloc[row][c]))
            raise CsvParseError(f"non-numeric value {frame.iloc[row][column]!r} in column "
                                f"{column!r}", line=row + 2)
        values = parsed.to_numpy(dtype=float)

    if apply_first_difference:
        if values.shape[0] < 3:
            raise DomainError(f"first differencing needs at least 3 rows, got {values.shape[0]}")
        values = np.diff(values, axis=0)
    logger.debug(f"loaded {values.shape[0]} rows x {values.shape[1]} columns from {path}")
    return values


def load_csv_2d(path, apply_first_difference: bool = False) -> np.ndarray:
    """The first two numeric columns of a CSV, optionally first-differenced."""
    return load_csv_matrix(path, 2, apply_first_difference)


def available_functions(spec: TargetSpec) -> List[str]:
    return list(spec.functions)
