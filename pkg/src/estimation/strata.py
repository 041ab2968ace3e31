"""
Stratification schemes of the d-dimensional standard Gaussian

Four builders, all emitting equiprobable strata:
- cartesian: every coordinate split at normal quantiles
- selected: only the listed coordinates split, the rest left free
- radial: only the squared radius split at chi-squared quantiles
- spherical: squared radius, the azimuth θ and every polar angle split

A scheme is a stack of axes. A stratum is one cell per axis, addressed by a
mixed-radix flat index with the first axis most significant. Every cell is
half-open on the left, (lo, hi], matching the classifier.
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from utils.errors import DomainError, StratumCapError
from utils.numerics import (
    Interval,
    QuadratureSpec,
    chi2_quantile,
    find_root_monotone,
    integrate,
    sin_power_norm,
    std_normal_quantile,
)
from utils.sampling import (
    RngStream,
    ar_sample_sin_power_batch,
    cartesian_to_spherical_batch,
    sphere_uniform_batch,
    spherical_to_cartesian_batch,
)

logger = logging.getLogger(__name__)

DEFAULT_STRATUM_CAP = 1_000_000

AXIS_COORD = "coord"
AXIS_RADIUS = "radius"
AXIS_THETA = "theta"
AXIS_PHI = "phi"


@dataclass(frozen=True)
class Axis:
    """
    One stratified direction.

    edges are the full cell edges on the axis' native scale: z for coord axes,
    squared radius for the radius, radians for angles. levels are the matching
    cumulative probabilities for coord and radius axes.
    """

    kind: str
    edges: Tuple[float, ...]
    levels: Tuple[float, ...] = ()
    coordinate: int = -1
    power: int = 0

    @property
    def count(self) -> int:
        return len(self.edges) - 1

    @property
    def interior(self) -> Tuple[float, ...]:
        return self.edges[1:-1]

    def cell(self, index: int) -> Interval:
        return Interval(self.edges[index], self.edges[index + 1])


@dataclass(frozen=True)
class StratumId:
    multi_index: Tuple[int, ...]
    flat_index: int


@dataclass(frozen=True)
class StrataScheme:
    dimension: int
    kind: str
    axes: Tuple[Axis, ...]
    stratum_probs: Tuple[float, ...] = field(repr=False)
    params: Dict[str, object] = field(default_factory=dict, compare=False)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(axis.count for axis in self.axes) or (1,)

    @property
    def m(self) -> int:
        return int(np.prod(self.shape))

    @property
    def probs(self) -> np.ndarray:
        return np.asarray(self.stratum_probs, dtype=float)

    def stratum(self, flat_index: int) -> StratumId:
        if not 0 <= flat_index < self.m:
            raise DomainError(f"stratum {flat_index} outside [0, {self.m})")
        multi = np.unravel_index(flat_index, self.shape)
        return StratumId(tuple(int(i) for i in multi), int(flat_index))

    def stratum_from_multi(self, multi_index: Sequence[int]) -> StratumId:
        flat = int(np.ravel_multi_index(tuple(multi_index), self.shape))
        return StratumId(tuple(int(i) for i in multi_index), flat)

    def to_dict(self) -> dict:
        """JSON-ready description: kind, parameters, boundaries per axis."""
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "m": self.m,
            "params": dict(self.params),
            "axes": [
                {
                    "kind": axis.kind,
                    "coordinate": axis.coordinate if axis.kind == AXIS_COORD else None,
                    "power": axis.power if axis.kind == AXIS_PHI else None,
                    "edges": [_json_float(e) for e in axis.edges],
                }
                for axis in self.axes
            ],
        }


def _json_float(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _parse_json_float(x) -> float:
    return float(x)


def _check_cap(m: int, cap: Optional[int]) -> None:
    cap = DEFAULT_STRATUM_CAP if cap is None else cap
    if m > cap:
        raise StratumCapError(f"scheme would have {m} strata, above the cap of {cap}")


def _equal_levels(count: int) -> Tuple[float, ...]:
    return tuple(j / count for j in range(count + 1))


def _coord_axis(coordinate: int, count: int) -> Axis:
    levels = _equal_levels(count)
    edges = (-math.inf,) + tuple(std_normal_quantile(p) for p in levels[1:-1]) + (math.inf,)
    return Axis(AXIS_COORD, edges, levels, coordinate=coordinate)


def _radius_axis(d: int, m_r: int) -> Axis:
    levels = _equal_levels(m_r)
    edges = (0.0,) + tuple(chi2_quantile(p, d) for p in levels[1:-1]) + (math.inf,)
    return Axis(AXIS_RADIUS, edges, levels)


def _theta_axis(m0: int) -> Axis:
    edges = tuple(2.0 * math.pi * j / m0 for j in range(m0 + 1))
    return Axis(AXIS_THETA, edges)


@functools.lru_cache(maxsize=256)
def sin_power_boundaries(k: int, m0: int) -> Tuple[float, ...]:
    """Edges 0 = a_0 < ... < a_m0 = π with ∫ over each cell of sinᵏ / c_k equal to 1/m0."""
    if m0 == 1:
        return (0.0, math.pi)
    c_k = sin_power_norm(k)
    spec = QuadratureSpec()

    def mass(a: float) -> float:
        return integrate(lambda x: math.sin(x) ** k, 0.0, a, spec) / c_k

    edges = [0.0]
    for j in range(1, m0):
        target = j / m0
        edges.append(find_root_monotone(lambda a: mass(a) - target, edges[-1], math.pi, 1e-12))
    edges.append(math.pi)
    return tuple(edges)


def _phi_axis(power: int, m0: int) -> Axis:
    return Axis(AXIS_PHI, sin_power_boundaries(power, m0), power=power)


def _finish(d: int, kind: str, axes: List[Axis], params: dict) -> StrataScheme:
    m = int(np.prod([a.count for a in axes])) if axes else 1
    return StrataScheme(d, kind, tuple(axes), tuple([1.0 / m] * m), params)


def build_cartesian(d: int, m0, stratum_cap: Optional[int] = None) -> StrataScheme:
    """
    Split every coordinate at Φ⁻¹(j/m0); m = Π m0ᵢ strata.

    Args:
        d: Dimension
        m0: Strata per dimension, one integer or one per dimension
        stratum_cap: Largest admissible m
    """
    if d < 1:
        raise DomainError(f"d must be positive, got {d}")
    per_dim = [int(m0)] * d if np.isscalar(m0) else [int(c) for c in m0]
    if len(per_dim) != d or min(per_dim) < 1:
        raise DomainError(f"m0 must give a positive count for each of the {d} dimensions")
    _check_cap(int(np.prod(per_dim, dtype=object)), stratum_cap)
    axes = [_coord_axis(i, c) for i, c in enumerate(per_dim)]
    return _finish(d, "cartesian", axes, {"m0": per_dim})


def build_spherical(d: int, m_r: int, m0: int, stratum_cap: Optional[int] = None) -> StrataScheme:
    """
    Split the squared radius into m_r chi-squared shells, θ into m0 equal arcs
    and each polar angle into m0 equal-mass cells; m = m_r·m0^(d-1).
    """
    if d < 2:
        raise DomainError(f"spherical stratification requires d >= 2, got {d}")
    if m_r < 1 or m0 < 1:
        raise DomainError("m_r and m0 must be positive")
    _check_cap(m_r * m0 ** (d - 1), stratum_cap)
    axes = [_radius_axis(d, m_r), _theta_axis(m0)]
    # φ_i carries sin^(d-1-i) in the uniform-on-sphere density
    axes.extend(_phi_axis(d - 1 - i, m0) for i in range(1, d - 1))
    return _finish(d, "spherical", axes, {"m_r": m_r, "m0": m0})


def build_radial(d: int, m_r: int, stratum_cap: Optional[int] = None) -> StrataScheme:
    """Only the squared radius is split; the direction stays uniform."""
    if d < 1 or m_r < 1:
        raise DomainError("d and m_r must be positive")
    _check_cap(m_r, stratum_cap)
    return _finish(d, "radial", [_radius_axis(d, m_r)], {"m_r": m_r})


def build_selected_dims(d: int, dims: Sequence[int], m0: int,
                        stratum_cap: Optional[int] = None) -> StrataScheme:
    """Split only the listed coordinates into m0 cells each; m = m0^η."""
    dims = [int(i) for i in dims]
    if not dims:
        raise DomainError("at least one coordinate must be selected")
    if len(set(dims)) != len(dims):
        raise DomainError(f"selected coordinates must be distinct, got {dims}")
    if any(i < 0 or i >= d for i in dims):
        raise DomainError(f"selected coordinates must lie in [0, {d}), got {dims}")
    if m0 < 1:
        raise DomainError("m0 must be positive")
    _check_cap(m0 ** len(dims), stratum_cap)
    axes = [_coord_axis(i, m0) for i in dims]
    return _finish(d, "selected", axes, {"dims": dims, "m0": m0})


def scheme_from_dict(doc: dict, stratum_cap: Optional[int] = None) -> StrataScheme:
    """
    Build a scheme from its JSON description.

    Accepts the builder parameters ({"kind": "cartesian", "d": 2, "m0": 4}) and,
    optionally, "edges" overriding the computed edges axis by axis.
    """
    kind = doc.get("kind")
    d = int(doc.get("d", doc.get("dimension", 0)))
    if kind == "cartesian":
        scheme = build_cartesian(d, doc["m0"], stratum_cap)
    elif kind == "spherical":
        scheme = build_spherical(d, int(doc["m_r"]), int(doc["m0"]), stratum_cap)
    elif kind == "radial":
        scheme = build_radial(d, int(doc["m_r"]), stratum_cap)
    elif kind == "selected":
        scheme = build_selected_dims(d, doc["dims"], int(doc["m0"]), stratum_cap)
    else:
        raise DomainError(f"unknown scheme kind: {kind!r}")
    if "edges" in doc:
        overrides = doc["edges"]
        if len(overrides) != len(scheme.axes):
            raise DomainError("edges override must list one edge vector per axis")
        axes = []
        for axis, edges in zip(scheme.axes, overrides):
            edges = tuple(_parse_json_float(e) for e in edges)
            if len(edges) != len(axis.edges) or any(b <= a for a, b in zip(edges, edges[1:])):
                raise DomainError("edges override must keep the cell count and be increasing")
            axes.append(Axis(axis.kind, edges, axis.levels, axis.coordinate, axis.power))
        scheme = StrataScheme(scheme.dimension, scheme.kind, tuple(axes),
                              scheme.stratum_probs, scheme.params)
    return scheme


def _window(axis: Axis, index: int) -> Tuple[float, float]:
    return axis.levels[index], axis.levels[index + 1]


def _uniform_in(lo: float, hi: float, u: np.ndarray) -> np.ndarray:
    # keep draws inside (lo, hi] after rounding
    v = lo + (hi - lo) * u
    return np.clip(v, np.nextafter(lo, hi), hi)


def _sample_coord_axes(scheme: StrataScheme, multi: Sequence[int], n: int,
                       rng: RngStream) -> np.ndarray:
    d = scheme.dimension
    lo = np.zeros(d)
    hi = np.ones(d)
    for axis, index in zip(scheme.axes, multi):
        lo[axis.coordinate], hi[axis.coordinate] = _window(axis, index)
    u = rng.open_uniform((n, d))
    v = lo + (hi - lo) * u
    v = np.clip(v, np.nextafter(lo, hi), np.minimum(hi, np.nextafter(1.0, 0.0)))
    return special.ndtri(v)


def _sample_radius(axis: Axis, index: int, d: int, n: int, rng: RngStream) -> np.ndarray:
    lo, hi = _window(axis, index)
    p = _uniform_in(lo, hi, rng.open_uniform(n))
    p = np.minimum(p, np.nextafter(1.0, 0.0))
    upper = p > 0.5
    squared = np.empty(n)
    squared[~upper] = 2.0 * special.gammaincinv(0.5 * d, p[~upper])
    squared[upper] = 2.0 * special.gammainccinv(0.5 * d, 1.0 - p[upper])
    return np.sqrt(squared)


def sample_latent_batch(scheme: StrataScheme, stratum: int, n: int,
                        rng: RngStream) -> np.ndarray:
    """
    n draws of Z ~ N(0, I_d) conditioned on lying in the given stratum.

    Returns:
        Array of shape (n, d)
    """
    multi = scheme.stratum(stratum).multi_index
    d = scheme.dimension
    if scheme.kind in ("cartesian", "selected"):
        return _sample_coord_axes(scheme, multi, n, rng)
    radius = _sample_radius(scheme.axes[0], multi[0], d, n, rng.spawn("radius"))
    if scheme.kind == "radial":
        if d == 1:
            sign = np.where(rng.spawn("direction").open_uniform(n) < 0.5, -1.0, 1.0)
            return (sign * radius)[:, None]
        return radius[:, None] * sphere_uniform_batch(n, d, rng.spawn("direction"))
    theta_lo, theta_hi = scheme.axes[1].edges[multi[1]], scheme.axes[1].edges[multi[1] + 1]
    theta = _uniform_in(theta_lo, theta_hi, rng.spawn("theta").open_uniform(n))
    theta = np.minimum(theta, np.nextafter(2.0 * math.pi, 0.0))
    phis = np.empty((n, d - 2))
    for i, (axis, index) in enumerate(zip(scheme.axes[2:], multi[2:])):
        phis[:, i], _ = ar_sample_sin_power_batch(axis.power, axis.cell(index), n,
                                                  rng.spawn("phi", i))
    return radius[:, None] * spherical_to_cartesian_batch(theta, phis)


def sample_latent_in_stratum(scheme: StrataScheme, j: StratumId, rng: RngStream) -> np.ndarray:
    return sample_latent_batch(scheme, j.flat_index, 1, rng)[0]


def classify_latent_batch(scheme: StrataScheme, z: np.ndarray) -> np.ndarray:
    """Flat stratum index of every row of z, each cell taken as (lo, hi]."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != scheme.dimension:
        raise DomainError(f"expected {scheme.dimension} columns, got {z.shape[1]}")
    indices = []
    if scheme.kind in ("cartesian", "selected"):
        for axis in scheme.axes:
            indices.append(np.searchsorted(axis.interior, z[:, axis.coordinate], side="left"))
    else:
        squared = np.einsum("ij,ij->i", z, z)
        indices.append(np.searchsorted(scheme.axes[0].interior, squared, side="left"))
        if scheme.kind == "spherical":
            theta, phis = cartesian_to_spherical_batch(z)
            indices.append(np.searchsorted(scheme.axes[1].interior, theta, side="left"))
            for i, axis in enumerate(scheme.axes[2:]):
                indices.append(np.searchsorted(axis.interior, phis[:, i], side="left"))
    if not indices:
        return np.zeros(z.shape[0], dtype=np.int64)
    return np.ravel_multi_index(tuple(indices), scheme.shape).astype(np.int64)


def classify_latent(scheme: StrataScheme, z: np.ndarray) -> StratumId:
    return scheme.stratum(int(classify_latent_batch(scheme, z)[0]))
