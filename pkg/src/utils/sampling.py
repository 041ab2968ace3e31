"""
Random number streams and primitive samplers

Every random draw in the engine goes through an RngStream: a counter-based
Philox generator keyed by (seed, stream_id). Child streams for a repetition or
a stratum are derived with `spawn`, so a stratum's draws never depend on how
many draws its neighbours consumed or on the order workers ran in.
"""

import hashlib
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import special

from utils.errors import DomainError, IterationCapError
from utils.numerics import Interval

AR_ITERATION_CAP = 1_000_000

_OPEN_UNIT_SCALE = 2.0 ** -52
_TWO_PI = 2.0 * math.pi


def substream_id(*parts: Union[int, str]) -> int:
    """Stable 64-bit identifier for a tuple of keys (repetition, stratum, phase, ...)."""
    digest = hashlib.blake2b(repr(tuple(parts)).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """
    Single-owner random stream.

    Two streams built from the same (seed, stream_id) produce identical
    sequences; distinct stream ids give independent Philox keys.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if int(seed) != seed or seed < 0:
            raise DomainError(f"seed must be a non-negative integer, got {seed!r}")
        self.seed = int(seed)
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id:#018x})"

    def spawn(self, *key: Union[int, str]) -> "RngStream":
        """Child stream keyed by this stream's id and `key`."""
        return RngStream(self.seed, substream_id(self.stream_id, *key))

    def open_uniform(self, size=None) -> np.ndarray:
        """Uniform draws strictly inside (0, 1)."""
        bits = self.generator.integers(0, 2 ** 52, size=size, dtype=np.int64)
        return (bits.astype(np.float64) + 0.5) * _OPEN_UNIT_SCALE

    def standard_normal(self, size=None) -> np.ndarray:
        """N(0, 1) draws by inverse CDF of open uniforms."""
        return special.ndtri(self.open_uniform(size))


@dataclass(frozen=True)
class ArResult:
    value: float
    iterations: int


def standard_normal_vector(d: int, rng: RngStream) -> np.ndarray:
    """d independent N(0, 1) draws."""
    if d < 1:
        raise DomainError(f"d must be positive, got {d}")
    return rng.standard_normal(d)


def standard_normal_matrix(n: int, d: int, rng: RngStream) -> np.ndarray:
    return rng.standard_normal((n, d))


def sphere_uniform_batch(n: int, d: int, rng: RngStream) -> np.ndarray:
    """n points uniform on the unit sphere S_{d-1}, as rows."""
    if d < 2:
        raise DomainError(f"sphere_uniform requires d >= 2, got {d}")
    z = rng.standard_normal((n, d))
    norms = np.linalg.norm(z, axis=1)
    bad = norms == 0.0
    while np.any(bad):
        z[bad] = rng.standard_normal((int(bad.sum()), d))
        norms[bad] = np.linalg.norm(z[bad], axis=1)
        bad = norms == 0.0
    return z / norms[:, None]


def sphere_uniform(d: int, rng: RngStream) -> np.ndarray:
    return sphere_uniform_batch(1, d, rng)[0]


def spherical_to_cartesian_batch(theta: np.ndarray, phis: np.ndarray) -> np.ndarray:
    """
    Map angles to points on S_{d-1}:
    x1 = cos φ1, x2 = sin φ1 cos φ2, ..., x_{d-1} = sin φ1..sin φ_{d-2} cos θ,
    x_d = sin φ1..sin φ_{d-2} sin θ.

    Args:
        theta: shape (n,)
        phis: shape (n, d-2); may have zero columns (d = 2)
    """
    theta = np.asarray(theta, dtype=float)
    phis = np.asarray(phis, dtype=float)
    if phis.ndim == 1:
        phis = phis[:, None]
    n, n_phi = phis.shape
    d = n_phi + 2
    out = np.empty((n, d))
    running = np.ones(n)
    for i in range(n_phi):
        out[:, i] = running * np.cos(phis[:, i])
        running = running * np.sin(phis[:, i])
    out[:, d - 2] = running * np.cos(theta)
    out[:, d - 1] = running * np.sin(theta)
    return out


def spherical_to_cartesian(theta: float, phis=()) -> np.ndarray:
    """Single-point version of `spherical_to_cartesian_batch` with range checks."""
    if not 0.0 <= theta < _TWO_PI:
        raise DomainError(f"theta must lie in [0, 2π), got {theta!r}")
    phis = np.asarray(phis, dtype=float).reshape(-1)
    if np.any(phis < 0.0) or np.any(phis >= math.pi):
        raise DomainError("each φ must lie in [0, π)")
    return spherical_to_cartesian_batch(np.array([theta]), phis[None, :])[0]


def cartesian_to_spherical_batch(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of `spherical_to_cartesian_batch` for rows of any norm: (θ in [0, 2π), φ in [0, π])."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    phis = np.empty((n, d - 2))
    for i in range(d - 2):
        tail = np.linalg.norm(x[:, i + 1:], axis=1)
        phis[:, i] = np.arctan2(tail, x[:, i])
    theta = np.mod(np.arctan2(x[:, d - 1], x[:, d - 2]), _TWO_PI)
    return theta, phis


def _check_window(k: int, window: Interval) -> None:
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    if window.lo < 0.0 or window.hi > math.pi:
        raise DomainError(f"window must lie inside (0, π), got ({window.lo}, {window.hi})")


def ar_sample_sin_power_batch(k: int, window: Interval, n: int, rng: RngStream,
                              cap: int = AR_ITERATION_CAP) -> Tuple[np.ndarray, np.ndarray]:
    """
    n draws from the density ∝ sinᵏ restricted to `window`.

    Proposals are uniform on the window and accepted when U <= sinᵏ(T).

    Returns:
        (values, iterations) arrays of length n
    """
    _check_window(k, window)
    values = np.empty(n)
    iterations = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > cap:
            raise IterationCapError(
                f"acceptance-rejection for sin^{k} on ({window.lo}, {window.hi}) "
                f"exceeded {cap} iterations", rounds - 1
            )
        proposal = window.lo + window.length * rng.open_uniform(pending.size)
        u = rng.open_uniform(pending.size)
        iterations[pending] += 1
        accepted = u <= np.sin(proposal) ** k
        values[pending[accepted]] = proposal[accepted]
        pending = pending[~accepted]
    return values, iterations


def ar_sample_sin_power(k: int, window: Interval, rng: RngStream,
                        cap: int = AR_ITERATION_CAP) -> ArResult:
    values, iterations = ar_sample_sin_power_batch(k, window, 1, rng, cap)
    return ArResult(float(values[0]), int(iterations[0]))
