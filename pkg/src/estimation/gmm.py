"""
Gaussian mixture baseline fitted by EM

A fitted mixture is sampling-only from the estimators' point of view: it has a
density and a sampler but no latent map, so it only ever feeds crude Monte
Carlo estimates.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg, special
from sklearn.cluster import kmeans_plusplus

from estimation.flow import (
    MODEL_FORMAT,
    MODEL_VERSION,
    TransportMap,
    _decode_floats,
    _encode_floats,
    load_map,
)
from utils.errors import DomainError, GmmCollapseError, ModelFormatError, NoInverseError
from utils.sampling import RngStream

logger = logging.getLogger(__name__)

COVARIANCE_JITTER = 1e-6
MAX_REINITIALISATIONS = 3
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    scale_trils: np.ndarray

    def __post_init__(self):
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.scale_trils.shape != (k, d, d):
            raise DomainError("weights, means and covariance factors disagree on k or d")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise DomainError("mixture weights must sum to 1")
        if not np.all(np.diagonal(self.scale_trils, axis1=1, axis2=2) > 0):
            raise DomainError("covariance factors need a strictly positive diagonal")

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    @property
    def covariances(self) -> np.ndarray:
        return np.einsum("kij,klj->kil", self.scale_trils, self.scale_trils)


def _component_log_densities(model_means, scale_trils, x) -> np.ndarray:
    n, d = x.shape
    out = np.empty((n, model_means.shape[0]))
    for c, (mu, L) in enumerate(zip(model_means, scale_trils)):
        w = linalg.solve_triangular(L, (x - mu).T, lower=True)
        out[:, c] = (-0.5 * np.sum(w * w, axis=0) - np.sum(np.log(np.diag(L)))
                     - 0.5 * d * _LOG_2PI)
    return out


def gmm_log_prob(model: GmmModel, x) -> np.ndarray:
    """Log-density of each row of x, by log-sum-exp over components."""
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    if arr.shape[1] != model.dimension:
        raise DomainError(f"expected {model.dimension} columns, got {arr.shape[1]}")
    lp = special.logsumexp(_component_log_densities(model.means, model.scale_trils, arr)
                           + np.log(model.weights), axis=1)
    return float(lp[0]) if np.ndim(x) == 1 else lp


def gmm_sample(model: GmmModel, count: int, rng: RngStream) -> np.ndarray:
    """Categorical component draw, then a Gaussian draw from that component."""
    cumulative = np.cumsum(model.weights)
    cumulative[-1] = 1.0
    components = np.searchsorted(cumulative, rng.open_uniform(count), side="left")
    z = rng.standard_normal((count, model.dimension))
    return model.means[components] + np.einsum("nij,nj->ni", model.scale_trils[components], z)


def _initial_means(data: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; the start is a function of the stream alone."""
    centers, _ = kmeans_plusplus(data, k, random_state=int(gen.integers(2 ** 31 - 1)))
    return centers


def _regularised_factor(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    return linalg.cholesky(cov + COVARIANCE_JITTER * np.eye(d), lower=True)


def fit_gmm(data: np.ndarray, k: int, max_iters: int = 500, seed: int = 0,
            tol: float = 1e-10) -> Tuple[GmmModel, List[float]]:
    """
    Fit a k-component full-covariance mixture by EM.

    Args:
        data: Observations, shape (n, d)
        k: Components
        max_iters: EM iterations at most
        seed: Seeds the k-means++ start and any component re-initialisation
        tol: Stop once the mean log-likelihood gains less than this

    Returns:
        (model, trace of the mean log-likelihood per sample, one entry per E-step)

    Raises:
        GmmCollapseError: a component emptied out more than MAX_REINITIALISATIONS times
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = data.shape
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    if n < k * (d + 2):
        raise DomainError(f"n={n} is too small for {k} components in d={d}")
    gen = RngStream(seed).spawn("gmm").generator

    data_cov = np.atleast_2d(np.cov(data, rowvar=False, bias=True))
    base_factor = _regularised_factor(data_cov)
    weights = np.full(k, 1.0 / k)
    means = _initial_means(data, k, gen)
    factors = np.repeat(base_factor[None], k, axis=0)

    trace: List[float] = []
    reinitialisations = 0
    for iteration in range(max_iters):
        joint = _component_log_densities(means, factors, data) + np.log(weights)
        norm = special.logsumexp(joint, axis=1)
        trace.append(float(norm.mean()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        resp = np.exp(joint - norm[:, None])
        mass = resp.sum(axis=0)

        collapsed = np.flatnonzero(mass < 1.0)
        if collapsed.size:
            reinitialisations += collapsed.size
            if reinitialisations > MAX_REINITIALISATIONS:
                raise GmmCollapseError(
                    f"components kept collapsing after {MAX_REINITIALISATIONS} re-initialisations"
                )
            for c in collapsed:
                logger.warning(f"GMM component {c} collapsed at iteration {iteration}; "
                               f"re-initialising from a data point")
                means[c] = data[gen.integers(n)]
                factors[c] = base_factor
                weights[c] = 1.0 / k
            weights = weights / weights.sum()
            # the trace restarts its monotone run from here
            trace.clear()
            continue

        weights = mass / n
        means = (resp.T @ data) / mass[:, None]
        for c in range(k):
            centred = data - means[c]
            cov = (resp[:, c, None] * centred).T @ centred / mass[c]
            factors[c] = _regularised_factor(cov)

    model = GmmModel(weights / weights.sum(), means, factors)
    logger.info(f"GMM k={k} fitted in {len(trace)} iterations, mean log-likelihood "
                f"{trace[-1]:.6f}")
    return model, trace


# =====================================================
# SAMPLING-ONLY TRANSPORT AND PERSISTENCE
# =====================================================

class GmmSampler(TransportMap):
    """A fitted mixture behind the TransportMap surface; it samples and scores but has no latent map."""

    kind = "GmmSampler"
    invertible = False

    def __init__(self, model: GmmModel):
        super().__init__(model.dimension)
        self.model = model

    def _forward(self, z):
        raise NoInverseError("a Gaussian mixture has no latent map; sample it directly")

    def _log_prob(self, x):
        return gmm_log_prob(self.model, x)

    def sample(self, count: int, rng: RngStream) -> np.ndarray:
        return gmm_sample(self.model, count, rng)

    def to_dict(self):
        return {"kind": self.kind, "dimension": self.dimension, "model": gmm_to_dict(self.model)}


def gmm_to_dict(model: GmmModel) -> dict:
    return {
        "k": model.k,
        "weights": _encode_floats(model.weights),
        "means": _encode_floats(model.means),
        "scale_trils": _encode_floats(model.scale_trils),
    }


def gmm_from_dict(doc: dict) -> GmmModel:
    try:
        model = GmmModel(_decode_floats(doc["weights"]), _decode_floats(doc["means"]),
                         _decode_floats(doc["scale_trils"]))
    except KeyError as e:
        raise ModelFormatError(f"GMM entry is missing {e}") from e
    if int(doc.get("k", model.k)) != model.k:
        raise ModelFormatError("GMM component count disagrees with its parameters")
    return model


def save_gmm(model: GmmModel, path) -> None:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    doc.update(GmmSampler(model).to_dict())
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_gmm(path, expected_dimension: Optional[int] = None) -> GmmModel:
    transport = load_map(path, expected_dimension)
    if not isinstance(transport, GmmSampler):
        raise ModelFormatError(f"{path} holds a {transport.kind}, not a GMM")
    return transport.model
