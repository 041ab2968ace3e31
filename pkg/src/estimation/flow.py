"""
Transport maps from the standard Gaussian base to data space

forward(z) carries latent points to data space, inverse(x) brings them back and
log_prob(x) is the exact change-of-variables log-density. The trainable map is
a stack of affine coupling layers (d >= 2) or Gaussian-mixture-CDF layers
(d = 1), fitted by maximum likelihood with hand-written backward passes, and
closed by a fixed standardisation layer learned from the data moments.
"""

import copy
import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, special

from utils.errors import (
    DimensionMismatchError,
    DomainError,
    ModelFormatError,
    NoInverseError,
    NumericalOverflowError,
    TrainingDivergedError,
)
from utils.sampling import RngStream

logger = logging.getLogger(__name__)

MODEL_FORMAT = "flow-strata-engine.transport-map"
MODEL_VERSION = 1

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TINY = 1e-300


def gaussian_log_density(z: np.ndarray) -> np.ndarray:
    """log N(z; 0, I) row by row."""
    return -0.5 * np.einsum("ij,ij->i", z, z) - z.shape[1] * _LOG_SQRT_2PI


def _as_batch(x, d: int) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != d:
        raise DimensionMismatchError(f"expected {d} columns, got {arr.shape[1]}")
    return arr, single


def _encode_floats(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "values": [repr(float(v)) for v in arr.ravel()]}


def _decode_floats(doc: dict) -> np.ndarray:
    try:
        values = np.array([float(v) for v in doc["values"]], dtype=float)
        return values.reshape(tuple(doc["shape"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed array entry: {e}") from e


# =====================================================
# MAP KINDS
# =====================================================

class TransportMap(ABC):
    """Map z -> x from N(0, I_d) to data space."""

    kind = "TransportMap"
    invertible = True

    def __init__(self, dimension: int):
        if dimension < 1:
            raise DomainError(f"dimension must be positive, got {dimension}")
        self.dimension = int(dimension)

    def forward(self, z):
        arr, single = _as_batch(z, self.dimension)
        x = self._forward(arr)
        if not np.all(np.isfinite(x)):
            raise NumericalOverflowError(f"{self.kind} forward produced non-finite values")
        return x[0] if single else x

    def inverse(self, x):
        arr, single = _as_batch(x, self.dimension)
        z = self._inverse(arr)
        return z[0] if single else z

    def log_prob(self, x):
        arr, single = _as_batch(x, self.dimension)
        lp = self._log_prob(arr)
        return float(lp[0]) if single else lp

    @abstractmethod
    def _forward(self, z: np.ndarray) -> np.ndarray:
        ...

    def _inverse(self, x: np.ndarray) -> np.ndarray:
        raise NoInverseError(f"{self.kind} has no inverse")

    def _log_prob(self, x: np.ndarray) -> np.ndarray:
        raise NoInverseError(f"{self.kind} has no density")

    def to_dict(self) -> dict:
        raise ModelFormatError(f"{self.kind} cannot be serialised")


class IdentityMap(TransportMap):
    kind = "Identity"

    def _forward(self, z):
        return z.copy()

    def _inverse(self, x):
        return x.copy()

    def _log_prob(self, x):
        return gaussian_log_density(x)

    def to_dict(self):
        return {"kind": self.kind, "dimension": self.dimension}


class AffineWhitenMap(TransportMap):
    """x = L z + μ with L lower triangular and a positive diagonal."""

    kind = "AffineWhiten"

    def __init__(self, mean: Sequence[float], scale_tril):
        mean = np.asarray(mean, dtype=float).reshape(-1)
        super().__init__(mean.size)
        scale = np.atleast_2d(np.asarray(scale_tril, dtype=float))
        if scale.shape != (self.dimension, self.dimension):
            raise DimensionMismatchError(
                f"scale must be {self.dimension}x{self.dimension}, got {scale.shape}"
            )
        if not np.all(np.diag(scale) > 0):
            raise DomainError("scale must have a strictly positive diagonal")
        self.mean = mean
        self.scale_tril = np.tril(scale)
        self.log_abs_det = float(np.sum(np.log(np.diag(self.scale_tril))))

    @classmethod
    def from_moments(cls, data: np.ndarray) -> "AffineWhitenMap":
        """Per-feature mean and standard deviation, folded into a diagonal scale."""
        data = np.asarray(data, dtype=float)
        std = data.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(data.mean(axis=0), np.diag(std))

    def _forward(self, z):
        return z @ self.scale_tril.T + self.mean

    def _inverse(self, x):
        return linalg.solve_triangular(self.scale_tril, (x - self.mean).T, lower=True).T

    def _log_prob(self, x):
        return gaussian_log_density(self._inverse(x)) - self.log_abs_det

    def to_dict(self):
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "mean": _encode_floats(self.mean),
            "scale_tril": _encode_floats(self.scale_tril),
        }


class ExactMap(TransportMap):
    """A closed-form map supplied by a testbed; forward (and optionally inverse) only."""

    kind = "Exact"

    def __init__(self, dimension: int, name: str,
                 forward_fn: Callable[[np.ndarray], np.ndarray],
                 inverse_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        super().__init__(dimension)
        self.name = name
        self._forward_fn = forward_fn
        self._inverse_fn = inverse_fn

    def _forward(self, z):
        return self._forward_fn(z)

    def _inverse(self, x):
        if self._inverse_fn is None:
            raise NoInverseError(f"exact map {self.name} has no inverse")
        return self._inverse_fn(x)


# =====================================================
# LAYERS
# =====================================================

class AffineCouplingLayer:
    """
    Coordinates where mask is True pass through and feed a two-hidden-layer tanh
    network that outputs a log-scale s (softly clamped to ±clamp) and a shift t
    for the remaining coordinates: x_b = u_b·exp(s) + t.
    """

    kind = "affine-coupling"

    def __init__(self, mask: np.ndarray, params: Dict[str, np.ndarray], clamp: float = 5.0):
        self.mask = np.asarray(mask, dtype=bool)
        self.passed = np.flatnonzero(self.mask)
        self.moved = np.flatnonzero(~self.mask)
        self.params = params
        self.clamp = float(clamp)

    @classmethod
    def initialise(cls, mask: np.ndarray, hidden: int, rng: RngStream,
                   clamp: float = 5.0) -> "AffineCouplingLayer":
        mask = np.asarray(mask, dtype=bool)
        n_in, n_out = int(mask.sum()), int((~mask).sum())
        gen = rng.generator
        params = {
            "W1": gen.normal(0.0, 1.0 / math.sqrt(max(n_in, 1)), size=(n_in, hidden)),
            "b1": np.zeros(hidden),
            "W2": gen.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, hidden)),
            "b2": np.zeros(hidden),
            # zero output layer: the layer starts as the identity
            "W3": np.zeros((hidden, 2 * n_out)),
            "b3": np.zeros(2 * n_out),
        }
        return cls(mask, params, clamp)

    def _conditioner(self, xa):
        p = self.params
        h1 = np.tanh(xa @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        out = h2 @ p["W3"] + p["b3"]
        n_out = self.moved.size
        s = self.clamp * np.tanh(out[:, :n_out] / self.clamp)
        return s, out[:, n_out:], (h1, h2)

    def encode(self, x):
        u, ld, _ = self.encode_with_cache(x)
        return u, ld

    def encode_with_cache(self, x):
        xa = x[:, self.passed]
        s, t, hidden = self._conditioner(xa)
        ub = (x[:, self.moved] - t) * np.exp(-s)
        u = x.copy()
        u[:, self.moved] = ub
        return u, -s.sum(axis=1), (xa, s, ub, hidden)

    def decode(self, u):
        s, t, _ = self._conditioner(u[:, self.passed])
        x = u.copy()
        x[:, self.moved] = u[:, self.moved] * np.exp(s) + t
        return x

    def backward(self, cache, gu, gld):
        xa, s, ub, (h1, h2) = cache
        p = self.params
        gub = gu[:, self.moved]
        scale = np.exp(-s)
        gxb = gub * scale
        gt = -gub * scale
        gs = -gub * ub - gld[:, None]
        gout = np.concatenate([gs * (1.0 - (s / self.clamp) ** 2), gt], axis=1)
        grads = {"W3": h2.T @ gout, "b3": gout.sum(axis=0)}
        ga2 = (gout @ p["W3"].T) * (1.0 - h2 ** 2)
        grads["W2"] = h1.T @ ga2
        grads["b2"] = ga2.sum(axis=0)
        ga1 = (ga2 @ p["W2"].T) * (1.0 - h1 ** 2)
        grads["W1"] = xa.T @ ga1
        grads["b1"] = ga1.sum(axis=0)
        gx = np.empty_like(gu)
        gx[:, self.passed] = gu[:, self.passed] + ga1 @ p["W1"].T
        gx[:, self.moved] = gxb
        return gx, grads

    def to_dict(self):
        return {
            "type": self.kind,
            "mask": [bool(b) for b in self.mask],
            "clamp": repr(self.clamp),
            "params": {name: _encode_floats(v) for name, v in self.params.items()},
        }


class MixtureCdfLayer:
    """
    Elementwise u = Φ⁻¹(F(x)) with F = (1 − α)Φ + α·G, G a K-component Gaussian
    mixture CDF and α = |tanh(gate)|.

    Used for one-dimensional flows, where coupling has nothing to condition on.
    A zero gate gives F = Φ, so a fresh layer is the identity. The encode
    direction is closed-form; decode inverts F by bisection.
    """

    kind = "mixture-cdf"
    _BISECTION_STEPS = 200

    def __init__(self, params: Dict[str, np.ndarray]):
        self.params = params

    @classmethod
    def initialise(cls, dimension: int, components: int) -> "MixtureCdfLayer":
        spread = special.ndtri((np.arange(components) + 0.5) / components)
        return cls({
            "gate": np.zeros((dimension, 1)),
            "logits": np.zeros((dimension, components)),
            "means": np.tile(spread, (dimension, 1)),
            "log_scales": np.zeros((dimension, components)),
        })

    def _alpha(self):
        return np.abs(np.tanh(self.params["gate"][:, 0]))

    def _parts(self, x):
        p = self.params
        w = special.softmax(p["logits"], axis=-1)
        sigma = np.exp(p["log_scales"])
        u = (x[:, :, None] - p["means"]) / sigma
        return w, sigma, u

    def _cdf_pair(self, x):
        w, _, u = self._parts(x)
        alpha = self._alpha()
        cdf = (1.0 - alpha) * special.ndtr(x) + alpha * (w * special.ndtr(u)).sum(-1)
        sf = (1.0 - alpha) * special.ndtr(-x) + alpha * (w * special.ndtr(-u)).sum(-1)
        return cdf, sf

    def encode(self, x):
        u, ld, _ = self.encode_with_cache(x)
        return u, ld

    def encode_with_cache(self, x):
        w, sigma, u = self._parts(x)
        alpha = self._alpha()
        phi = np.exp(-0.5 * u ** 2) / math.sqrt(2.0 * math.pi)
        phi_x = np.exp(-0.5 * x ** 2) / math.sqrt(2.0 * math.pi)
        mix_cdf = (w * special.ndtr(u)).sum(-1)
        mix_sf = (w * special.ndtr(-u)).sum(-1)
        mix_dens = (w * phi / sigma).sum(-1)
        cdf = (1.0 - alpha) * special.ndtr(x) + alpha * mix_cdf
        sf = (1.0 - alpha) * special.ndtr(-x) + alpha * mix_sf
        dens = np.maximum((1.0 - alpha) * phi_x + alpha * mix_dens, _TINY)
        y = np.where(cdf <= 0.5,
                     special.ndtri(np.maximum(cdf, _TINY)),
                     -special.ndtri(np.maximum(sf, _TINY)))
        ld = (np.log(dens) + 0.5 * y ** 2 + _LOG_SQRT_2PI).sum(axis=1)
        return y, ld, (x, w, sigma, u, phi, phi_x, mix_cdf, mix_dens, dens, y)

    def decode(self, y):
        p = self.params
        spread = 40.0 * np.exp(p["log_scales"])
        lo = np.minimum((p["means"] - spread).min(-1), -40.0)
        hi = np.maximum((p["means"] + spread).max(-1), 40.0)
        lo = np.broadcast_to(lo, y.shape).copy()
        hi = np.broadcast_to(hi, y.shape).copy()
        lower = y <= 0
        target = np.where(lower, special.ndtr(y), special.ndtr(-y))
        for _ in range(self._BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            cdf, sf = self._cdf_pair(mid)
            below = np.where(lower, cdf < target, sf > target)
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def backward(self, cache, gy, gld):
        x, w, sigma, u, phi, phi_x, mix_cdf, mix_dens, dens, y = cache
        gate = self.params["gate"][:, 0]
        t = np.tanh(gate)
        alpha = np.abs(t)
        # |tanh| has a kink at 0; take the right derivative there
        d_alpha = np.where(gate >= 0, 1.0, -1.0) * (1.0 - t ** 2)

        phi_y = np.maximum(np.exp(-0.5 * y ** 2) / math.sqrt(2.0 * math.pi), _TINY)
        g_ld = gld[:, None]
        a2 = (gy + g_ld * y) / phi_y
        b2 = g_ld / dens
        a = (alpha * a2)[:, :, None]
        b = (alpha * b2)[:, :, None]
        pdf_k = w * phi / sigma
        d_cdf_mean = -pdf_k
        d_cdf_log_scale = -w * phi * u
        d_cdf_logits = w * (special.ndtr(u) - mix_cdf[:, :, None])
        d_dens_mean = pdf_k * u / sigma
        d_dens_log_scale = pdf_k * (u ** 2 - 1.0)
        d_dens_logits = w * (phi / sigma - mix_dens[:, :, None])
        d_cdf_alpha = mix_cdf - special.ndtr(x)
        d_dens_alpha = mix_dens - phi_x
        grads = {
            "gate": ((a2 * d_cdf_alpha + b2 * d_dens_alpha).sum(axis=0) * d_alpha)[:, None],
            "means": (a * d_cdf_mean + b * d_dens_mean).sum(axis=0),
            "log_scales": (a * d_cdf_log_scale + b * d_dens_log_scale).sum(axis=0),
            "logits": (a * d_cdf_logits + b * d_dens_logits).sum(axis=0),
        }
        d_dens_x = -(1.0 - alpha) * x * phi_x - alpha * (pdf_k * u / sigma).sum(-1)
        gx = a2 * dens + b2 * d_dens_x
        return gx, grads

    def to_dict(self):
        return {
            "type": self.kind,
            "params": {name: _encode_floats(v) for name, v in self.params.items()},
        }


def _layer_from_dict(doc: dict):
    params = {name: _decode_floats(v) for name, v in doc.get("params", {}).items()}
    if doc.get("type") == AffineCouplingLayer.kind:
        return AffineCouplingLayer(np.array(doc["mask"], dtype=bool), params,
                                   float(doc.get("clamp", "5.0")))
    if doc.get("type") == MixtureCdfLayer.kind:
        missing = {"gate", "logits", "means", "log_scales"} - set(params)
        if missing:
            raise ModelFormatError(f"mixture-cdf layer lacks {sorted(missing)}")
        return MixtureCdfLayer(params)
    raise ModelFormatError(f"unknown layer type: {doc.get('type')!r}")


class CouplingFlow(TransportMap):
    """forward: z -> layers[0].decode -> ... -> layers[-1].decode -> whiten."""

    kind = "CouplingFlow"

    def __init__(self, layers: List, whiten: AffineWhitenMap):
        super().__init__(whiten.dimension)
        self.layers = layers
        self.whiten = whiten

    def _forward(self, z):
        y = z
        for layer in self.layers:
            y = layer.decode(y)
        return self.whiten._forward(y)

    def _encode(self, x):
        y = self.whiten._inverse(x)
        ld = np.full(x.shape[0], -self.whiten.log_abs_det)
        for layer in reversed(self.layers):
            y, layer_ld = layer.encode(y)
            ld = ld + layer_ld
        return y, ld

    def _inverse(self, x):
        return self._encode(x)[0]

    def _log_prob(self, x):
        z, ld = self._encode(x)
        return gaussian_log_density(z) + ld

    def parameter_arrays(self) -> List[np.ndarray]:
        return [layer.params[name] for layer in self.layers for name in sorted(layer.params)]

    def loss_and_grads(self, x: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        """Mean negative log-likelihood of x and its gradient, aligned with parameter_arrays()."""
        n = x.shape[0]
        y = self.whiten._inverse(x)
        ld = np.full(n, -self.whiten.log_abs_det)
        caches = []
        for layer in reversed(self.layers):
            y, layer_ld, cache = layer.encode_with_cache(y)
            ld = ld + layer_ld
            caches.append(cache)
        loss = -float(np.mean(gaussian_log_density(y) + ld))
        gy = y / n
        gld = np.full(n, -1.0 / n)
        grads_by_layer = [None] * len(self.layers)
        for position, cache in zip(range(len(self.layers)), reversed(caches)):
            gy, grads_by_layer[position] = self.layers[position].backward(cache, gy, gld)
        grads = [grads_by_layer[i][name] for i, layer in enumerate(self.layers)
                 for name in sorted(layer.params)]
        return loss, grads

    def to_dict(self):
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "whiten": self.whiten.to_dict(),
            "layers": [layer.to_dict() for layer in self.layers],
        }


def default_architecture(d: int) -> Tuple[int, int]:
    """(layers, hidden width) by dimension."""
    if d <= 2:
        return 8, 32
    if d <= 4:
        return 10, 64
    return 12, 128


def build_flow(data: np.ndarray, layers: int, hidden: int, rng: RngStream,
               clamp: float = 5.0) -> CouplingFlow:
    """Freshly initialised flow whose standardisation layer matches the data moments."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    d = data.shape[1]
    whiten = AffineWhitenMap.from_moments(data)
    if d == 1:
        stack = [MixtureCdfLayer.initialise(1, max(2, hidden // 4)) for _ in range(layers)]
    else:
        stack = []
        for index in range(layers):
            mask = (np.arange(d) + index) % 2 == 0
            stack.append(AffineCouplingLayer.initialise(mask, hidden, rng.spawn("layer", index),
                                                        clamp))
    return CouplingFlow(stack, whiten)


# =====================================================
# TRAINING
# =====================================================

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 100
    max_grad_norm: float = 100.0
    log_every: int = 100

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise DomainError("epochs must be >= 0, batch_size and patience >= 1")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise DomainError(f"unknown optimizer: {self.optimizer!r}")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise DomainError("validation_fraction must lie in [0, 0.5]")


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SgdMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.params, self.lr, self.momentum = params, lr, momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads):
        for p, g, vel in zip(self.params, grads, self.velocity):
            vel *= self.momentum
            vel -= self.lr * g
            p += vel


def nll(transport: TransportMap, data: np.ndarray) -> float:
    """Mean negative log-likelihood."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] < 1:
        raise DomainError("nll needs at least one row")
    return -float(np.mean(transport.log_prob(data)))


def train_flow(data: np.ndarray, layers: Optional[int] = None, hidden: Optional[int] = None,
               config: TrainConfig = TrainConfig()) -> Tuple[CouplingFlow, List[Tuple[int, float, float]]]:
    """
    Fit a flow by maximum likelihood.

    Args:
        data: Observations, shape (n, d)
        layers, hidden: Architecture; defaults depend on d
        config: Optimiser and schedule

    Returns:
        (flow with the best validation parameters, trace of (epoch, train_nll, val_nll))

    Raises:
        TrainingDivergedError: when the loss stops being finite
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = data.shape
    default_layers, default_hidden = default_architecture(d)
    layers = default_layers if layers is None else layers
    hidden = default_hidden if hidden is None else hidden
    rng = RngStream(config.seed)

    flow = build_flow(data, layers, hidden, rng.spawn("init"))
    order = rng.spawn("split").generator.permutation(n)
    n_val = int(round(config.validation_fraction * n))
    val = data[order[:n_val]] if n_val else data
    train = data[order[n_val:]] if n_val < n else data

    params = flow.parameter_arrays()
    optimizer = (_Adam(params, config.learning_rate) if config.optimizer == "adam"
                 else _SgdMomentum(params, config.learning_rate))

    trace = [(0, nll(flow, train), nll(flow, val))]
    best_val = trace[0][2]
    best_params = copy.deepcopy(params)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.spawn("epoch", epoch).generator.permutation(train.shape[0])
        for start in range(0, train.shape[0], config.batch_size):
            batch = train[perm[start:start + config.batch_size]]
            loss, grads = flow.loss_and_grads(batch)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} in epoch {epoch}", trace)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > config.max_grad_norm:
                grads = [g * (config.max_grad_norm / norm) for g in grads]
            optimizer.step(grads)
        train_nll, val_nll = nll(flow, train), nll(flow, val)
        if not (math.isfinite(train_nll) and math.isfinite(val_nll)):
            raise TrainingDivergedError(f"nll became non-finite in epoch {epoch}", trace)
        trace.append((epoch, train_nll, val_nll))
        if epoch % config.log_every == 0:
            logger.info(f"epoch {epoch}: train_nll={train_nll:.5f} val_nll={val_nll:.5f}")
        if val_nll < best_val:
            best_val, best_params, stale = val_nll, copy.deepcopy(params), 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"early stop at epoch {epoch}, best val_nll={best_val:.5f}")
                break

    for target, saved in zip(params, best_params):
        target[...] = saved
    return flow, trace


# =====================================================
# PERSISTENCE
# =====================================================

def map_to_dict(transport: TransportMap) -> dict:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    doc.update(transport.to_dict())
    return doc


def map_from_dict(doc: dict, expected_dimension: Optional[int] = None) -> TransportMap:
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelFormatError("model file has no version field")
    if doc["version"] != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc['version']!r}")
    try:
        kind, d = doc["kind"], int(doc["dimension"])
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"model file is missing {e}") from e
    if expected_dimension is not None and d != expected_dimension:
        raise DimensionMismatchError(f"model has dimension {d}, expected {expected_dimension}")

    if kind == IdentityMap.kind:
        transport = IdentityMap(d)
    elif kind == AffineWhitenMap.kind:
        transport = AffineWhitenMap(_decode_floats(doc["mean"]), _decode_floats(doc["scale_tril"]))
    elif kind == CouplingFlow.kind:
        whiten = map_from_dict({"version": MODEL_VERSION, **doc["whiten"]})
        transport = CouplingFlow([_layer_from_dict(layer) for layer in doc["layers"]], whiten)
    elif kind == "GmmSampler":
        from estimation.gmm import GmmSampler, gmm_from_dict
        transport = GmmSampler(gmm_from_dict(doc["model"]))
    else:
        raise ModelFormatError(f"unknown map kind: {kind!r}")
    if transport.dimension != d:
        raise DimensionMismatchError(
            f"model declares dimension {d} but its parameters have dimension {transport.dimension}"
        )
    return transport


def save_map(transport: TransportMap, path) -> None:
    Path(path).write_text(json.dumps(map_to_dict(transport), indent=1) + "\n", encoding="utf-8")


def load_map(path, expected_dimension: Optional[int] = None) -> TransportMap:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path} is not valid JSON: {e}") from e
    return map_from_dict(doc, expected_dimension)
