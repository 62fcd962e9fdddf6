"""Conditional CDF estimators: Gaussian-mixture math, mixture density networks, oracles.

The standard normal CDF is :func:`scipy.special.ndtr` (Cephes), whose absolute
error is below 1e-15 on the real line; it is the single Phi used everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import numpy as np
from scipy.special import logsumexp, ndtr

from .data import LabeledDataset, RngStream, as_generator
from .errors import InvalidInputError
from .nn import MLP, NetworkSpec, TrainConfig, train

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
SIGMA_FLOOR = 1e-3


def std_normal_cdf(v):
    return ndtr(v)


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Mixture weights, means and stdevs; shape ``(K,)`` or batched ``(N, K)``."""

    weights: np.ndarray
    means: np.ndarray
    stdevs: np.ndarray

    def __post_init__(self):
        w, m, s = (np.asarray(a, dtype=float) for a in (self.weights, self.means, self.stdevs))
        if not (w.shape == m.shape == s.shape):
            raise InvalidInputError("weights, means and stdevs must share a shape")
        if np.any(s <= 0) or np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > 1e-9):
            raise InvalidInputError("invalid mixture: need weights on the simplex and stdevs > 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stdevs", s)

    @property
    def n_components(self) -> int:
        return self.weights.shape[-1]

    def row(self, i: int) -> "GmmParams":
        return GmmParams(self.weights[i], self.means[i], self.stdevs[i])


def gmm_cdf(p: GmmParams, v):
    """sum_k pi_k Phi((v - mu_k) / sigma_k), broadcasting ``v`` over the batch."""
    v = np.asarray(v, dtype=float)[..., None]
    out = np.sum(p.weights * ndtr((v - p.means) / p.stdevs), axis=-1)
    return np.clip(out, 0.0, 1.0)


def _component_log_terms(p: GmmParams, v):
    v = np.asarray(v, dtype=float)[..., None]
    zsc = (v - p.means) / p.stdevs
    with np.errstate(divide="ignore"):
        logw = np.log(p.weights)
    return logw - np.log(p.stdevs) - LOG_SQRT_2PI - 0.5 * zsc * zsc


def gmm_log_density(p: GmmParams, v):
    """log sum_k pi_k N(v; mu_k, sigma_k^2), evaluated with log-sum-exp."""
    return logsumexp(_component_log_terms(p, v), axis=-1)


def gmm_sample(p: GmmParams, rng) -> np.ndarray:
    """One draw per row: component k ~ pi, then N(mu_k, sigma_k^2)."""
    gen = as_generator(rng)
    w = np.atleast_2d(p.weights)
    cum = np.cumsum(w, axis=1)
    u = gen.random(w.shape[0])[:, None]
    k = np.minimum((u > cum).sum(axis=1), w.shape[1] - 1)
    rows = np.arange(w.shape[0])
    mu = np.atleast_2d(p.means)[rows, k]
    sd = np.atleast_2d(p.stdevs)[rows, k]
    out = mu + sd * gen.standard_normal(w.shape[0])
    return out if np.ndim(p.weights) == 2 else out[0]


# ---------------------------------------------------------------- MDN head


def softplus(a):
    return np.logaddexp(0.0, a)


def head_to_gmm(raw, floor: float = SIGMA_FLOOR) -> GmmParams:
    """Map ``(N, 3K)`` raw outputs to mixture params: softmax / identity / softplus + floor."""
    raw = np.asarray(raw, dtype=float)
    k = raw.shape[1] // 3
    logits = raw[:, :k]
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return GmmParams(w, raw[:, k:2 * k].copy(), softplus(raw[:, 2 * k:]) + floor)


def mdn_nll(raw, targets, floor: float = SIGMA_FLOOR):
    """Mean negative log-likelihood of ``targets`` and its gradient w.r.t. ``raw``."""
    raw = np.asarray(raw, dtype=float)
    v = np.asarray(targets, dtype=float).reshape(-1)
    b, k3 = raw.shape
    k = k3 // 3
    logits, mu, s_raw = raw[:, :k], raw[:, k:2 * k], raw[:, 2 * k:]
    log_w = logits - logsumexp(logits, axis=1, keepdims=True)
    sigma = softplus(s_raw) + floor
    zsc = (v[:, None] - mu) / sigma
    terms = log_w - np.log(sigma) - LOG_SQRT_2PI - 0.5 * zsc * zsc
    logp = logsumexp(terms, axis=1, keepdims=True)
    resp = np.exp(terms - logp)
    grad = np.empty_like(raw)
    grad[:, :k] = np.exp(log_w) - resp
    grad[:, k:2 * k] = -resp * zsc / sigma
    dsig = -resp * (zsc * zsc - 1.0) / sigma
    grad[:, 2 * k:] = dsig / (1.0 + np.exp(-s_raw))
    return float(-logp.mean()), grad / b


# ---------------------------------------------------------------- interfaces


@runtime_checkable
class ConditionalCdf(Protocol):
    def cdf(self, v, z) -> np.ndarray: ...

    def log_density(self, v, z) -> np.ndarray: ...

    def sample(self, z, rng) -> np.ndarray: ...


@runtime_checkable
class ConditionalSampler(Protocol):
    def sample(self, z, rng) -> np.ndarray:
        """One independent draw of x ~ p(x | z) for every row of ``z``."""


def _as_matrix(z):
    z = np.asarray(z, dtype=float)
    return z.reshape(-1, 1) if z.ndim == 1 else z


@dataclass(frozen=True)
class OracleGaussianCdf:
    """Exact Gaussian conditional law N(mean_fn(z), stdev(z)^2).

    ``stdev`` is a positive constant or a callable of the ``(N, p)`` z matrix.
    """

    mean_fn: Callable
    stdev: float | Callable

    def _loc_scale(self, z):
        z = _as_matrix(z)
        loc = np.asarray(self.mean_fn(z), dtype=float).reshape(-1)
        sd = self.stdev(z) if callable(self.stdev) else np.full(z.shape[0], float(self.stdev))
        return loc, np.asarray(sd, dtype=float).reshape(-1)

    def cdf(self, v, z):
        loc, sd = self._loc_scale(z)
        return ndtr((np.asarray(v, dtype=float) - loc) / sd)

    def log_density(self, v, z):
        loc, sd = self._loc_scale(z)
        r = (np.asarray(v, dtype=float) - loc) / sd
        return -0.5 * r * r - np.log(sd) - LOG_SQRT_2PI

    def sample(self, z, rng):
        loc, sd = self._loc_scale(z)
        return loc + sd * as_generator(rng).standard_normal(loc.shape[0])

    def at(self, z):
        loc, sd = self._loc_scale(z)
        return lambda v: ndtr((np.asarray(v, dtype=float) - loc) / sd)


@dataclass(frozen=True)
class FunctionCdf:
    """Conditional CDF given by plain callables ``cdf_fn(v, z)`` and ``sampler_fn(z, gen)``."""

    cdf_fn: Callable
    sampler_fn: Callable | None = None
    log_density_fn: Callable | None = None

    def cdf(self, v, z):
        return np.asarray(self.cdf_fn(np.asarray(v, dtype=float), _as_matrix(z)), dtype=float)

    def log_density(self, v, z):
        if self.log_density_fn is None:
            raise NotImplementedError("no density supplied")
        return self.log_density_fn(np.asarray(v, dtype=float), _as_matrix(z))

    def sample(self, z, rng):
        if self.sampler_fn is None:
            raise NotImplementedError("no sampler supplied")
        return np.asarray(self.sampler_fn(_as_matrix(z), as_generator(rng)), dtype=float)

    def at(self, z):
        z = _as_matrix(z)
        return lambda v: self.cdf(v, z)


# ---------------------------------------------------------------- MDN model


@dataclass(frozen=True)
class MdnSpec:
    """Architecture of a mixture density network (hidden widths exclude input/head)."""

    hidden: tuple[int, ...] = (64,) * 6
    n_components: int = 10
    normalization: str = "batch_norm"
    sigma_floor: float = SIGMA_FLOOR

    def network_spec(self, input_width: int, init_seed: RngStream) -> NetworkSpec:
        widths = (input_width, *self.hidden, 3 * self.n_components)
        return NetworkSpec(widths, normalization=self.normalization, init_seed=init_seed)


@dataclass
class MdnModel:
    """A fitted MDN for a scalar target given z.

    Inputs and targets are standardized internally; ``gmm_params`` reports the
    mixture in the original target units.
    """

    network: MLP
    n_components: int
    z_mean: np.ndarray
    z_scale: np.ndarray
    t_loc: float
    t_scale: float
    sigma_floor: float = SIGMA_FLOOR
    _cache: dict = field(default_factory=dict, repr=False)

    def _standard_gmm(self, z) -> GmmParams:
        zs = (_as_matrix(z) - self.z_mean) / self.z_scale
        return head_to_gmm(self.network.forward(zs, mode="eval"), self.sigma_floor)

    def gmm_params(self, z) -> GmmParams:
        g = self._standard_gmm(z)
        return GmmParams(g.weights, g.means * self.t_scale + self.t_loc, g.stdevs * self.t_scale)

    def cdf(self, v, z):
        return gmm_cdf(self._standard_gmm(z), (np.asarray(v, dtype=float) - self.t_loc) / self.t_scale)

    def log_density(self, v, z):
        t = (np.asarray(v, dtype=float) - self.t_loc) / self.t_scale
        return gmm_log_density(self._standard_gmm(z), t) - np.log(self.t_scale)

    def sample(self, z, rng):
        return gmm_sample(self.gmm_params(z), rng)

    def at(self, z):
        """Freeze the mixture at ``z`` so repeated CDF evaluations skip the forward pass."""
        g = self._standard_gmm(z)
        return lambda v: gmm_cdf(g, (np.asarray(v, dtype=float) - self.t_loc) / self.t_scale)

    def fingerprint(self) -> str:
        return self.network.params.fingerprint()


def mdn_sample(model: MdnModel, z, rng):
    return model.sample(z, rng)


def fit_mdn(targets, z, spec: MdnSpec, config: TrainConfig, rng: RngStream,
            resample_targets: Callable[[int], np.ndarray] | None = None) -> MdnModel:
    """Fit an MDN for ``targets | z`` by maximum likelihood."""
    z = _as_matrix(z)
    t = np.asarray(targets, dtype=float).reshape(-1)
    if t.shape[0] != z.shape[0]:
        raise InvalidInputError("targets and z differ in length")
    z_mean = z.mean(axis=0)
    z_scale = z.std(axis=0)
    z_scale = np.where(z_scale > 1e-12, z_scale, 1.0)
    t_loc = float(t.mean())
    t_scale = float(t.std())
    if t_scale <= 1e-12 * (1.0 + abs(t_loc)):
        t_scale = 1.0
    net = MLP(spec.network_spec(z.shape[1], rng.child(0)))
    cfg = TrainConfig(
        epochs=config.epochs, batch_size=config.batch_size, learning_rate=config.learning_rate,
        early_stop_patience=config.early_stop_patience,
        validation_fraction=config.validation_fraction, shuffle=rng.child(1),
    )
    zs = (z - z_mean) / z_scale
    loss = lambda raw, v: mdn_nll(raw, v, spec.sigma_floor)  # noqa: E731
    resample = None
    if resample_targets is not None:
        resample = lambda epoch: (np.asarray(resample_targets(epoch)) - t_loc) / t_scale  # noqa: E731
    train(net, cfg, loss, zs, (t - t_loc) / t_scale, resample)
    return MdnModel(net, spec.n_components, z_mean, z_scale, t_loc, t_scale, spec.sigma_floor)


def fit_mdn_y_given_z(train_data: LabeledDataset, spec: MdnSpec, config: TrainConfig,
                      rng: RngStream) -> MdnModel:
    """Fit F(y | z) on the (y, z) pairs of ``train_data``; x is never touched."""
    return fit_mdn(train_data.y, train_data.z, spec, config, rng)


def fit_mdn_x_given_z(train_z, sampler: ConditionalSampler, spec: MdnSpec, config: TrainConfig,
                      rng: RngStream, refresh_draws: bool = False) -> MdnModel:
    """Fit F(x | z) on freshly drawn x~ ~ p(x | z) for each row of ``train_z``.

    The observed x column is not an argument: the model is a function of z and
    sampler draws only. One x~ per row is drawn up front; ``refresh_draws``
    redraws them at every epoch instead.
    """
    z = _as_matrix(train_z)
    draw_stream = rng.child(2)
    x_tilde = sampler.sample(z, draw_stream.generator())
    resample = None
    if refresh_draws:
        resample = lambda epoch: sampler.sample(z, draw_stream.child(epoch).generator())  # noqa: E731
    return fit_mdn(x_tilde, z, spec, config, rng, resample)


@dataclass(frozen=True)
class CdfSampler:
    """Adapter exposing any model with ``sample(z, rng)`` as a ConditionalSampler."""

    model: object

    def sample(self, z, rng):
        return self.model.sample(z, rng)
