"""Synthetic data-generating processes with exact conditional samplers and CDFs.

Notation: N(a, b) has variance b. Coefficients (beta, phi, non-null sets) come
from a fixed ``coefficient_seed`` so they are shared by every replicate; the
replicate stream only drives the data draws.

Every single-test variant takes ``x_effect``; setting it to 0 removes every
path from x to y, which gives the matching null DGP.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import log_ndtr, logsumexp, ndtr

from .cdf import FunctionCdf, OracleGaussianCdf, _as_matrix
from .data import LabeledDataset, RngStream, as_generator
from .errors import InvalidInputError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GroundTruth:
    non_null: np.ndarray
    samplers: list | None = None

    def labels(self, d: int) -> np.ndarray:
        out = np.zeros(d, dtype=bool)
        out[self.non_null] = True
        return out


@dataclass
class SyntheticData:
    """One draw from a DGP.

    Single-test variants fill ``dataset`` (plus oracle ``x_cdf``/``y_cdf`` where
    closed-form); variable-selection variants fill ``covariates``, ``response``
    and ``truth`` instead.
    """

    dataset: LabeledDataset | None = None
    x_sampler: object = None
    x_cdf: object = None
    y_cdf: object = None
    truth: GroundTruth | None = None
    covariates: np.ndarray | None = None
    response: np.ndarray | None = None


def _normal(g, var, size):
    return g.normal(0.0, np.sqrt(var), size)


def sorted_normal_coefficients(d: int, coef_rng: RngStream) -> np.ndarray:
    beta = coef_rng.generator().standard_normal(d)
    return beta[np.argsort(-np.abs(beta), kind="stable")]


# ---------------------------------------------------------------- single-test DGPs


def sample_univariate_gaussian(n: int, rng, x_effect: float = 1.0, z_var: float = 0.1,
                               x_var: float = 0.1, y_var: float = 0.1) -> SyntheticData:
    """z ~ N(0, .1), x | z ~ N(z, .1), y | x, z ~ N(x_effect * x + z, .1)."""
    g = as_generator(rng)
    z = _normal(g, z_var, n)
    x = z + _normal(g, x_var, n)
    y = x_effect * x + z + _normal(g, y_var, n)
    x_cdf = OracleGaussianCdf(lambda z: z[:, 0], np.sqrt(x_var))
    y_cdf = OracleGaussianCdf(lambda z: (1.0 + x_effect) * z[:, 0],
                              np.sqrt(x_effect ** 2 * x_var + y_var))
    return SyntheticData(LabeledDataset(x, y, z), x_cdf, x_cdf, y_cdf)


def sample_non_gaussian(n: int, rng, d: int = 100, x_effect: float = 1.0, n_signal: int = 10,
                        coef_rng: RngStream = RngStream(0), z_var: float = 0.01,
                        x_var: float = 0.25, eps_var: float = 0.01) -> SyntheticData:
    """y = (x_effect * x + eps + z beta)^3 with x | z ~ N(z_{1:10} beta_{1:10}, .25)."""
    beta = sorted_normal_coefficients(d, coef_rng)
    s = min(n_signal, d)
    g = as_generator(rng)
    z = _normal(g, z_var, (n, d))
    x = z[:, :s] @ beta[:s] + _normal(g, x_var, n)
    y = (x_effect * x + _normal(g, eps_var, n) + z @ beta) ** 3
    x_cdf = OracleGaussianCdf(lambda z: z[:, :s] @ beta[:s], np.sqrt(x_var))
    inner_mean = lambda z: x_effect * (z[:, :s] @ beta[:s]) + z @ beta  # noqa: E731
    inner_sd = np.sqrt(x_effect ** 2 * x_var + eps_var)
    y_cdf = FunctionCdf(lambda v, z: ndtr((np.cbrt(v) - inner_mean(z)) / inner_sd))
    return SyntheticData(LabeledDataset(x, y, z), x_cdf, x_cdf, y_cdf)


def sample_multiplicative(n: int, rng, d: int = 100, x_effect: float = 1.0,
                          coef_rng: RngStream = RngStream(0), z_var: float = 0.01,
                          eps_var: float = 0.01) -> SyntheticData:
    """y = 4 beta_1 z_1 x + 4 beta_2 z_2 + eps with x ~ N(0, 1) independent of z."""
    beta = sorted_normal_coefficients(d, coef_rng)
    g = as_generator(rng)
    z = _normal(g, z_var, (n, d))
    x = g.standard_normal(n)
    b1 = 4.0 * beta[0] * x_effect
    y = b1 * z[:, 0] * x + 4.0 * beta[1] * z[:, 1] + _normal(g, eps_var, n)
    x_cdf = OracleGaussianCdf(lambda z: np.zeros(z.shape[0]), 1.0)
    y_cdf = OracleGaussianCdf(lambda z: 4.0 * beta[1] * z[:, 1],
                              lambda z: np.sqrt(b1 ** 2 * z[:, 0] ** 2 + eps_var))
    return SyntheticData(LabeledDataset(x, y, z), x_cdf, x_cdf, y_cdf)


def sample_di_counterexample(n: int, rng, d: int = 20, sigma_x: float = 1.0, beta1: float = 1.0,
                             x_effect: float = 1.0, coef_rng: RngStream = RngStream(0)) -> SyntheticData:
    """y | x, z ~ N(beta_1 x z_1 + sum_{j>=2} beta_j z_j, 1), x ~ N(0, sigma_x^2), z ~ N(0, I).

    E[y | z] does not involve z_1, so a selector driven by the z -> y lasso never
    picks the z_1 interaction. The exact F(y | z) is Gaussian with variance
    1 + beta_1^2 sigma_x^2 z_1^2.
    """
    if d < 2:
        raise InvalidInputError("need d >= 2")
    rest = coef_rng.generator().standard_normal(d - 1)
    b1 = beta1 * x_effect
    g = as_generator(rng)
    z = g.standard_normal((n, d))
    x = sigma_x * g.standard_normal(n)
    y = b1 * x * z[:, 0] + z[:, 1:] @ rest + g.standard_normal(n)
    x_cdf = OracleGaussianCdf(lambda z: np.zeros(z.shape[0]), sigma_x)
    y_cdf = OracleGaussianCdf(lambda z: z[:, 1:] @ rest,
                              lambda z: np.sqrt(1.0 + b1 ** 2 * sigma_x ** 2 * z[:, 0] ** 2))
    return SyntheticData(LabeledDataset(x, y, z), x_cdf, x_cdf, y_cdf)


def _uniform_cdf(v, z):
    return np.clip(v, 0.0, 1.0)


def sample_modular_pair(n: int, which: str, rng, x_effect: float = 1.0) -> SyntheticData:
    """p1: y = (x + z) mod 1; p2: y = x; x, z ~ Uniform(0, 1) independent.

    Under both, (x, z) and (y, z) are each uniform on the square, so the null
    data look identical. With ``x_effect = 0``: p1 gives y = z and p2 gives an
    independent uniform y.
    """
    g = as_generator(rng)
    x = g.uniform(size=n)
    z = g.uniform(size=n)
    u = g.uniform(size=n)
    if which == "p1":
        y = np.mod(x_effect * x + z, 1.0)
        y_cdf = FunctionCdf(_uniform_cdf if x_effect != 0 else lambda v, z: (v >= z[:, 0]).astype(float))
    elif which == "p2":
        y = x if x_effect != 0 else u
        y_cdf = FunctionCdf(_uniform_cdf)
    else:
        raise InvalidInputError("which must be 'p1' or 'p2'")
    x_cdf = FunctionCdf(_uniform_cdf, lambda z, gen: gen.uniform(size=z.shape[0]),
                        lambda v, z: np.where((v >= 0) & (v <= 1), 0.0, -np.inf))
    return SyntheticData(LabeledDataset(x, y, z), x_cdf, x_cdf, y_cdf)


def _correlated_normals(g, n, corr):
    a = g.standard_normal(n)
    b = corr * a + np.sqrt(1.0 - corr ** 2) * g.standard_normal(n)
    return a, b


def sample_monotone_noise(n: int, rng, form: str = "additive", noise_corr: float = 0.5,
                          x_effect: float = 1.0, z_low: float = 0.5, z_high: float = 2.0) -> SyntheticData:
    """x = f(e, z), y = g(d, z) with f, g strictly increasing in the noise.

    additive:        x = z + e, y = z + d, (e, d) standard normal.
    multiplicative:  x = z e,   y = z d,   e, d ~ Exp(1).
    The noise pair is tied by a Gaussian copula with correlation
    ``noise_corr * x_effect``; z ~ Uniform(z_low, z_high) > 0 is independent of it.
    """
    r = noise_corr * x_effect
    if not -1.0 < r < 1.0:
        raise InvalidInputError("noise correlation must lie in (-1, 1)")
    g = as_generator(rng)
    z = g.uniform(z_low, z_high, n)
    a, b = _correlated_normals(g, n, r)
    if form == "additive":
        x, y = z + a, z + b
        law = FunctionCdf(lambda v, z: ndtr(v - z[:, 0]),
                          lambda z, gen: z[:, 0] + gen.standard_normal(z.shape[0]))
    elif form == "multiplicative":
        to_exp = lambda u: -log_ndtr(-u)  # noqa: E731  # Exp(1) quantile of Phi(u)
        x, y = z * to_exp(a), z * to_exp(b)
        law = FunctionCdf(lambda v, z: -np.expm1(-np.maximum(v, 0.0) / z[:, 0]),
                          lambda z, gen: z[:, 0] * gen.standard_exponential(z.shape[0]))
    else:
        raise InvalidInputError("form must be 'additive' or 'multiplicative'")
    return SyntheticData(LabeledDataset(x, y, z), law, law, law)


def sample_additive_generic(n: int, rng, p: int = 5, noise_corr: float = 0.5,
                            x_effect: float = 1.0) -> SyntheticData:
    """x = sum tanh(z_j) + e, y = sum z_j^2 + d with corr(e, d) = noise_corr * x_effect."""
    r = noise_corr * x_effect
    g = as_generator(rng)
    z = g.standard_normal((n, p))
    e, dd = _correlated_normals(g, n, r)
    fbar = lambda z: np.tanh(z).sum(axis=1)  # noqa: E731
    gbar = lambda z: (z ** 2).sum(axis=1)  # noqa: E731
    x_cdf = OracleGaussianCdf(fbar, 1.0)
    return SyntheticData(LabeledDataset(fbar(z) + e, gbar(z) + dd, z), x_cdf, x_cdf,
                         OracleGaussianCdf(gbar, 1.0))


# ---------------------------------------------------------------- mixture of AR(1) Gaussians


@dataclass(frozen=True)
class GmmJointSpec:
    """Mixture of AR(1) Gaussians: component k has mean levels[k] * 1 and
    covariance rho_k^|i - j|."""

    d: int = 30
    weights: tuple[float, ...] = (0.4, 0.3, 0.2, 0.1)
    levels: tuple[float, ...] = (0.0, 20.0, 40.0, 60.0)
    rhos: tuple[float, ...] = (0.7, 0.6, 0.5, 0.4)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if self.d < 2:
            raise InvalidInputError("d must be >= 2")
        if not (len(self.weights) == len(self.levels) == len(self.rhos)):
            raise InvalidInputError("weights, levels and rhos differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInputError("weights must lie on the simplex")
        if any(abs(r) >= 1 for r in self.rhos):
            raise InvalidInputError("AR correlations must satisfy |rho| < 1")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def mean(self, k: int) -> np.ndarray:
        return np.full(self.d, float(self.levels[k]))

    def covariance(self, k: int) -> np.ndarray:
        lag = np.abs(np.subtract.outer(np.arange(self.d), np.arange(self.d)))
        return float(self.rhos[k]) ** lag


def sample_gmm_ar(n: int, spec: GmmJointSpec, rng) -> np.ndarray:
    """Draw n rows; each component is a stationary unit-variance AR(1) chain."""
    g = as_generator(rng)
    comp = g.choice(spec.n_components, size=n, p=np.asarray(spec.weights))
    rho = np.asarray(spec.rhos)[comp]
    e = g.standard_normal((n, spec.d))
    x = np.empty((n, spec.d))
    x[:, 0] = e[:, 0]
    scale = np.sqrt(1.0 - rho ** 2)
    for i in range(1, spec.d):
        x[:, i] = rho * x[:, i - 1] + scale * e[:, i]
    return x + np.asarray(spec.levels)[comp][:, None]


class GmmConditional:
    """Exact law of x_j given x_{-j} under a :class:`GmmJointSpec`.

    Per component the conditional is Gaussian (Schur complement); the
    component weights are the prior weights reweighted by each component's
    marginal density of x_{-j}. ``z`` is the (N, d - 1) matrix of the other
    coordinates in their original order.
    """

    def __init__(self, spec: GmmJointSpec, j: int):
        if not 0 <= j < spec.d:
            raise InvalidInputError(f"coordinate {j} out of range")
        self.spec = spec
        self.j = j

    @cached_property
    def _parts(self):
        spec, j = self.spec, self.j
        rest = np.delete(np.arange(spec.d), j)
        parts = []
        for k in range(spec.n_components):
            S = spec.covariance(k)
            S_rr = S[np.ix_(rest, rest)]
            S_jr = S[j, rest]
            chol = cho_factor(S_rr, lower=True)
            gain = cho_solve(chol, S_jr)
            var = float(S[j, j] - S_jr @ gain)
            if var <= 0:
                raise InvalidInputError("singular conditional covariance")
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
            parts.append((float(spec.levels[k]), chol, gain, np.sqrt(var), logdet))
        return parts

    def _mixture(self, z):
        """Per-row component weights, means and stdevs (each (N, K))."""
        z = _as_matrix(z)
        if z.shape[1] != self.spec.d - 1:
            raise InvalidInputError(f"expected {self.spec.d - 1} conditioning columns")
        logw, means, sds = [], [], []
        for k, (mu, chol, gain, sd, logdet) in enumerate(self._parts):
            c = z - mu
            quad = np.einsum("ij,ij->i", c, cho_solve(chol, c.T).T)
            logw.append(np.log(self.spec.weights[k]) - 0.5 * (quad + logdet + c.shape[1] * LOG_2PI)
                        if self.spec.weights[k] > 0 else np.full(z.shape[0], -np.inf))
            means.append(mu + c @ gain)
            sds.append(np.full(z.shape[0], sd))
        logw = np.column_stack(logw)
        w = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
        return w, np.column_stack(means), np.column_stack(sds)

    def cdf(self, v, z):
        w, m, s = self._mixture(z)
        return np.clip(np.sum(w * ndtr((np.asarray(v, dtype=float)[:, None] - m) / s), axis=1), 0.0, 1.0)

    def log_density(self, v, z):
        w, m, s = self._mixture(z)
        r = (np.asarray(v, dtype=float)[:, None] - m) / s
        with np.errstate(divide="ignore"):
            return logsumexp(np.log(w) - 0.5 * r * r - np.log(s) - 0.5 * LOG_2PI, axis=1)

    def sample(self, z, rng):
        g = as_generator(rng)
        w, m, s = self._mixture(z)
        u = g.uniform(size=w.shape[0])
        comp = np.minimum((np.cumsum(w, axis=1) < u[:, None]).sum(axis=1), w.shape[1] - 1)
        rows = np.arange(w.shape[0])
        return m[rows, comp] + s[rows, comp] * g.standard_normal(w.shape[0])

    def at(self, z):
        w, m, s = self._mixture(z)
        return lambda v: np.clip(np.sum(w * ndtr((np.asarray(v, dtype=float)[:, None] - m) / s), axis=1), 0.0, 1.0)


def gmm_conditional_sampler(spec: GmmJointSpec, j: int) -> GmmConditional:
    return GmmConditional(spec, j)


def draw_non_nulls(d: int, count: int, coef_rng: RngStream, magnitude: float = 3.0):
    """Random non-null set of the given size with +-magnitude (Rademacher) coefficients."""
    if not 0 <= count <= d:
        raise InvalidInputError("non-null count must lie in [0, d]")
    g = coef_rng.generator()
    idx = np.sort(g.choice(d, size=count, replace=False))
    beta = np.zeros(d)
    beta[idx] = magnitude * g.choice([-1.0, 1.0], size=count)
    return idx, beta


def sample_mixture_ar_cvs(n: int, spec: GmmJointSpec, rng, non_null_count: int = 6,
                          coef_rng: RngStream = RngStream(0), x_effect: float = 1.0) -> SyntheticData:
    """Covariates from the AR mixture; y | x ~ N(<x, beta>, 1) with a sparse +-3 beta."""
    idx, beta = draw_non_nulls(spec.d, non_null_count, coef_rng)
    g = as_generator(rng)
    x = sample_gmm_ar(n, spec, g)
    y = x @ (x_effect * beta) + g.standard_normal(n)
    samplers = [gmm_conditional_sampler(spec, j) for j in range(spec.d)]
    truth = GroundTruth(idx if x_effect != 0 else np.array([], dtype=np.int64), samplers)
    return SyntheticData(truth=truth, covariates=x, response=y)


def semi_synthetic_response(x, m: int, rng, coef_rng=None, x_effect: float = 1.0):
    """Sum over groups of 4 coordinates of two linear terms, one product term and a tanh term.

    Returns (y, GroundTruth) with the first m coordinates important; noise is N(0, 1).
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    if m < 0 or m > d or m % 4:
        raise InvalidInputError("m must be a multiple of 4 in [0, d]")
    g = as_generator(rng)
    cg = as_generator(coef_rng) if coef_rng is not None else g
    y = g.standard_normal(x.shape[0])
    for k in range(m // 4):
        p1, p2 = cg.normal(1.0, 1.0, 2)
        p3, p4, p5, p6 = cg.normal(2.0, 1.0, 4)
        a, b, c, e = (x[:, 4 * k + i] for i in range(4))
        y = y + x_effect * (p1 * a + p3 * b + p4 * a * b + p5 * np.tanh(p2 * c + p6 * e))
    non_null = np.arange(m) if x_effect != 0 else np.array([], dtype=np.int64)
    return y, GroundTruth(non_null)


def sample_semi_synthetic(n: int, spec: GmmJointSpec, rng, m: int = 8,
                          coef_rng: RngStream = RngStream(0), x_effect: float = 1.0) -> SyntheticData:
    """Gene-like covariates from the AR mixture plus the nonlinear semi-synthetic response."""
    g = as_generator(rng)
    x = sample_gmm_ar(n, spec, g)
    y, truth = semi_synthetic_response(x, m, g, coef_rng.generator(), x_effect)
    truth.samplers = [gmm_conditional_sampler(spec, j) for j in range(spec.d)]
    return SyntheticData(truth=truth, covariates=x, response=y)


# ---------------------------------------------------------------- registry


@dataclass(frozen=True)
class VariantInfo:
    build: Callable[..., SyntheticData]
    defaults: dict
    multi: bool
    summary: str


def _gmm_spec(p):
    return GmmJointSpec(int(p["d"]), tuple(p["weights"]), tuple(p["levels"]), tuple(p["rhos"]))


_GMM_DEFAULTS = {"d": 30, "weights": [0.4, 0.3, 0.2, 0.1], "levels": [0.0, 20.0, 40.0, 60.0],
                 "rhos": [0.7, 0.6, 0.5, 0.4]}

VARIANTS: dict[str, VariantInfo] = {
    "univariate_gaussian": VariantInfo(
        lambda n, g, c, p: sample_univariate_gaussian(n, g, p["x_effect"]),
        {"x_effect": 1.0}, False, "z ~ N(0,.1), x|z ~ N(z,.1), y ~ N(x+z,.1)"),
    "non_gaussian_cubic": VariantInfo(
        lambda n, g, c, p: sample_non_gaussian(n, g, int(p["d"]), p["x_effect"], int(p["n_signal"]), c),
        {"d": 100, "x_effect": 1.0, "n_signal": 10}, False, "y = (x + eps + z beta)^3"),
    "multiplicative": VariantInfo(
        lambda n, g, c, p: sample_multiplicative(n, g, int(p["d"]), p["x_effect"], c),
        {"d": 100, "x_effect": 1.0}, False, "y = 4 b1 z1 x + 4 b2 z2 + eps, x independent of z"),
    "di_counterexample": VariantInfo(
        lambda n, g, c, p: sample_di_counterexample(n, g, int(p["d"]), p["sigma_x"], p["beta1"],
                                                    p["x_effect"], c),
        {"d": 20, "sigma_x": 1.0, "beta1": 1.0, "x_effect": 1.0}, False,
        "y ~ N(b1 x z1 + sum_{j>=2} b_j z_j, 1); invisible to the interaction lasso"),
    "mixture_ar_cvs": VariantInfo(
        lambda n, g, c, p: sample_mixture_ar_cvs(n, _gmm_spec(p), g, int(p["non_null_count"]), c,
                                                 p["x_effect"]),
        {**_GMM_DEFAULTS, "non_null_count": 6, "x_effect": 1.0}, True,
        "AR(1) Gaussian mixture covariates, y ~ N(<x, beta>, 1) with sparse +-3 beta"),
    "semi_synthetic": VariantInfo(
        lambda n, g, c, p: sample_semi_synthetic(n, _gmm_spec(p), g, int(p["m"]), c, p["x_effect"]),
        {**_GMM_DEFAULTS, "m": 8, "x_effect": 1.0}, True,
        "AR mixture covariates, nonlinear response on the first m coordinates"),
    "modular_p1": VariantInfo(
        lambda n, g, c, p: sample_modular_pair(n, "p1", g, p["x_effect"]),
        {"x_effect": 1.0}, False, "y = (x + z) mod 1, x, z uniform"),
    "modular_p2": VariantInfo(
        lambda n, g, c, p: sample_modular_pair(n, "p2", g, p["x_effect"]),
        {"x_effect": 1.0}, False, "y = x, x, z uniform"),
    "monotone_noise": VariantInfo(
        lambda n, g, c, p: sample_monotone_noise(n, g, p["form"], p["noise_corr"], p["x_effect"]),
        {"form": "additive", "noise_corr": 0.5, "x_effect": 1.0}, False,
        "x = f(e, z), y = g(d, z), monotone in the noise; copula-linked (e, d)"),
    "additive_generic": VariantInfo(
        lambda n, g, c, p: sample_additive_generic(n, g, int(p["p"]), p["noise_corr"], p["x_effect"]),
        {"p": 5, "noise_corr": 0.5, "x_effect": 1.0}, False,
        "x = sum tanh(z) + e, y = sum z^2 + d with dependent (e, d)"),
}


@dataclass(frozen=True)
class DgpSpec:
    variant: str
    params: dict = field(default_factory=dict)
    coefficient_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown DGP variant {self.variant!r}")
        unknown = set(self.params) - set(VARIANTS[self.variant].defaults)
        if unknown:
            raise InvalidInputError(f"unknown parameters for {self.variant}: {sorted(unknown)}")

    @property
    def info(self) -> VariantInfo:
        return VARIANTS[self.variant]

    @property
    def is_selection(self) -> bool:
        return self.info.multi

    def resolved_params(self) -> dict:
        return {**self.info.defaults, **self.params}

    def sample(self, n: int, rng) -> SyntheticData:
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        return self.info.build(n, as_generator(rng), RngStream(self.coefficient_seed),
                               self.resolved_params())


def list_dgps() -> list[tuple[str, str]]:
    return [(name, info.summary) for name, info in VARIANTS.items()]

