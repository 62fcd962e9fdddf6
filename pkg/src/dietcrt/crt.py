"""Conditional randomization tests: null datasets, p-values and the DIET procedure.

DIET fits two conditional CDF models exactly once (F(y | z) on observed
(y, z); F(x | z) on x~ drawn from the sampler), turns every dataset into
information residuals with those frozen models, and compares a marginal
dependence measure on the observed residuals with its values on M null
datasets.

Random sub-streams used by :func:`diet_test` (children of ``cfg.crt.rng``):
0 = F(y | z) fit, 1 = F(x | z) fit and its x~ training draws, 2.m = the m-th
null x~ column. Training draws and null draws never share a stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cdf import ConditionalCdf, ConditionalSampler, MdnModel, MdnSpec, fit_mdn_x_given_z, fit_mdn
from .data import LabeledDataset, NullDataset, RngStream
from .dependence import DEFAULT_BINS, ResidualPairs, get_statistic
from .errors import InvalidInputError
from .nn import TrainConfig

NULL_STREAM = 2


@dataclass(frozen=True)
class CrtConfig:
    num_nulls: int = 100
    rng: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        if self.num_nulls < 1:
            raise InvalidInputError("num_nulls must be >= 1")


@dataclass
class CrtResult:
    test_stat: float
    null_stats: np.ndarray
    p_value: float
    details: dict = field(default_factory=dict)

    @property
    def num_nulls(self) -> int:
        return len(self.null_stats)


def crt_pvalue(test_stat: float, null_stats) -> float:
    """(1 + #{m : T <= T_m}) / (M + 1); ties count against rejection."""
    nulls = np.asarray(null_stats, dtype=float).reshape(-1)
    if nulls.size == 0:
        raise InvalidInputError("need at least one null statistic")
    if not (np.isfinite(test_stat) and np.all(np.isfinite(nulls))):
        raise InvalidInputError("statistics must be finite")
    return (1.0 + np.count_nonzero(test_stat <= nulls)) / (nulls.size + 1.0)


def null_stream(rng: RngStream, m: int) -> RngStream:
    return rng.child(NULL_STREAM, m)


def draw_null_x(d: LabeledDataset, sampler: ConditionalSampler, rng: RngStream) -> np.ndarray:
    x = np.asarray(sampler.sample(d.z, rng.generator()), dtype=float).reshape(-1)
    if x.shape[0] != d.n_rows:
        raise InvalidInputError("sampler returned the wrong number of draws")
    return x


def make_null_dataset(d: LabeledDataset, sampler: ConditionalSampler, rng: RngStream) -> NullDataset:
    """Copy (y, z) verbatim and redraw x~_i ~ p(x | z_i) row by row."""
    return NullDataset(d.with_x(draw_null_x(d, sampler, rng)), rng)


def generic_crt(d: LabeledDataset, sampler: ConditionalSampler,
                statistic: Callable[[LabeledDataset], float], cfg: CrtConfig) -> CrtResult:
    """Textbook CRT: evaluate ``statistic`` on the data and on M null datasets."""
    t = float(statistic(d))
    nulls = np.array([
        float(statistic(make_null_dataset(d, sampler, null_stream(cfg.rng, m)).base))
        for m in range(cfg.num_nulls)
    ])
    return CrtResult(t, nulls, crt_pvalue(t, nulls))


@dataclass(frozen=True)
class DietConfig:
    crt: CrtConfig = field(default_factory=CrtConfig)
    mdn: MdnSpec = field(default_factory=MdnSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    statistic: str = "ami"
    bins: int = DEFAULT_BINS
    refresh_x_draws: bool = False


@dataclass
class DietModels:
    x_cdf: ConditionalCdf
    y_cdf: ConditionalCdf

    def fingerprints(self) -> tuple[str, str]:
        return tuple(
            m.fingerprint() if isinstance(m, MdnModel) else repr(id(m)) for m in (self.x_cdf, self.y_cdf)
        )


def fit_diet_models(y, z, sampler: ConditionalSampler, cfg: DietConfig) -> DietModels:
    """Fit F(y | z) on observed (y, z) and F(x | z) on sampler draws.

    Only y and z are accepted, so the observed x column cannot leak into
    either model.
    """
    rng = cfg.crt.rng
    y_model = fit_mdn(y, z, cfg.mdn, cfg.train, rng.child(0))
    x_model = fit_mdn_x_given_z(z, sampler, cfg.mdn, cfg.train, rng.child(1), cfg.refresh_x_draws)
    return DietModels(x_model, y_model)


def _frozen_cdf(model, z):
    if hasattr(model, "at"):
        return model.at(z)
    return lambda v: model.cdf(v, z)


def diet_test(d: LabeledDataset, sampler: ConditionalSampler, cfg: DietConfig,
              models: DietModels | None = None,
              on_evaluate: Callable[[int, DietModels], None] | None = None) -> CrtResult:
    """Run DIET on ``d``.

    Pass ``models`` (e.g. oracle conditional CDFs) to skip fitting. The same
    models produce the residuals for the observed data and every null dataset;
    ``on_evaluate(m, models)`` is called before each of the M + 1 evaluations
    (m = -1 for the observed data).
    """
    fitted = models is None
    if fitted:
        models = fit_diet_models(d.y, d.z, sampler, cfg)
    rho = get_statistic(cfg.statistic, cfg.bins)
    delta = np.clip(models.y_cdf.cdf(d.y, d.z), 0.0, 1.0)
    eps_of = _frozen_cdf(models.x_cdf, d.z)

    def evaluate(m, x):
        if on_evaluate is not None:
            on_evaluate(m, models)
        return float(rho(ResidualPairs(np.clip(eps_of(x), 0.0, 1.0), delta)))

    t = evaluate(-1, d.x)
    nulls = np.array([
        evaluate(m, draw_null_x(d, sampler, null_stream(cfg.crt.rng, m)))
        for m in range(cfg.crt.num_nulls)
    ])
    return CrtResult(t, nulls, crt_pvalue(t, nulls),
                     {"models": models, "model_fits": 2 if fitted else 0})
