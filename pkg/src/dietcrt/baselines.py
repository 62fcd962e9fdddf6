"""Comparison CRTs: the lasso-residual d0-CRT, the interaction dI-CRT, and the
cross-validated holdout randomization test (HRT).

Stream layout (children of ``cfg.rng``) mirrors :func:`dietcrt.crt.diet_test`:
0 = the z -> y fit, 1 = the z -> x fit and its x~ training draws, 2.m = null m.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from .crt import CrtConfig, CrtResult, crt_pvalue, draw_null_x, generic_crt, null_stream
from .cdf import ConditionalSampler
from .data import LabeledDataset, RngStream, SplitSpec, split_indices, standardize_columns
from .errors import DegenerateStatisticWarning, InvalidInputError
from .lasso import CvSpec, LassoFit, cv_errors, fit_lasso, fold_labels, lasso_cv
from .nn import MLP, NetworkSpec, TrainConfig, squared_loss, train

DI_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
UNSEEN_CLASS_LOSS = 700.0


def _cv_for(cv: CvSpec, key: int) -> CvSpec:
    return CvSpec(cv.folds, cv.lambda_grid, cv.rng.child(key))


def fit_null_legal_lassos(d: LabeledDataset, sampler: ConditionalSampler, rng: RngStream,
                          cv: CvSpec) -> tuple[LassoFit, LassoFit]:
    """theta: z -> y on observed data; eta: z -> x~ on sampler draws (observed x unused)."""
    theta = lasso_cv(d.z, d.y, _cv_for(cv, 0))
    x_tilde = draw_null_x(d, sampler, rng.child(1))
    eta = lasso_cv(d.z, x_tilde, _cv_for(cv, 1))
    return theta, eta


# ---------------------------------------------------------------- d0-CRT


def d0_statistic(d: LabeledDataset, theta: LassoFit, eta: LassoFit) -> float:
    """(sum ry * rx / sum rx^2)^2 with lasso residuals ry = y - z theta, rx = x - z eta."""
    ry = d.y - theta.predict(d.z)
    rx = d.x - eta.predict(d.z)
    den = float(rx @ rx)
    if den <= 1e-12:
        warnings.warn("x-residuals vanish; d0 statistic set to 0", DegenerateStatisticWarning)
        return 0.0
    return float((ry @ rx / den) ** 2)


def d0_crt_test(d: LabeledDataset, sampler: ConditionalSampler, cfg: CrtConfig,
                cv: CvSpec | None = None) -> CrtResult:
    cv = cv or CvSpec(rng=cfg.rng.child(0))
    theta, eta = fit_null_legal_lassos(d, sampler, cfg.rng, cv)
    res = generic_crt(d, sampler, lambda ds: d0_statistic(ds, theta, eta), cfg)
    res.details.update(theta=theta, eta=eta)
    return res


# ---------------------------------------------------------------- dI-CRT


def default_k(p: int) -> int:
    return min(max(math.ceil(2.0 * math.log(p)), 1), p) if p > 1 else 1


@dataclass(frozen=True)
class DiConfig:
    k: int | None = None
    interaction_lambda_grid: tuple[float, ...] = DI_LAMBDA_GRID
    folds: int = 5

    def k_for(self, p: int) -> int:
        k = default_k(p) if self.k is None else self.k
        if not 1 <= k <= p:
            raise InvalidInputError(f"k must lie in [1, {p}], got {k}")
        return k


def select_top_k(theta: LassoFit | np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest |theta_j|, ties to the smaller index, in ascending order."""
    coef = theta.coefficients if isinstance(theta, LassoFit) else np.asarray(theta, dtype=float)
    if not 1 <= k <= coef.shape[0]:
        raise InvalidInputError(f"k must lie in [1, {coef.shape[0]}]")
    return np.sort(np.argsort(-np.abs(coef), kind="stable")[:k])


def interaction_features(d: LabeledDataset, eta: LassoFit, top_k) -> np.ndarray:
    rx = d.x - eta.predict(d.z)
    return np.column_stack([rx] + [rx * d.z[:, j] for j in top_k])


def di_statistic(d: LabeledDataset, theta: LassoFit, eta: LassoFit, top_k,
                 lambda_grid=DI_LAMBDA_GRID, labels=None, folds: int = 5,
                 rng: RngStream | None = None) -> float:
    """beta^2 + (1/k) sum_j beta_j^2 from a lasso of (y - z theta) on rx and rx * z_j.

    ``labels`` fixes the CV folds; pass the same labels for the observed and
    null datasets so every statistic is computed the same way.
    """
    top_k = np.asarray(top_k)
    ry = d.y - theta.predict(d.z)
    F = interaction_features(d, eta, top_k)
    if labels is None:
        labels = fold_labels(d.n_rows, folds, rng or RngStream(0))
    lams = np.asarray(lambda_grid, dtype=float)
    if np.all(standardize_columns(F).constant):
        return 0.0
    err = cv_errors(F, ry, lams, labels)
    best = min(range(lams.shape[0]), key=lambda i: (err[i], -lams[i]))
    beta = fit_lasso(F, ry, float(lams[best])).coefficients
    return float(beta[0] ** 2 + np.sum(beta[1:] ** 2) / len(top_k))


def di_crt_test(d: LabeledDataset, sampler: ConditionalSampler, cfg: CrtConfig,
                cv: CvSpec | None = None, dicfg: DiConfig = DiConfig()) -> CrtResult:
    """theta, eta and S_k fit once; the interaction lasso is refit for every dataset."""
    cv = cv or CvSpec(rng=cfg.rng.child(0))
    theta, eta = fit_null_legal_lassos(d, sampler, cfg.rng, cv)
    top = select_top_k(theta, dicfg.k_for(d.z_dim))
    labels = fold_labels(d.n_rows, dicfg.folds, cfg.rng.child(3))
    stat = lambda ds: di_statistic(ds, theta, eta, top, dicfg.interaction_lambda_grid, labels)  # noqa: E731
    res = generic_crt(d, sampler, stat, cfg)
    res.details.update(theta=theta, eta=eta, top_k=top)
    return res


# ---------------------------------------------------------------- predictive networks


@dataclass(frozen=True)
class RegressorSpec:
    hidden: tuple[int, ...] = (64,) * 6
    normalization: str = "batch_norm"
    train: TrainConfig = field(default_factory=TrainConfig)


def softmax_xent(outputs, targets):
    """Mean cross-entropy of integer class targets under softmax(outputs)."""
    t = np.asarray(targets).astype(np.int64).reshape(-1)
    logp = log_softmax(outputs, axis=1)
    rows = np.arange(t.shape[0])
    grad = np.exp(logp)
    grad[rows, t] -= 1.0
    return float(-np.mean(logp[rows, t])), grad / t.shape[0]


@dataclass
class Predictor:
    """A trained network on standardized inputs; squared loss or class log-prob."""

    network: MLP
    in_mean: np.ndarray
    in_scale: np.ndarray
    loss: str
    t_loc: float = 0.0
    t_scale: float = 1.0
    classes: np.ndarray | None = None

    def _raw(self, inputs):
        return self.network.forward((inputs - self.in_mean) / self.in_scale, mode="eval")

    def predict(self, inputs) -> np.ndarray:
        out = self._raw(inputs)
        if self.loss == "squared":
            return out[:, 0] * self.t_scale + self.t_loc
        return self.classes[np.argmax(out, axis=1)]

    def pointwise_loss(self, inputs, targets) -> np.ndarray:
        """(y - y_hat)^2, or -log p(y) for classification; unseen classes cost UNSEEN_CLASS_LOSS."""
        targets = np.asarray(targets, dtype=float)
        if self.loss == "squared":
            return (targets - self.predict(inputs)) ** 2
        logp = log_softmax(self._raw(inputs), axis=1)
        pos = np.searchsorted(self.classes, targets)
        pos = np.clip(pos, 0, len(self.classes) - 1)
        known = self.classes[pos] == targets
        out = np.full(targets.shape[0], UNSEEN_CLASS_LOSS)
        out[known] = -logp[np.flatnonzero(known), pos[known]]
        return out


def fit_regressor(inputs, targets, spec: RegressorSpec, rng: RngStream, loss: str = "squared") -> Predictor:
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    st = standardize_columns(inputs)
    if loss == "squared":
        t_loc = float(targets.mean())
        t_scale = float(targets.std()) or 1.0
        fit_targets, width, loss_fn, classes = (targets - t_loc) / t_scale, 1, squared_loss, None
    elif loss == "log_prob":
        classes = np.unique(targets)
        t_loc, t_scale = 0.0, 1.0
        fit_targets, width, loss_fn = np.searchsorted(classes, targets), len(classes), softmax_xent
    else:
        raise InvalidInputError(f"unknown loss {loss!r}")
    net = MLP(NetworkSpec((inputs.shape[1], *spec.hidden, width), normalization=spec.normalization,
                          init_seed=rng.child(0)))
    t = spec.train
    cfg = TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.early_stop_patience,
                      t.validation_fraction, rng.child(1))
    train(net, cfg, loss_fn, st.values, fit_targets)
    return Predictor(net, st.means, st.stdevs, loss, t_loc, t_scale, classes)


def _design(x, z):
    return np.column_stack([np.asarray(x, dtype=float).reshape(-1), z])


# ---------------------------------------------------------------- HRT


@dataclass(frozen=True)
class HrtConfig:
    train_fraction: float = 0.5
    regressor: RegressorSpec = field(default_factory=RegressorSpec)
    loss: str = "squared"


@dataclass
class HrtResult:
    p_value: float
    halves: tuple[CrtResult, CrtResult]

    @property
    def p_values(self) -> tuple[float, float]:
        return self.halves[0].p_value, self.halves[1].p_value


def combine_split_pvalues(p1: float, p2: float) -> float:
    return min(1.0, 2.0 * min(p1, p2))


def hrt_pvalue(test_loss: float, null_losses) -> float:
    """Large held-out loss looks null: (1 + #{T >= T_m}) / (M + 1)."""
    return crt_pvalue(-test_loss, -np.asarray(null_losses, dtype=float))


def _hrt_half(fit_part: LabeledDataset, eval_part: LabeledDataset, sampler, cfg: CrtConfig,
              hcfg: HrtConfig, half: int) -> CrtResult:
    model = fit_regressor(_design(fit_part.x, fit_part.z), fit_part.y, hcfg.regressor,
                          cfg.rng.child(1, half), hcfg.loss)
    mean_loss = lambda x: float(np.mean(model.pointwise_loss(_design(x, eval_part.z), eval_part.y)))  # noqa: E731
    t = mean_loss(eval_part.x)
    nulls = np.array([
        mean_loss(draw_null_x(eval_part, sampler, null_stream(cfg.rng, m).child(half)))
        for m in range(cfg.num_nulls)
    ])
    return CrtResult(t, nulls, hrt_pvalue(t, nulls), {"model": model})


def hrt_test(d: LabeledDataset, sampler: ConditionalSampler, cfg: CrtConfig,
             hcfg: HrtConfig = HrtConfig()) -> HrtResult:
    """Two-fold HRT: one network per half, evaluated on the other half."""
    if d.n_rows < 4:
        raise InvalidInputError("HRT needs at least 4 rows")
    a, b = split_indices(d.n_rows, SplitSpec(hcfg.train_fraction, cfg.rng.child(0)))
    A, B = d.subset(a), d.subset(b)
    first = _hrt_half(A, B, sampler, cfg, hcfg, 0)
    second = _hrt_half(B, A, sampler, cfg, hcfg, 1)
    return HrtResult(combine_split_pvalues(first.p_value, second.p_value), (first, second))


# ---------------------------------------------------------------- naive CRT


def naive_crt_test(d: LabeledDataset, sampler: ConditionalSampler, cfg: CrtConfig,
                   spec: RegressorSpec = RegressorSpec()) -> CrtResult:
    """Reference CRT that refits a y ~ (x, z) network for each of the M + 1 datasets.

    The statistic is the negative in-sample mean squared error.
    """
    counter = iter(range(cfg.num_nulls + 1))

    def stat(ds: LabeledDataset) -> float:
        model = fit_regressor(_design(ds.x, ds.z), ds.y, spec, cfg.rng.child(4, next(counter)))
        return -float(np.mean(model.pointwise_loss(_design(ds.x, ds.z), ds.y)))

    return generic_crt(d, sampler, stat, cfg)
