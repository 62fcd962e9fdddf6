"""FDR-controlled variable selection over per-coordinate CRT p-values."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cdf import CdfSampler, fit_mdn
from .data import LabeledDataset, RngStream, SplitSpec, split_indices
from .errors import DietError, InvalidInputError, TaskError
from .methods import MethodSettings, run_method


@dataclass(frozen=True, eq=False)
class PValueVector:
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all((v >= 0.0) & (v <= 1.0)):
            raise InvalidInputError("p-values must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=bool).reshape(-1)
            if lab.shape != v.shape:
                raise InvalidInputError("labels and p-values differ in length")
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[int, ...]
    threshold: float
    nominal_fdr: float


def _as_values(p) -> np.ndarray:
    return p.values if isinstance(p, PValueVector) else PValueVector(p).values


def _step_up(p: np.ndarray, level: float, nominal: float) -> SelectionResult:
    d = p.shape[0]
    if d == 0:
        return SelectionResult((), 0.0, nominal)
    order = np.sort(p)
    ok = np.flatnonzero(order <= level * np.arange(1, d + 1) / d)
    if ok.size == 0:
        return SelectionResult((), 0.0, nominal)
    cut = float(order[ok[-1]])
    return SelectionResult(tuple(int(i) for i in np.flatnonzero(p <= cut)), cut, nominal)


def bh_select(p, alpha: float) -> SelectionResult:
    """Benjamini-Hochberg step-up at level alpha."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie in (0, 1)")
    return _step_up(_as_values(p), alpha, alpha)


def by_select(p, alpha: float) -> SelectionResult:
    """Benjamini-Yekutieli: BH at alpha / H_d, valid under arbitrary dependence."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie in (0, 1)")
    v = _as_values(p)
    harmonic = float(np.sum(1.0 / np.arange(1, v.shape[0] + 1))) if v.shape[0] else 1.0
    return _step_up(v, alpha / harmonic, alpha)


def _selected(selection) -> set[int]:
    return set(selection.selected if isinstance(selection, SelectionResult) else selection)


def _non_nulls(truth) -> set[int]:
    t = np.asarray(truth)
    return set(np.flatnonzero(t).tolist()) if t.dtype == bool else set(t.tolist())


def fdp(selection, truth) -> float:
    """|selected nulls| / max(1, |selected|); ``truth`` is a boolean mask or non-null indices."""
    sel = _selected(selection)
    return len(sel - _non_nulls(truth)) / max(1, len(sel))


def power_metric(selection, truth) -> float:
    """|selected non-nulls| / max(1, |non-nulls|)."""
    nn = _non_nulls(truth)
    return len(_selected(selection) & nn) / max(1, len(nn))


@dataclass(frozen=True)
class CvsConfig:
    num_nulls: int = 2000
    rng: RngStream = field(default_factory=lambda: RngStream(0))
    settings: MethodSettings = field(default_factory=MethodSettings)
    train_fraction: float = 0.5


def fit_coordinate_sampler(covariates, j: int, settings: MethodSettings, rng: RngStream) -> CdfSampler:
    """An MDN for x_j | x_{-j}, wrapped as a sampler."""
    x = np.asarray(covariates, dtype=float)
    model = fit_mdn(x[:, j], np.delete(x, j, axis=1), settings.mdn, settings.train, rng)
    return CdfSampler(model)


def cvs_run(covariates, y, samplers, method: str | Callable, cfg: CvsConfig,
            labels=None) -> PValueVector:
    """One CRT p-value per coordinate for x_j independent of y given x_{-j}.

    ``samplers[j]`` must draw from p(x_j | x_{-j}); with ``samplers=None`` the
    rows are split, an MDN sampler is fit on the first part for each j and the
    test runs on the second. Coordinate j uses sub-stream ``cfg.rng.child(j)``.
    """
    x = np.asarray(covariates, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[1] < 2:
        raise InvalidInputError("covariates must be an N x d matrix (d >= 2) matching y")
    d = x.shape[1]
    if samplers is not None and len(samplers) != d:
        raise InvalidInputError("need one sampler per coordinate")
    rows = None
    if samplers is None:
        fit_rows, rows = split_indices(x.shape[0], SplitSpec(cfg.train_fraction, cfg.rng.child(d)))
    out = np.empty(d)
    for j in range(d):
        rng = cfg.rng.child(j)
        try:
            if samplers is None:
                sampler = fit_coordinate_sampler(x[fit_rows], j, cfg.settings, rng.child(9))
                xs, ys = x[rows], y[rows]
            else:
                sampler, xs, ys = samplers[j], x, y
            data = LabeledDataset(xs[:, j], ys, np.delete(xs, j, axis=1))
            if callable(method):
                out[j] = float(method(data, sampler, rng))
            else:
                out[j] = run_method(method, data, sampler, rng, cfg.num_nulls, cfg.settings)
        except DietError as exc:
            raise TaskError(str(exc), "coordinate", j) from exc
    return PValueVector(out, labels)
