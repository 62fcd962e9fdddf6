"""Marginal dependence measures over pairs of information residuals.

All measures take a :class:`ResidualPairs` and return a float where larger
means more dependent. Mutual information is in nats.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateStatisticWarning, InvalidInputError

DEFAULT_BINS = 10


@dataclass(frozen=True, eq=False)
class ResidualPairs:
    eps: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.eps, dtype=float).reshape(-1)
        d = np.asarray(self.delta, dtype=float).reshape(-1)
        if e.shape != d.shape:
            raise InvalidInputError("eps and delta differ in length")
        for name, a in (("eps", e), ("delta", d)):
            if not np.all((a >= 0.0) & (a <= 1.0)):
                raise InvalidInputError(f"{name} has entries outside [0, 1]")
        object.__setattr__(self, "eps", e)
        object.__setattr__(self, "delta", d)

    def __len__(self):
        return self.eps.shape[0]


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or np.any(c < 0) or not np.all(c == np.round(c)):
            raise InvalidInputError("counts must be a matrix of nonnegative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_labels(cls, a, b) -> "ContingencyTable":
        a = np.asarray(a)
        b = np.asarray(b)
        if a.shape != b.shape:
            raise InvalidInputError("label vectors differ in length")
        _, ia = np.unique(a, return_inverse=True)
        _, ib = np.unique(b, return_inverse=True)
        counts = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
        np.add.at(counts, (ia, ib), 1)
        return cls(counts)


def discretize(values, bins: int) -> np.ndarray:
    """Equal-width bins on [0, 1]; 1.0 falls in the last bin."""
    if bins < 2:
        raise InvalidInputError("bins must be >= 2")
    v = np.asarray(values, dtype=float)
    if not np.all((v >= 0.0) & (v <= 1.0)):
        raise InvalidInputError("values must lie in [0, 1]")
    return np.minimum((v * bins).astype(np.int64), bins - 1)


def entropy(counts) -> float:
    c = np.asarray(counts, dtype=float)
    c = c[c > 0]
    n = c.sum()
    if n == 0:
        return 0.0
    p = c / n
    return float(-np.sum(p * np.log(p)))


def mutual_information(t: ContingencyTable) -> float:
    """Plug-in MI: sum_ij (n_ij / n) log(n_ij n / (r_i c_j)); empty cells add 0."""
    c = t.counts.astype(float)
    n = c.sum()
    if n <= 0:
        raise InvalidInputError("table is empty")
    r = c.sum(axis=1, keepdims=True)
    s = c.sum(axis=0, keepdims=True)
    nz = c > 0
    mi = np.sum(c[nz] / n * np.log((c * n)[nz] / (r * s)[nz]))
    return max(float(mi), 0.0)


def expected_mi(row_sums, col_sums, n=None) -> float:
    """E[MI] under random permutation with fixed margins (hypergeometric cells).

    Sums, for each cell, over feasible counts n_ij in
    [max(1, a_i + b_j - n), min(a_i, b_j)] with probabilities in log space.
    """
    a = np.asarray(row_sums, dtype=np.int64)
    b = np.asarray(col_sums, dtype=np.int64)
    if n is None:
        n = int(a.sum())
    n = int(n)
    if n <= 0:
        raise InvalidInputError("n must be positive")
    if a.sum() != n or b.sum() != n:
        raise InvalidInputError("row and column sums must both total n")
    a = a[a > 0]
    b = b[b > 0]
    if a.size <= 1 or b.size <= 1:
        return 0.0
    ai = a[:, None]
    bj = b[None, :]
    lo = np.maximum(1, ai + bj - n)
    hi = np.minimum(ai, bj)
    width = int((hi - lo).max()) + 1
    nij = lo[..., None] + np.arange(width)
    valid = nij <= hi[..., None]
    nij = np.where(valid, nij, 1)
    A = ai[..., None]
    B = bj[..., None]
    log_p = (
        gammaln(A + 1) + gammaln(B + 1) + gammaln(n - A + 1) + gammaln(n - B + 1)
        - gammaln(n + 1) - gammaln(nij + 1) - gammaln(A - nij + 1) - gammaln(B - nij + 1)
        - gammaln(n - A - B + nij + 1)
    )
    term = nij / n * (np.log(n) + np.log(nij) - np.log(A) - np.log(B)) * np.exp(log_p)
    return float(np.sum(np.where(valid, term, 0.0)))


def adjusted_mi(t: ContingencyTable) -> float:
    """(MI - E[MI]) / (max(H_rows, H_cols) - E[MI]); 0 when the denominator <= 1e-12."""
    c = t.counts
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    mi = mutual_information(t)
    emi = expected_mi(rows, cols, t.n)
    denom = max(entropy(rows), entropy(cols)) - emi
    if denom <= 1e-12:
        return 0.0
    return float((mi - emi) / denom)


def contingency(r: ResidualPairs, bins: int) -> ContingencyTable:
    ie = discretize(r.eps, bins)
    idl = discretize(r.delta, bins)
    counts = np.zeros((bins, bins), dtype=np.int64)
    np.add.at(counts, (ie, idl), 1)
    return ContingencyTable(counts)


def ami_statistic(r: ResidualPairs, bins: int = DEFAULT_BINS) -> float:
    if len(r) < bins:
        raise InvalidInputError("need at least `bins` residual pairs")
    return adjusted_mi(contingency(r, bins))


def lr_mi_statistic(r: ResidualPairs, grid_bins: int = 8) -> float:
    """Mean log p(e, d) / (p(e) p(d)) under an add-one smoothed 2-D histogram."""
    if len(r) < grid_bins ** 2:
        raise InvalidInputError("need at least grid_bins^2 residual pairs")
    ie = discretize(r.eps, grid_bins)
    idl = discretize(r.delta, grid_bins)
    counts = np.ones((grid_bins, grid_bins))
    np.add.at(counts, (ie, idl), 1)
    joint = counts / counts.sum()
    pe = joint.sum(axis=1)
    pd = joint.sum(axis=0)
    return float(np.mean(np.log(joint[ie, idl] / (pe[ie] * pd[idl]))))


def pearson_sq(r: ResidualPairs) -> float:
    """Squared sample correlation; a constant input gives 0 with a warning."""
    e = r.eps - r.eps.mean()
    d = r.delta - r.delta.mean()
    se = np.sqrt(np.sum(e * e))
    sd = np.sqrt(np.sum(d * d))
    if se <= 1e-12 or sd <= 1e-12:
        warnings.warn("constant residual vector; pearson_sq set to 0", DegenerateStatisticWarning)
        return 0.0
    rho = np.sum(e * d) / (se * sd)
    return float(min(rho * rho, 1.0))


STATISTICS = {
    "ami": ami_statistic,
    "lr_mi": lr_mi_statistic,
    "pearson_sq": pearson_sq,
}


def get_statistic(name: str, bins: int = DEFAULT_BINS):
    if name == "ami":
        return lambda r: ami_statistic(r, bins)
    if name == "lr_mi":
        return lambda r: lr_mi_statistic(r, bins)
    if name == "pearson_sq":
        return pearson_sq
    raise InvalidInputError(f"unknown statistic {name!r}; choose from {sorted(STATISTICS)}")
