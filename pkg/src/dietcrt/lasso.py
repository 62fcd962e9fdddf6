"""Lasso by cyclic coordinate descent, plus K-fold cross-validation.

Objective, used everywhere in the package::

    (1/N) * ||y - X b||^2 + lam * ||b||_1

so the zero solution is optimal exactly when lam >= 2 max_j |<x_j, y>| / N.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import RngStream, standardize_columns
from .errors import InvalidInputError


@dataclass
class LassoFit:
    coefficients: np.ndarray
    intercept: float = 0.0
    lam: float = 0.0
    n_iter: int = 0
    converged: bool = True

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return X @ self.coefficients + self.intercept

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coefficients))


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lambda_max(X, y) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(2.0 * np.max(np.abs(X.T @ y)) / X.shape[0])


def _check(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise InvalidInputError(f"shape mismatch: X={X.shape}, y={y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidInputError("non-finite data")
    return X, y


def _polish(G, c, half, beta):
    """Exact solution on the current active set and signs, if it satisfies KKT.

    Solves G_AA b_A = c_A - half * sign(b_A); returns None when a sign flips
    or an inactive coordinate violates |c_j - (G b)_j| <= half.
    """
    active = np.flatnonzero(beta)
    if active.size == 0:
        return None
    signs = np.sign(beta[active])
    try:
        b_a = np.linalg.solve(G[np.ix_(active, active)], c[active] - half * signs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.sign(b_a) == signs):
        return None
    out = np.zeros_like(beta)
    out[active] = b_a
    slack = np.abs(c - G @ out)
    slack[active] = 0.0
    if np.any(slack > half * (1.0 + 1e-10) + 1e-14):
        return None
    return out


def _cd_gram(G, c, lam, beta, tol, max_iter):
    """Coordinate descent on the quadratic form b'Gb - 2c'b + lam|b|_1.

    Sweeps only the active set between full sweeps. After each full sweep the
    active set is solved exactly (see :func:`_polish`), which settles nearly
    collinear designs where plain sweeps creep along a flat valley. Also
    stops when a full sweep moves no coefficient by ``tol`` or more.
    """
    p = c.shape[0]
    diag = np.diag(G).copy()
    cols = [G[:, j] for j in range(p)]
    Gb = G @ beta
    half = lam / 2.0
    n_iter = 0

    def sweep(idx):
        delta = 0.0
        for j in idx:
            d = diag[j]
            old = beta[j]
            if d <= 0.0:
                if old != 0.0:
                    Gb[:] -= cols[j] * old
                    beta[j] = 0.0
                continue
            rho = c[j] - Gb[j] + d * old
            if rho > half:
                new = (rho - half) / d
            elif rho < -half:
                new = (rho + half) / d
            else:
                new = 0.0
            if new != old:
                Gb[:] += cols[j] * (new - old)
                beta[j] = new
                delta = max(delta, abs(new - old))
        return delta

    all_idx = range(p)
    while n_iter < max_iter:
        n_iter += 1
        if sweep(all_idx) < tol:
            return beta, n_iter, True
        exact = _polish(G, c, half, beta)
        if exact is not None:
            return exact, n_iter, True
        active = np.flatnonzero(beta)
        inner = 0
        while n_iter < max_iter and inner < 50:
            n_iter += 1
            inner += 1
            if sweep(active) < tol:
                break
    return beta, n_iter, False


def lasso_coordinate_descent(X, y, lam: float, tol: float = 1e-7, max_iter: int = 10_000,
                             warm_start=None) -> LassoFit:
    """Solve the lasso for (standardized X, centered y); no intercept is fit."""
    if lam < 0 or not np.isfinite(lam):
        raise InvalidInputError("lambda must be a nonnegative finite number")
    X, y = _check(X, y)
    n, p = X.shape
    G = X.T @ X / n
    c = X.T @ y / n
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    beta, n_iter, ok = _cd_gram(G, c, lam, beta, tol, max_iter)
    return LassoFit(beta, 0.0, float(lam), n_iter, ok)


def _path(Xs, yc, lams, tol, max_iter):
    n, p = Xs.shape
    G = Xs.T @ Xs / n
    c = Xs.T @ yc / n
    beta = np.zeros(p)
    out = []
    for lam in lams:
        beta, n_iter, ok = _cd_gram(G, c, lam, beta.copy(), tol, max_iter)
        out.append((beta.copy(), n_iter, ok))
    return out


def _unscale(beta, st, y_mean):
    coef = np.where(st.constant, 0.0, beta / st.stdevs)
    return coef, float(y_mean - st.means @ coef)


def fit_lasso(X, y, lam: float, tol: float = 1e-7, max_iter: int = 10_000) -> LassoFit:
    """Lasso on raw data: standardize X, center y, then map back with an intercept."""
    X, y = _check(X, y)
    st = standardize_columns(X)
    fit = lasso_coordinate_descent(st.values, y - y.mean(), lam, tol, max_iter)
    coef, b0 = _unscale(fit.coefficients, st, y.mean())
    return LassoFit(coef, b0, fit.lam, fit.n_iter, fit.converged)


def default_lambda_grid(X, y, n_lambdas: int = 30, ratio: float = 1e-3) -> np.ndarray:
    X, y = _check(X, y)
    st = standardize_columns(X)
    top = lambda_max(st.values, y - y.mean())
    if top <= 0:
        top = 1.0
    return np.geomspace(top, top * ratio, n_lambdas)


@dataclass(frozen=True)
class CvSpec:
    folds: int = 5
    lambda_grid: tuple[float, ...] | None = None
    rng: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        if self.folds < 2:
            raise InvalidInputError("need at least 2 folds")
        if self.lambda_grid is not None and (
            len(self.lambda_grid) == 0 or min(self.lambda_grid) < 0
        ):
            raise InvalidInputError("lambda grid must be nonempty and nonnegative")


def fold_labels(n: int, folds: int, rng: RngStream) -> np.ndarray:
    """Random, nearly equal fold assignment of n rows."""
    if n < folds:
        raise InvalidInputError(f"need at least {folds} rows for {folds}-fold CV")
    labels = np.empty(n, dtype=np.int64)
    for k, idx in enumerate(np.array_split(rng.generator().permutation(n), folds)):
        labels[idx] = k
    return labels


def cv_errors(X, y, lams, labels, tol: float = 1e-7, max_iter: int = 10_000) -> np.ndarray:
    """Mean held-out squared error for every lambda (in the order given)."""
    X, y = _check(X, y)
    lams = np.asarray(lams, dtype=float)
    order = np.argsort(-lams, kind="stable")
    sse = np.zeros(lams.shape[0])
    for k in np.unique(labels):
        tr, te = labels != k, labels == k
        st = standardize_columns(X[tr])
        y_mean = y[tr].mean()
        path = _path(st.values, y[tr] - y_mean, lams[order], tol, max_iter)
        for pos, (beta, _, _) in zip(order, path):
            coef, b0 = _unscale(beta, st, y_mean)
            r = y[te] - X[te] @ coef - b0
            sse[pos] += r @ r
    return sse / X.shape[0]


def lasso_cv(X, y, spec: CvSpec, labels=None, tol: float = 1e-7, max_iter: int = 10_000) -> LassoFit:
    """Pick lambda by K-fold CV (ties go to the larger lambda) and refit on all rows."""
    X, y = _check(X, y)
    lams = np.asarray(spec.lambda_grid if spec.lambda_grid is not None else default_lambda_grid(X, y),
                      dtype=float)
    if labels is None:
        labels = fold_labels(X.shape[0], spec.folds, spec.rng)
    err = cv_errors(X, y, lams, labels, tol, max_iter)
    best = min(range(lams.shape[0]), key=lambda i: (err[i], -lams[i]))
    return fit_lasso(X, y, float(lams[best]), tol, max_iter)
