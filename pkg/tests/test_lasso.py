import numpy as np
import pytest

from dietcrt.errors import InvalidInputError
from dietcrt.lasso import (
    CvSpec, default_lambda_grid, fit_lasso, fold_labels, lambda_max, lasso_coordinate_descent, lasso_cv,
    soft_threshold,
)
from dietcrt.data import RngStream


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0


def single_feature_closed_form(x, y, lam):
    n = x.shape[0]
    return soft_threshold(x @ y / n, lam / 2) / (x @ x / n)


def test_single_feature_matches_closed_form():
    g = np.random.default_rng(0)
    for _ in range(10):
        x = g.normal(size=(40, 1))
        y = 2 * x[:, 0] + g.normal(size=40)
        lam = g.uniform(0, 2)
        fit = lasso_coordinate_descent(x, y, lam, tol=1e-12)
        assert abs(fit.coefficients[0] - single_feature_closed_form(x[:, 0], y, lam)) < 1e-8


def test_orthonormal_design_matches_closed_form():
    g = np.random.default_rng(1)
    for _ in range(10):
        n, p = 50, 5
        q, _ = np.linalg.qr(g.normal(size=(n, p)))
        X = q * np.sqrt(n)
        y = X @ g.normal(size=p) + g.normal(size=n)
        lam = g.uniform(0, 1)
        fit = lasso_coordinate_descent(X, y, lam, tol=1e-12)
        assert np.max(np.abs(fit.coefficients - soft_threshold(X.T @ y / n, lam / 2))) < 1e-8


def test_zero_lambda_is_ols():
    g = np.random.default_rng(2)
    X = g.normal(size=(60, 4))
    y = X @ [1.0, -2.0, 0.5, 0.0] + 0.1 * g.normal(size=60)
    fit = lasso_coordinate_descent(X, y, 0.0, tol=1e-14, max_iter=100_000)
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    assert np.max(np.abs(fit.coefficients - ols)) < 1e-8


def test_lambda_max_gives_zero_solution():
    g = np.random.default_rng(3)
    X = g.normal(size=(40, 6))
    y = g.normal(size=40)
    top = lambda_max(X, y)
    assert lasso_coordinate_descent(X, y, top).n_nonzero == 0
    assert lasso_coordinate_descent(X, y, 0.99 * top).n_nonzero >= 1


def test_kkt_conditions():
    g = np.random.default_rng(4)
    X = g.normal(size=(80, 10))
    y = X[:, :3] @ [2.0, -1.0, 1.0] + g.normal(size=80)
    lam = 0.2
    b = lasso_coordinate_descent(X, y, lam, tol=1e-12).coefficients
    grad = 2 * X.T @ (y - X @ b) / 80
    on = b != 0
    assert np.allclose(grad[on], lam * np.sign(b[on]), atol=1e-6)
    assert np.all(np.abs(grad[~on]) <= lam + 1e-6)


def test_matches_scikit_learn():
    lm = pytest.importorskip("sklearn.linear_model")
    g = np.random.default_rng(5)
    X = g.normal(size=(100, 8))
    y = X[:, :2] @ [1.5, -1.0] + g.normal(size=100)
    ours = lasso_coordinate_descent(X, y, 0.1, tol=1e-12).coefficients
    ref = lm.Lasso(alpha=0.05, fit_intercept=False, tol=1e-14, max_iter=100_000).fit(X, y).coef_
    assert np.max(np.abs(ours - ref)) < 1e-8


def test_fit_lasso_recovers_intercept_and_scale():
    g = np.random.default_rng(6)
    X = g.normal(5, 10, size=(200, 2))
    y = 3 + 0.5 * X[:, 0] + 0.01 * g.normal(size=200)
    fit = fit_lasso(X, y, 1e-6)
    assert fit.coefficients[0] == pytest.approx(0.5, abs=1e-3)
    assert fit.intercept == pytest.approx(3.0, abs=0.05)
    assert np.allclose(fit.predict(X), y, atol=0.1)


def test_fit_lasso_constant_column():
    X = np.column_stack([np.ones(20), np.arange(20.0)])
    fit = fit_lasso(X, 2 * np.arange(20.0), 1e-6)
    assert fit.coefficients[0] == 0.0 and fit.coefficients[1] == pytest.approx(2.0, abs=1e-4)


def test_cv_prefers_sparse_models_on_sparse_truth():
    g = np.random.default_rng(7)
    X = g.normal(size=(200, 30))
    y = X[:, 0] * 2 + g.normal(size=200)
    fit = lasso_cv(X, y, CvSpec(rng=RngStream(0)))
    assert fit.coefficients[0] == pytest.approx(2.0, abs=0.3)
    assert fit.n_nonzero < 30


def test_default_grid_and_folds():
    g = np.random.default_rng(8)
    X, y = g.normal(size=(30, 3)), g.normal(size=30)
    grid = default_lambda_grid(X, y)
    assert grid.shape == (30,) and grid[0] / grid[-1] == pytest.approx(1e3)
    labels = fold_labels(23, 5, RngStream(1))
    assert sorted(np.bincount(labels).tolist()) == [4, 4, 5, 5, 5]
    assert np.array_equal(labels, fold_labels(23, 5, RngStream(1)))


def test_validation():
    with pytest.raises(InvalidInputError):
        lasso_coordinate_descent(np.ones((3, 1)), np.ones(3), -1.0)
    with pytest.raises(InvalidInputError):
        lasso_coordinate_descent(np.ones((3, 1)), np.ones(4), 1.0)
    with pytest.raises(InvalidInputError):
        CvSpec(folds=1)
    with pytest.raises(InvalidInputError):
        fold_labels(3, 5, RngStream(0))


def test_collinear_design_converges_to_kkt_point():
    g = np.random.default_rng(9)
    level = g.choice([0.0, 20.0, 40.0], size=(300, 1))
    X = level + g.normal(size=(300, 6))
    X = (X - X.mean(0)) / X.std(0)
    y = X[:, 0] * 3 - X[:, 3] * 3 + g.normal(size=300)
    for lam in (1e-3, 1e-2, 0.1):
        fit = lasso_coordinate_descent(X, y, lam)
        assert fit.converged and fit.n_iter < 2000
        b = fit.coefficients
        grad = 2 * X.T @ (y - X @ b) / 300
        on = b != 0
        assert np.allclose(grad[on], lam * np.sign(b[on]), atol=1e-6)
        assert np.all(np.abs(grad[~on]) <= lam + 1e-6)
