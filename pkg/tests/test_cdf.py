import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dietcrt.cdf import (
    FunctionCdf, GmmParams, MdnSpec, OracleGaussianCdf, fit_mdn, fit_mdn_x_given_z,
    fit_mdn_y_given_z, gmm_cdf, gmm_log_density, gmm_sample, head_to_gmm, mdn_nll, mdn_sample,
)
from dietcrt.data import LabeledDataset, RngStream
from dietcrt.errors import InvalidInputError
from dietcrt.nn import TrainConfig

SMALL = MdnSpec(hidden=(32, 32), n_components=5)


def mp_gmm_cdf(w, m, s, v):
    mpmath.mp.dps = 40
    return float(sum(mpmath.mpf(wk) * (1 + mpmath.erf((mpmath.mpf(v) - mk) / (sk * mpmath.sqrt(2)))) / 2
                     for wk, mk, sk in zip(w, m, s)))


def test_gmm_cdf_examples():
    assert gmm_cdf(GmmParams([1.0], [0.0], [1.0]), 0.0) == 0.5
    assert gmm_cdf(GmmParams([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0]), 0.0) == pytest.approx(0.5, abs=1e-15)
    assert gmm_cdf(GmmParams([1.0], [0.0], [1.0]), 1.0) == pytest.approx(0.841345, abs=1e-6)


def test_gmm_cdf_matches_high_precision_erf():
    g = np.random.default_rng(0)
    for _ in range(100):
        k = g.integers(1, 5)
        w = g.dirichlet(np.ones(k))
        m = g.normal(0, 3, k)
        s = g.uniform(0.1, 3, k)
        v = g.normal(0, 4)
        assert abs(gmm_cdf(GmmParams(w, m, s), v) - mp_gmm_cdf(w, m, s, v)) < 1e-9


def test_gmm_params_validation():
    with pytest.raises(InvalidInputError):
        GmmParams([0.5, 0.6], [0, 0], [1, 1])
    with pytest.raises(InvalidInputError):
        GmmParams([1.0], [0.0], [0.0])


def test_gmm_log_density_examples():
    p1 = GmmParams([1.0], [0.0], [1.0])
    assert gmm_log_density(p1, 0.0) == pytest.approx(-0.918938533, abs=1e-9)
    p2 = GmmParams([0.3, 0.7], [0.0, 0.0], [1.0, 1.0])
    assert gmm_log_density(p2, 0.7) == pytest.approx(gmm_log_density(p1, 0.7), abs=1e-12)
    far = gmm_log_density(p1, 50.0)
    assert np.isfinite(far) and far == pytest.approx(-1250.0 - 0.918938533, abs=1e-6)


def random_gmm(seed):
    g = np.random.default_rng(seed)
    k = int(g.integers(1, 6))
    return GmmParams(g.dirichlet(np.ones(k)), g.normal(0, 2, k), g.uniform(0.2, 2.0, k))


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_gmm_cdf_monotone_with_limits(seed):
    p = random_gmm(seed)
    vals = gmm_cdf(p, np.linspace(-20, 20, 1000))
    assert np.all(np.diff(vals) >= 0)
    assert gmm_cdf(p, -1e6) == 0.0 and gmm_cdf(p, 1e6) == pytest.approx(1.0, abs=1e-15)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_gmm_cdf_derivative_is_density(seed):
    p = random_gmm(seed)
    v = np.linspace(-3, 3, 25)
    h = 1e-5
    num = (gmm_cdf(p, v + h) - gmm_cdf(p, v - h)) / (2 * h)
    assert np.allclose(num, np.exp(gmm_log_density(p, v)), atol=1e-6)


def test_mdn_head_gradient_matches_finite_differences():
    g = np.random.default_rng(3)
    raw = g.normal(size=(6, 12))
    t = g.normal(size=6)
    _, grad = mdn_nll(raw, t)
    h = 1e-6
    num = np.zeros_like(raw)
    for idx in np.ndindex(raw.shape):
        up, down = raw.copy(), raw.copy()
        up[idx] += h
        down[idx] -= h
        num[idx] = (mdn_nll(up, t)[0] - mdn_nll(down, t)[0]) / (2 * h)
    err = np.abs(grad - num) / np.maximum(1e-6, np.abs(grad) + np.abs(num))
    assert err.max() < 1e-4


def test_head_link_produces_valid_mixture():
    p = head_to_gmm(np.random.default_rng(0).normal(size=(4, 9)) * 30)
    assert np.allclose(p.weights.sum(axis=1), 1.0) and np.all(p.stdevs >= 1e-3)


def test_mdn_nll_agrees_with_log_density():
    raw = np.random.default_rng(1).normal(size=(5, 6))
    t = np.random.default_rng(2).normal(size=5)
    value, _ = mdn_nll(raw, t)
    assert value == pytest.approx(-np.mean(gmm_log_density(head_to_gmm(raw), t)), abs=1e-12)


def test_gmm_sampling_moments_and_ks():
    p = GmmParams(np.tile([1.0], (100_000, 1)), np.zeros((100_000, 1)), np.ones((100_000, 1)))
    draws = gmm_sample(p, RngStream(0))
    assert abs(draws.mean()) < 0.02
    mix = GmmParams([0.3, 0.7], [-2.0, 1.0], [0.5, 1.0])
    batch = GmmParams(*(np.tile(a, (100_000, 1)) for a in (mix.weights, mix.means, mix.stdevs)))
    d2 = gmm_sample(batch, RngStream(1))
    assert stats.kstest(d2, lambda v: gmm_cdf(mix, v)).statistic < 0.01


def test_gmm_sampling_uses_only_weighted_component():
    p = GmmParams(np.tile([1.0, 0.0], (1000, 1)), np.tile([0.0, 100.0], (1000, 1)), np.ones((1000, 2)))
    assert np.all(gmm_sample(p, RngStream(2)) < 50)


def test_oracle_gaussian_pit_uniform():
    g = np.random.default_rng(4)
    z = g.normal(size=(2000, 1))
    v = z[:, 0] + 0.5 * g.normal(size=2000)
    u = OracleGaussianCdf(lambda z: z[:, 0], 0.5).cdf(v, z)
    assert stats.kstest(u, "uniform").statistic < 1.36 / np.sqrt(2000)


def test_oracle_at_matches_cdf():
    o = OracleGaussianCdf(lambda z: 2 * z[:, 0], lambda z: 1 + z[:, 0] ** 2)
    z = np.random.default_rng(0).normal(size=(7, 1))
    v = np.linspace(-1, 1, 7)
    assert np.array_equal(o.at(z)(v), o.cdf(v, z))


def gaussian_pairs(n=500, seed=0):
    g = np.random.default_rng(seed)
    z = g.normal(0, np.sqrt(0.1), n)
    return z, z + g.normal(0, np.sqrt(0.1), n)


def test_fit_mdn_y_given_z_quality():
    z, y = gaussian_pairs()
    d = LabeledDataset(np.zeros_like(y), y, z)
    model = fit_mdn_y_given_z(d, SMALL, TrainConfig(epochs=100), RngStream(1))
    zt, _ = gaussian_pairs(200, seed=9)
    c = model.cdf(zt, zt)
    assert np.mean((c > 0.35) & (c < 0.65)) >= 0.9


def test_fit_mdn_x_given_z_quality_and_never_reads_x():
    z, _ = gaussian_pairs()
    sampler = OracleGaussianCdf(lambda z: z[:, 0], np.sqrt(0.1))
    m1 = fit_mdn_x_given_z(z, sampler, SMALL, TrainConfig(epochs=100), RngStream(3))
    m2 = fit_mdn_x_given_z(z, sampler, SMALL, TrainConfig(epochs=100), RngStream(3))
    assert m1.fingerprint() == m2.fingerprint()
    zt, _ = gaussian_pairs(200, seed=8)
    c = m1.cdf(zt, zt)
    assert np.mean((c > 0.35) & (c < 0.65)) >= 0.9


def test_fit_mdn_refreshing_draws_differs():
    z, _ = gaussian_pairs(200)
    sampler = OracleGaussianCdf(lambda z: z[:, 0], np.sqrt(0.1))
    cfg = TrainConfig(epochs=5, early_stop_patience=0)
    a = fit_mdn_x_given_z(z, sampler, SMALL, cfg, RngStream(3))
    b = fit_mdn_x_given_z(z, sampler, SMALL, cfg, RngStream(3), refresh_draws=True)
    assert a.fingerprint() != b.fingerprint()


def test_fit_mdn_constant_target():
    z = np.random.default_rng(0).normal(size=(200, 1))
    model = fit_mdn(np.full(200, 3.0), z, SMALL, TrainConfig(epochs=5), RngStream(0))
    p = model.gmm_params(z[:5])
    assert np.all(np.isfinite(p.means)) and np.all(p.stdevs >= 1e-3)
    assert np.all(np.isfinite(model.cdf(np.full(5, 3.0), z[:5])))


def test_mdn_model_at_and_sampling():
    z, y = gaussian_pairs(300)
    model = fit_mdn(y, z, SMALL, TrainConfig(epochs=10), RngStream(0))
    zz = z.reshape(-1, 1)
    assert np.array_equal(model.at(zz)(y), model.cdf(y, zz))
    s1 = mdn_sample(model, zz, RngStream(4))
    assert np.array_equal(s1, mdn_sample(model, zz, RngStream(4))) and s1.shape == (300,)


def test_function_cdf_requires_pieces():
    f = FunctionCdf(lambda v, z: np.clip(v, 0, 1))
    with pytest.raises(NotImplementedError):
        f.sample(np.zeros((2, 1)), RngStream(0))
