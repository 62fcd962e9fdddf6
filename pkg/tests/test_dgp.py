import numpy as np
import pytest
from scipy import stats

from dietcrt.data import RngStream
from dietcrt.dgp import (
    VARIANTS, DgpSpec, GmmJointSpec, draw_non_nulls, gmm_conditional_sampler, list_dgps, sample_di_counterexample,
    sample_gmm_ar, sample_modular_pair, sample_monotone_noise, sample_multiplicative, sample_non_gaussian,
    sample_univariate_gaussian, semi_synthetic_response, sorted_normal_coefficients,
)
from dietcrt.errors import InvalidInputError

N = 10_000


def se(n, var=1.0):
    return 3 * np.sqrt(var / n)


def test_univariate_gaussian_moments():
    s = sample_univariate_gaussian(N, RngStream(0))
    d = s.dataset
    z = d.z[:, 0]
    assert abs(z.mean()) < se(N, 0.1)
    assert abs((d.x - z).mean()) < se(N, 0.1)
    assert abs((d.y - d.x - z).mean()) < se(N, 0.1)
    assert np.cov(d.x, z)[0, 1] == pytest.approx(0.1, abs=0.01)
    assert s.x_cdf.cdf(z[:3], d.z[:3]).tolist() == [0.5, 0.5, 0.5]


def test_non_gaussian_structure():
    beta = sorted_normal_coefficients(100, RngStream(0))
    assert np.all(np.diff(np.abs(beta)) <= 0)
    s = sample_non_gaussian(5000, RngStream(1), coef_rng=RngStream(0))
    d = s.dataset
    signal = d.z[:, :10] @ beta[:10]
    slope = np.polyfit(signal, d.x, 1)[0]
    assert slope == pytest.approx(1.0, abs=0.05)


def test_multiplicative_structure():
    s = sample_multiplicative(N, RngStream(2), coef_rng=RngStream(0))
    d = s.dataset
    corr = [np.corrcoef(d.x, d.z[:, j])[0, 1] for j in range(100)]
    assert max(abs(c) for c in corr) < 4.5 / np.sqrt(N)
    beta = sorted_normal_coefficients(100, RngStream(0))
    coef = np.linalg.lstsq(np.column_stack([d.z[:, :2], np.ones(N)]), d.y, rcond=None)[0]
    assert coef[1] == pytest.approx(4 * beta[1], abs=0.3)
    assert abs(coef[0]) < 0.3


def test_di_counterexample_variance_formula():
    n = 100_000
    s = sample_di_counterexample(n, RngStream(3), d=5, coef_rng=RngStream(0))
    d = s.dataset
    rest = RngStream(0).generator().standard_normal(4)
    resid = d.y - d.z[:, 1:] @ rest
    for v in (-1.5, 0.0, 1.0):
        near = np.abs(d.z[:, 0] - v) < 0.05
        assert resid[near].var() == pytest.approx(1 + v ** 2, rel=0.1)
    u = s.y_cdf.cdf(d.y[:2000], d.z[:2000])
    assert stats.kstest(u, "uniform").statistic < 1.36 / np.sqrt(2000)
    s0 = sample_di_counterexample(1000, RngStream(4), d=5, beta1=0.0, coef_rng=RngStream(0))
    z = s0.dataset.z[:3]
    assert s0.y_cdf.cdf(z[:, 1:] @ rest + 1.0, z) == pytest.approx(stats.norm.cdf(1.0), abs=1e-12)


def test_modular_pair():
    p1 = sample_modular_pair(N, "p1", RngStream(5)).dataset
    assert stats.kstest(p1.y, "uniform").statistic < 1.36 / np.sqrt(N)
    assert abs(np.corrcoef(p1.x, p1.y)[0, 1]) < 3 / np.sqrt(N)
    p2 = sample_modular_pair(100, "p2", RngStream(5)).dataset
    assert np.corrcoef(p2.x, p2.y)[0, 1] == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        sample_modular_pair(10, "p3", RngStream(0))


@pytest.mark.parametrize("form", ["additive", "multiplicative"])
def test_monotone_noise_residuals_independent_of_z(form):
    s = sample_monotone_noise(N, RngStream(6), form=form)
    d = s.dataset
    eps = s.x_cdf.cdf(d.x, d.z)
    assert abs(np.corrcoef(eps, d.z[:, 0])[0, 1]) < 3 / np.sqrt(N)
    assert stats.kstest(eps, "uniform").statistic < 1.36 / np.sqrt(N)


def test_every_oracle_passes_pit():
    # 18 KS checks in one test: Bonferroni-adjusted 95% critical value
    bound = stats.kstwo.ppf(1 - 0.05 / 18, 2000)
    for name, info in VARIANTS.items():
        if info.multi:
            continue
        s = DgpSpec(name).sample(2000, RngStream(7))
        d = s.dataset
        assert stats.kstest(s.x_cdf.cdf(d.x, d.z), "uniform").statistic < bound, name
        if name not in ("modular_p1", "modular_p2"):
            assert stats.kstest(s.y_cdf.cdf(d.y, d.z), "uniform").statistic < bound, name


def test_gmm_ar_moments():
    spec = GmmJointSpec(d=10)
    x = sample_gmm_ar(50_000, spec, RngStream(8))
    assert x.mean() == pytest.approx(20.0, abs=3 * x[:, 0].std() / np.sqrt(50_000))
    comp = np.argmin(np.abs(x.mean(axis=1)[:, None] - np.array(spec.levels)), axis=1)
    for k, rho in enumerate(spec.rhos):
        c = x[comp == k]
        assert np.corrcoef(c[:, 3], c[:, 4])[0, 1] == pytest.approx(rho, abs=0.05)


def test_gmm_single_component_closed_form():
    spec = GmmJointSpec(d=2, weights=(1.0, 0.0, 0.0, 0.0))
    cond = gmm_conditional_sampler(spec, 0)
    v = np.array([[-1.0], [0.5], [2.0]])
    x = np.array([0.3, -0.2, 1.0])
    assert np.allclose(cond.cdf(x, v), stats.norm.cdf(x, 0.7 * v[:, 0], np.sqrt(0.51)), atol=1e-12)


def test_gmm_zero_correlation_is_marginal():
    spec = GmmJointSpec(d=3, weights=(1.0,), levels=(2.0,), rhos=(0.0,))
    cond = gmm_conditional_sampler(spec, 1)
    v = np.array([[0.0, 5.0]])
    assert cond.cdf(np.array([2.5]), v) == pytest.approx(stats.norm.cdf(0.5), abs=1e-12)


def joint_log_density(spec, x):
    comps = [np.log(w) + stats.multivariate_normal(spec.mean(k), spec.covariance(k)).logpdf(x)
             for k, w in enumerate(spec.weights) if w > 0]
    return np.logaddexp.reduce(np.array(comps), axis=0)


def test_gmm_conditional_matches_rejection_sampling():
    spec = GmmJointSpec(d=5)
    j = 2
    # a conditioning point between two components so the mixture weights matter
    v = np.array([30.0, 30.5, 29.0, 31.0])
    g = np.random.default_rng(9)
    lo, hi = 20.0, 42.0
    grid = np.linspace(lo, hi, 4001)
    full = lambda t: np.insert(np.tile(v, (t.shape[0], 1)), j, t, axis=1)  # noqa: E731
    log_target = joint_log_density(spec, full(grid))
    ceiling = log_target.max() + 0.01
    accepted = []
    while sum(a.size for a in accepted) < 100_000:
        t = g.uniform(lo, hi, 400_000)
        keep = np.log(g.uniform(size=t.size)) < joint_log_density(spec, full(t)) - ceiling
        accepted.append(t[keep])
    reference = np.concatenate(accepted)[:100_000]
    draws = gmm_conditional_sampler(spec, j).sample(np.tile(v, (100_000, 1)), RngStream(10))
    assert stats.ks_2samp(draws, reference).statistic < 0.02


def test_gmm_conditional_factorization():
    spec = GmmJointSpec(d=5)
    x = sample_gmm_ar(100_000, spec, RngStream(11))
    for j in (0, 2, 4):
        rest = np.delete(x, j, axis=1)
        redrawn = gmm_conditional_sampler(spec, j).sample(rest, RngStream(12 + j))
        assert stats.ks_2samp(redrawn, x[:, j]).statistic < 0.02
        u = gmm_conditional_sampler(spec, j).cdf(x[:20_000, j], rest[:20_000])
        assert stats.kstest(u, "uniform").statistic < 1.36 / np.sqrt(20_000)


def test_gmm_spec_validation():
    with pytest.raises(InvalidInputError):
        GmmJointSpec(weights=(0.5, 0.6, 0.0, 0.0))
    with pytest.raises(InvalidInputError):
        GmmJointSpec(rhos=(1.0, 0.5, 0.5, 0.5))
    with pytest.raises(InvalidInputError):
        gmm_conditional_sampler(GmmJointSpec(d=3), 3)


def test_non_null_coefficients():
    idx, beta = draw_non_nulls(30, 6, RngStream(0))
    assert idx.size == 6 and set(np.abs(beta[idx])) == {3.0}
    assert np.count_nonzero(beta) == 6


def test_semi_synthetic_response():
    g = np.random.default_rng(13)
    x = g.normal(size=(50, 8))
    y, truth = semi_synthetic_response(x, 4, RngStream(1), RngStream(2))
    assert truth.non_null.tolist() == [0, 1, 2, 3]
    x2 = x.copy()
    x2[:, 4:] += 10.0
    y2, _ = semi_synthetic_response(x2, 4, RngStream(1), RngStream(2))
    assert np.array_equal(y, y2)
    y0, _ = semi_synthetic_response(np.zeros((50, 8)), 4, RngStream(1), RngStream(2))
    eps = RngStream(1).generator().standard_normal(50)
    assert np.allclose(y0, eps)
    with pytest.raises(InvalidInputError):
        semi_synthetic_response(x, 6, RngStream(1))


def test_coefficients_shared_across_replicates():
    spec = DgpSpec("mixture_ar_cvs", {"d": 10, "non_null_count": 3}, coefficient_seed=4)
    a = spec.sample(50, RngStream(0)).truth.non_null
    b = spec.sample(50, RngStream(1)).truth.non_null
    assert np.array_equal(a, b)


def test_null_variants_cut_x():
    d = DgpSpec("univariate_gaussian", {"x_effect": 0.0}).sample(N, RngStream(14)).dataset
    assert abs(np.corrcoef(d.x - d.z[:, 0], d.y - d.z[:, 0])[0, 1]) < 3 / np.sqrt(N)
    s = DgpSpec("mixture_ar_cvs", {"d": 10, "x_effect": 0.0}).sample(100, RngStream(0))
    assert s.truth.non_null.size == 0


def test_registry():
    assert len(list_dgps()) == 10
    with pytest.raises(InvalidInputError):
        DgpSpec("nope")
    with pytest.raises(InvalidInputError):
        DgpSpec("univariate_gaussian", {"d": 3})
    with pytest.raises(InvalidInputError):
        DgpSpec("univariate_gaussian").sample(0, RngStream(0))
