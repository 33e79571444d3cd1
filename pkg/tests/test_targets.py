import numpy as np
import pytest
from scipy import optimize, special, stats

from fisherhmc.spd import kappa_prime
from fisherhmc.targets import (
    BananaTarget,
    GaussianTarget,
    InvalidPositionError,
    LogGammaGaussianTarget,
    ScaledTarget,
    SpectrumRecipe,
    find_recipe_with_kappa,
    generate_spectrum_sigma,
)
from conftest import random_spd


def _check_score(target, x):
    _, score = target.eval(x)
    fd = optimize.approx_fprime(x, target.logp, 1e-6)
    np.testing.assert_allclose(score, fd, rtol=1e-4, atol=1e-4)


def test_gaussian_logp_matches_scipy_up_to_constant(rng):
    sigma = random_spd(rng, 4)
    mu = rng.standard_normal(4)
    t = GaussianTarget(mu, sigma)
    xs = rng.standard_normal((3, 4))
    ref = stats.multivariate_normal(mu, sigma).logpdf(xs)
    ours = np.array([t.logp(x) for x in xs])
    np.testing.assert_allclose(ours - ours[0], ref - ref[0], rtol=1e-10, atol=1e-10)
    _check_score(t, xs[0])


def test_gaussian_rejects_bad_covariance():
    with pytest.raises(ValueError):
        GaussianTarget(np.zeros(2), np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        GaussianTarget(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_eval_counts_and_rejects_bad_input():
    t = GaussianTarget(np.zeros(2), np.eye(2))
    t.eval(np.zeros(2))
    t.eval(np.ones(2))
    assert t.grad_count == 2
    with pytest.raises(InvalidPositionError):
        t.eval(np.array([np.nan, 0.0]))
    with pytest.raises(InvalidPositionError):
        t.eval(np.zeros(3))


def test_sample_and_score_at(rng):
    sigma = random_spd(rng, 3)
    t = GaussianTarget(np.ones(3), sigma)
    x = t.sample(200_000, rng)
    np.testing.assert_allclose(np.cov(x.T), sigma, atol=0.03 * np.abs(sigma).max())
    s = t.score_at(x[:5])
    np.testing.assert_allclose(s[2], t.eval(x[2])[1], rtol=1e-12)


def test_scaled_target(rng):
    base = GaussianTarget(np.array([1.0, -2.0]), random_spd(rng, 2))
    c = np.array([2.0, 0.5])
    t = ScaledTarget(base, c)
    th = rng.standard_normal(2)
    lp, s = t.eval(th)
    lb, sb = base.eval(c * th)
    assert lp == lb
    np.testing.assert_array_equal(s, c * sb)
    np.testing.assert_allclose(t.true_mean, base.mu / c)
    _check_score(t, th)


def test_log_gamma_target(rng):
    t = LogGammaGaussianTarget(3, shape=2.5, rate=1.5)
    _check_score(t, rng.standard_normal(3))
    # the last coordinate is log of a Gamma(2.5, 1.5) variable
    g = rng.gamma(2.5, 1 / 1.5, size=400_000)
    assert t.true_mean[-1] == pytest.approx(np.log(g).mean(), abs=5e-3)
    assert t.true_mean[-1] == pytest.approx(special.digamma(2.5) - np.log(1.5))


def test_banana_target(rng):
    t = BananaTarget(3, curvature=0.1, s=10.0)
    _check_score(t, rng.standard_normal(3) * 3)
    with pytest.raises(ValueError):
        BananaTarget(1)


def test_spectrum_is_seeded_and_spd():
    r = SpectrumRecipe(d=8, seed=5)
    a, b = generate_spectrum_sigma(r), generate_spectrum_sigma(r)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.linalg.eigvalsh(a) > 0)
    assert not np.array_equal(a, generate_spectrum_sigma(SpectrumRecipe(d=8, seed=6)))


def test_spectrum_without_diag_scale_has_requested_eigenvalues():
    # With D = I the covariance is U diag(lam^2) U^T; recompute lam from the same stream.
    r = SpectrumRecipe(d=5, eigval_param=0.7, diag_scale=0.0, seed=3)
    rng = np.random.default_rng(3)
    stats.ortho_group.rvs(5, random_state=rng)
    lam = np.exp(0.7 * rng.standard_normal(5))
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(generate_spectrum_sigma(r))), np.sort(lam**2), rtol=1e-10)


def test_find_recipe_with_kappa():
    r = SpectrumRecipe(d=100, eigval_law="exponential", eigval_param=2.0, diag_scale=1.0,
                       square_eigvals=False)
    found, sigma = find_recipe_with_kappa(r, 60, 80)
    k = kappa_prime(1 / np.linalg.eigvalsh(sigma))
    assert 60 <= k <= 80
    np.testing.assert_array_equal(generate_spectrum_sigma(found), sigma)
    with pytest.raises(RuntimeError):
        find_recipe_with_kappa(SpectrumRecipe(d=3), 1e9, 1e10, max_tries=5)
