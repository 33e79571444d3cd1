import numpy as np
import pytest
from scipy import optimize

from fisherhmc.accumulators import MomentPair
from fisherhmc.estimators import (
    DenseMass,
    DiagonalMass,
    EstimatorInput,
    InsufficientDrawsError,
    LowRankMass,
    estimate_dense,
    estimate_diagonal,
    estimate_low_rank,
    estimate_score_baseline,
    estimate_variance_baseline,
    init_mass,
)
from fisherhmc.targets import GaussianTarget
from conftest import random_spd


def test_two_draw_example():
    # N(3, 4): draws 1 and 5 have scores 0.5 and -0.5
    m = estimate_diagonal((np.array([[1.0], [5.0]]), np.array([[0.5], [-0.5]])))
    assert m.sigma2[0] == pytest.approx(4.0)
    assert m.mu[0] == pytest.approx(3.0)


def test_baselines_example():
    draws = np.array([[1.0], [5.0]])
    scores = np.array([[0.5], [-0.5]])
    assert estimate_variance_baseline((draws, scores)).sigma2[0] == pytest.approx(8.0)
    assert estimate_score_baseline((draws, scores)).sigma2[0] == pytest.approx(2.0)


def test_diagonal_accepts_streamed_moments(rng):
    x = rng.standard_normal((30, 3))
    a = -x * np.array([1.0, 2.0, 3.0])
    pair = MomentPair(3)
    for xi, ai in zip(x, a):
        pair.push(xi, ai)
    np.testing.assert_allclose(estimate_diagonal(pair).sigma2, estimate_diagonal((x, a)).sigma2, rtol=1e-12)


def test_diagonal_needs_two_draws():
    with pytest.raises(InsufficientDrawsError):
        estimate_diagonal((np.zeros((1, 2)), np.zeros((1, 2))))
    with pytest.raises(ValueError):
        EstimatorInput(np.zeros((3, 2)), np.zeros((3, 3)))


def test_degenerate_coordinate_falls_back():
    x = np.array([[1.0, 0.0], [2.0, 0.0], [4.0, 0.0]])
    a = np.array([[0.1, 1.0], [0.2, 1.0], [-0.3, 1.0]])
    m = estimate_diagonal((x, a))
    assert m.sigma2[1] == 1.0
    prev = DiagonalMass(np.array([5.0, 7.0]))
    assert estimate_diagonal((x, a), previous=prev).sigma2[1] == 7.0
    assert np.isfinite(m.sigma2[0]) and m.sigma2[0] > 0


def test_init_mass_rules():
    m = init_mass(np.array([2.0, -0.5, 0.0, 1e-30, 1e30]))
    np.testing.assert_allclose(m.sigma2, [0.5, 2.0, 1.0, 1e10, 1e-10])
    with pytest.raises(ValueError):
        init_mass(np.array([np.nan]))


def _empirical_fisher(log_s2, x, a):
    s2 = np.exp(log_s2)
    # mu chosen optimally for given s2
    mu = x.mean(0) + s2 * a.mean(0)
    r = np.sqrt(s2) * a + (x - mu) / np.sqrt(s2)
    return np.mean(np.sum(r**2, axis=1))


def test_diagonal_minimises_empirical_fisher(rng):
    x = rng.standard_normal((40, 3)) * [1, 3, 0.2] + [1, 2, 3]
    a = rng.standard_normal((40, 3))
    m = estimate_diagonal((x, a))
    res = optimize.minimize(_empirical_fisher, np.zeros(3), args=(x, a), method="BFGS", options={"gtol": 1e-12})
    np.testing.assert_allclose(m.sigma2, np.exp(res.x), rtol=1e-6)


@pytest.mark.parametrize("d", [2, 5, 20])
def test_dense_exact_recovery(rng, d):
    sigma = random_spd(rng, d)
    t = GaussianTarget(rng.standard_normal(d), sigma)
    x = t.sample(d + 2, rng)
    m = estimate_dense((x, t.score_at(x)), gamma=0.0)
    assert np.linalg.norm(m.inv_mass - sigma) / np.linalg.norm(sigma) < 1e-8
    np.testing.assert_allclose(m.mu, t.mu, atol=1e-7 * np.abs(t.mu).max() + 1e-7)


def test_dense_depends_on_covariances_only(rng):
    x = rng.standard_normal((20, 3))
    a = rng.standard_normal((20, 3))
    m1 = estimate_dense((x, a))
    m2 = estimate_dense((x + 5.0, a - 2.0))
    np.testing.assert_allclose(m1.inv_mass, m2.inv_mass, rtol=1e-10)


def test_dense_kl_oracle_identity_scores(rng):
    # Scores of a standard normal at x are -x, so the solution S satisfies S C S = C
    x = rng.standard_normal((50, 4)) @ random_spd(rng, 4)
    m = estimate_dense((x, -x), gamma=0.0)
    np.testing.assert_allclose(m.inv_mass, np.eye(4), atol=1e-10)


def test_low_rank_equals_dense_with_unit_cutoff(rng):
    d, k = 6, 30
    t = GaussianTarget(np.zeros(d), random_spd(rng, d, spread=1.5))
    x = t.sample(k, rng)
    a = t.score_at(x)
    lr = estimate_low_rank((x, a), cutoff=1.0, gamma=1e-5)
    sigma = lr.sigma
    dense = estimate_dense((x / sigma, a * sigma), gamma=1e-5)
    expected = sigma[:, None] * dense.inv_mass * sigma[None, :]
    np.testing.assert_allclose(lr.inv_mass_matrix(), expected, rtol=1e-7, atol=1e-7 * np.abs(expected).max())


def test_low_rank_identity_on_complement(rng):
    d, k = 12, 4
    x = rng.standard_normal((k, d))
    a = rng.standard_normal((k, d))
    lr = estimate_low_rank((x, a), cutoff=1.0)
    y = (x - x.mean(0)) / lr.sigma
    b = (a - a.mean(0)) * lr.sigma
    u, sv, _ = np.linalg.svd(np.vstack([y, b]).T, full_matrices=False)
    span = u[:, sv > 1e-10 * sv[0]]
    v = rng.standard_normal(d)
    v -= span @ (span.T @ v)  # orthogonal to the whitened span
    u_target = v / lr.sigma  # the same direction in target coordinates
    np.testing.assert_allclose(lr.inv_mass_matrix() @ u_target, lr.sigma**2 * u_target, rtol=1e-8, atol=1e-12)


def test_low_rank_cutoff_trims(rng):
    x = rng.standard_normal((50, 5))
    lr = estimate_low_rank((x, -x), cutoff=2.0)
    assert isinstance(lr, LowRankMass)
    assert lr.rank == 0
    np.testing.assert_allclose(lr.inv_mass_matrix(), np.eye(5), atol=1e-2)


def test_low_rank_recovers_gaussian(rng):
    d = 8
    sigma = random_spd(rng, d, spread=2.0)
    t = GaussianTarget(np.ones(d), sigma)
    x = t.sample(3 * d, rng)
    lr = estimate_low_rank((x, t.score_at(x)), cutoff=1.0, gamma=1e-12)
    np.testing.assert_allclose(lr.inv_mass_matrix(), sigma, rtol=1e-5, atol=1e-5 * np.abs(sigma).max())
    np.testing.assert_allclose(lr.location, t.mu, atol=1e-5)


def test_returned_types(rng):
    x = rng.standard_normal((10, 3))
    assert isinstance(estimate_dense((x, -x)), DenseMass)
    assert isinstance(estimate_variance_baseline((x, -x)), DiagonalMass)
