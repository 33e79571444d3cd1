import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from fisherhmc.spd import (
    NotPositiveDefiniteError,
    airm_distance,
    eigendecompose,
    gaussian_divergences,
    geometric_mean,
    kappa_prime,
    spd_power,
    spd_solve_mean,
)
from conftest import random_spd


def test_eigendecompose_descending_and_reconstructs(rng):
    a = random_spd(rng, 6)
    e = eigendecompose(a)
    assert np.all(np.diff(e.lam) <= 0)
    np.testing.assert_allclose(e.reconstruct(), a, atol=1e-12)


def test_eigendecompose_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        eigendecompose(np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefiniteError):
        eigendecompose(np.array([[1.0, np.nan], [np.nan, 1.0]]))
    # fine when only symmetry is needed
    assert eigendecompose(np.diag([1.0, -1.0]), check_spd=False).lam.tolist() == [1.0, -1.0]


def test_spd_power_matches_scipy(rng):
    a = random_spd(rng, 5)
    np.testing.assert_allclose(spd_power(a, 0.5), linalg.sqrtm(a).real, atol=1e-10)
    np.testing.assert_allclose(spd_power(a, -1.0), np.linalg.inv(a), rtol=1e-9, atol=1e-10)


def test_solve_mean_scalar_case():
    # S^2 a = b  ->  S = sqrt(b/a)
    s = spd_solve_mean(np.array([[4.0]]), np.array([[9.0]]))
    assert s[0, 0] == pytest.approx(1.5)


def test_solve_mean_identity_cases(rng):
    a = random_spd(rng, 4)
    np.testing.assert_allclose(spd_solve_mean(np.eye(4), a), linalg.sqrtm(a).real, atol=1e-10)
    np.testing.assert_allclose(spd_solve_mean(a, np.eye(4)), linalg.sqrtm(np.linalg.inv(a)).real, atol=1e-9)


def test_solve_mean_equals_geometric_mean_of_inverse(rng):
    a, b = random_spd(rng, 5), random_spd(rng, 5)
    np.testing.assert_allclose(spd_solve_mean(a, b), geometric_mean(np.linalg.inv(a), b), atol=1e-9)


def test_geometric_mean_symmetric_and_commuting(rng):
    a, b = random_spd(rng, 4), random_spd(rng, 4)
    np.testing.assert_allclose(geometric_mean(a, b), geometric_mean(b, a), atol=1e-10)
    d1, d2 = np.diag([1.0, 4.0, 9.0]), np.diag([4.0, 1.0, 0.25])
    np.testing.assert_allclose(geometric_mean(d1, d2), np.diag(np.sqrt([4.0, 4.0, 2.25])), atol=1e-14)


def test_geometric_mean_is_airm_midpoint(rng):
    a, b = random_spd(rng, 4), random_spd(rng, 4)
    m = geometric_mean(a, b)
    full = airm_distance(a, b)
    assert airm_distance(a, m) == pytest.approx(full / 2, rel=1e-9)
    assert airm_distance(m, b) == pytest.approx(full / 2, rel=1e-9)


def test_airm_distance_properties(rng):
    a, b = random_spd(rng, 4), random_spd(rng, 4)
    assert airm_distance(a, a) == pytest.approx(0, abs=1e-12)
    assert airm_distance(a, b) == pytest.approx(airm_distance(b, a), rel=1e-10)
    # invariance under congruence
    x = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    assert airm_distance(x @ a @ x.T, x @ b @ x.T) == pytest.approx(airm_distance(a, b), rel=1e-8)
    # oracle: generalized eigenvalues of (b, a)
    lam = linalg.eigh(b, a, eigvals_only=True)
    assert airm_distance(a, b) == pytest.approx(np.sqrt(np.sum(np.log(lam) ** 2)), rel=1e-10)


def test_kappa_prime_examples():
    assert kappa_prime(np.ones(16)) == pytest.approx(2.0)
    assert kappa_prime([1.0, 2.0]) == pytest.approx((4 + 1) ** 0.25)
    with pytest.raises(ValueError):
        kappa_prime([1.0, 0.0])
    with pytest.raises(ValueError):
        kappa_prime([])


def test_kappa_prime_scale_invariant(rng):
    lam = np.exp(rng.standard_normal(10))
    assert kappa_prime(7.3 * lam) == pytest.approx(kappa_prime(lam), rel=1e-12)


def test_gaussian_divergences():
    f, kd, ks = gaussian_divergences(np.ones(3))
    assert (f, kd, ks) == (0.0, 0.0, 0.0)
    f1, kd1, ks1 = gaussian_divergences([4.0])
    f2, kd2, ks2 = gaussian_divergences([0.25])
    assert f1 == pytest.approx(f2)  # Fisher penalises lam and 1/lam alike
    assert kd1 == pytest.approx(ks2) and ks1 == pytest.approx(kd2)
    assert kd1 != pytest.approx(kd2)


def test_fisher_divergence_matches_monte_carlo(rng):
    lam = np.array([0.5, 2.0, 3.0])
    x = rng.standard_normal((400_000, 3)) * np.sqrt(lam)
    # score of N(0, diag lam) minus score of N(0, I)
    diff = -x / lam + x
    # E||.||^2 = sum (1/lam - 2 + lam)
    assert np.mean(np.sum(diff**2, axis=1)) == pytest.approx(gaussian_divergences(lam)[0], rel=0.01)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_solve_mean_residual_property(d, seed):
    rng = np.random.default_rng(seed)
    a, b = random_spd(rng, d), random_spd(rng, d)
    s = spd_solve_mean(a, b)
    assert np.all(np.linalg.eigvalsh(s) > 0)
    np.testing.assert_allclose(s @ a @ s, b, atol=1e-9 * np.linalg.norm(b))
