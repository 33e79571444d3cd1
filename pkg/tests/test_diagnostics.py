import warnings

import numpy as np
import pytest

from fisherhmc.diagnostics import (
    DegenerateChainWarning,
    RunSummary,
    autocovariance,
    effective_sample_size,
    ess_with_flags,
    preconditioned_kappa,
    rmse_trace,
    split_rhat,
)
from fisherhmc.estimators import Moments, estimate_diagonal, estimate_variance_baseline
from fisherhmc.mass import DenseMass, DiagonalMass
from fisherhmc.spd import kappa_prime
from fisherhmc.targets import SpectrumRecipe, generate_spectrum_sigma
from conftest import random_spd


def ar1(rng, rho, chains, n):
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains)
    eps = rng.standard_normal((chains, n)) * np.sqrt(1 - rho**2)
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + eps[:, t]
    return x


def test_autocovariance_matches_direct(rng):
    x = rng.standard_normal(50)
    c = x - x.mean()
    direct = np.array([np.sum(c[: 50 - k] * c[k:]) / 50 for k in range(50)])
    np.testing.assert_allclose(autocovariance(x), direct, atol=1e-12)


def test_ess_iid(rng):
    ess = effective_sample_size(rng.standard_normal((4, 1000, 3)))
    assert np.all((ess > 3000) & (ess < 5000))


def test_ess_ar1(rng):
    x = ar1(rng, 0.9, 4, 20_000)
    ratio = effective_sample_size(x)[0] / x.size
    assert ratio == pytest.approx(0.1 / 1.9, rel=0.3)


def test_ess_alternating_is_superefficient():
    x = np.tile([1.0, -1.0], 500)[None, :] + 1e-3 * np.random.default_rng(0).standard_normal((1, 1000))
    assert effective_sample_size(x)[0] > 1000


def test_ess_constant_chain_warns():
    x = np.ones((2, 100, 2))
    x[:, :, 1] = np.random.default_rng(0).standard_normal((2, 100))
    with pytest.warns(DegenerateChainWarning):
        ess = effective_sample_size(x)
    assert ess[0] == 0 and ess[1] > 0
    _, flags = ess_with_flags(x)
    assert flags.tolist() == [True, False]


def test_ess_needs_four_draws():
    with pytest.raises(ValueError):
        effective_sample_size(np.zeros((1, 3)))


def test_rhat_calibration(rng):
    assert np.all(split_rhat(rng.standard_normal((4, 1000))) < 1.01)
    shifted = np.stack([rng.standard_normal(1000), 5 + rng.standard_normal(1000)])
    assert split_rhat(shifted)[0] > 2
    base = rng.standard_normal(1000)
    assert split_rhat(np.stack([base, base + 0.5]))[0] > 1.01


def test_rhat_degenerate_flag():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r, flags = split_rhat(np.ones((2, 10)), return_flags=True)
    assert np.isnan(r[0]) and flags[0]
    with pytest.warns(DegenerateChainWarning):
        split_rhat(np.ones((2, 10)))


def test_rmse_frozen_is_zero():
    mean = np.array([1.0, 2.0])
    chains = np.broadcast_to(mean, (2, 30, 2))
    g, r = rmse_trace(chains, mean, np.tile(np.arange(1, 31), (2, 1)))
    assert np.all(r == 0)
    np.testing.assert_array_equal(g, np.arange(1, 31))


def test_rmse_iid_rate(rng):
    x = rng.standard_normal((200, 10_000, 2))
    g, r = rmse_trace(x, np.zeros(2), np.tile(np.arange(1, 10_001), (200, 1)))
    slope = np.polyfit(np.log(g[99:]), np.log(r[99:]), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_kappa_examples(rng):
    sigma = random_spd(rng, 6)
    assert preconditioned_kappa(sigma, DenseMass(sigma)) == pytest.approx(6**0.25, rel=1e-10)
    assert preconditioned_kappa(sigma, np.eye(6)) == pytest.approx(kappa_prime(1 / np.linalg.eigvalsh(sigma)), rel=1e-10)


def test_kappa_congruence_invariant(rng):
    sigma, minv = random_spd(rng, 5), random_spd(rng, 5)
    x = rng.standard_normal((5, 5)) + 2 * np.eye(5)
    k1 = preconditioned_kappa(sigma, minv)
    k2 = preconditioned_kappa(x @ sigma @ x.T, x @ minv @ x.T)
    assert k2 == pytest.approx(k1, rel=1e-10)


def test_fisher_beats_variance_on_exact_moments():
    wins = 0
    for i in range(1000):
        sigma = generate_spectrum_sigma(SpectrumRecipe(d=20, seed=i))
        prec = np.linalg.inv(sigma)
        z = np.zeros(20)
        m = Moments(10**6, z, np.diag(sigma).copy(), z, np.diag(prec).copy())
        kf = preconditioned_kappa(sigma, estimate_diagonal(m))
        kv = preconditioned_kappa(sigma, estimate_variance_baseline(m))
        wins += kf <= kv
    assert wins >= 900


def test_run_summary_fields():
    s = RunSummary(np.array([300.0, 250.0]), np.array([1.0, 1.001]), 1000, 500, 0, 1.5)
    assert s.n_grad == 1500
    assert s.min_ess == 250
    assert s.ess_per_grad == pytest.approx(250 / 1500)
    assert s.converged()
    assert not RunSummary(np.array([100.0]), np.array([1.0]), 1, 1, 0, 0.0).converged()
    assert not RunSummary(np.array([300.0]), np.array([1.0]), 1, 1, 2, 0.0).converged()
    row = s.to_row()
    assert row["ess"] == [300.0, 250.0] and row["converged"] is True


def test_kappa_accepts_mass_objects(rng):
    sigma = random_spd(rng, 3)
    d = DiagonalMass(np.diag(sigma).copy())
    assert preconditioned_kappa(sigma, d) == pytest.approx(preconditioned_kappa(sigma, np.diag(np.diag(sigma))))
