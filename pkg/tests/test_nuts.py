import math

import numpy as np
import pytest

from fisherhmc.hmc import (
    BadInitialPointError,
    Transition,
    acceptance_statistic,
    available_backends,
    leapfrog,
    make_phase_point,
    nuts_transition,
)
from fisherhmc.mass import DenseMass, DiagonalMass
from fisherhmc.nuts import PhasePoint, transition_uniforms
from fisherhmc.targets import BananaTarget, GaussianTarget, LogGammaGaussianTarget
from conftest import random_spd
from test_mass import make_masses


def test_acceptance_statistic_values():
    assert acceptance_statistic(0.0, 1) == 1.0
    assert acceptance_statistic(0.5, 2) == 1.0
    assert acceptance_statistic(-1.0, 1) == pytest.approx(math.exp(-1))
    assert acceptance_statistic(0.0, 3) == 1.0
    assert acceptance_statistic(1.0, 3) == pytest.approx(2 / (1 + math.e))
    assert acceptance_statistic(-1.0, 3) == acceptance_statistic(1.0, 3)
    assert acceptance_statistic(-1e6, 3) == 0.0
    assert acceptance_statistic(float("nan"), 1) == 0.0
    with pytest.raises(ValueError):
        acceptance_statistic(0.0, 0)


def test_transition_uniform_count():
    assert transition_uniforms(0) == 1
    assert transition_uniforms(10) == 20 + 1024


@pytest.mark.parametrize("idx", [0, 1, 2])
def test_leapfrog_reversible(rng, idx):
    mass = make_masses(rng, d=5)[idx]
    t = GaussianTarget(np.zeros(5), random_spd(rng, 5))
    z0 = make_phase_point(t, mass, rng.standard_normal(5), mass.sample_momentum(rng))
    z1, div = leapfrog(t, mass, z0, 0.05, 30)
    assert not div
    back = make_phase_point(t, mass, z1.x, -z1.rho)
    z2, _ = leapfrog(t, mass, back, 0.05, 30)
    np.testing.assert_allclose(z2.x, z0.x, atol=1e-10)
    np.testing.assert_allclose(-z2.rho, z0.rho, atol=1e-10)


def _identity_leapfrog(logp_grad, y, p, eps, n):
    for _ in range(n):
        p = p + 0.5 * eps * logp_grad(y)
        y = y + eps * p
        p = p + 0.5 * eps * logp_grad(y)
    return y, p


@pytest.mark.parametrize("idx", [0, 1, 2])
def test_leapfrog_equals_identity_mass_in_adapted_space(rng, idx):
    mass = make_masses(rng, d=4)[idx]
    t = BananaTarget(4, curvature=0.05, s=3.0)
    b = mass.factor()

    def grad_y(y):
        return b.T @ t.eval(mass.from_adapted(y))[1]

    x0 = rng.standard_normal(4)
    rho0 = mass.sample_momentum(rng)
    z, _ = leapfrog(t, mass, make_phase_point(t, mass, x0, rho0), 0.02, 25)
    y, p = _identity_leapfrog(grad_y, mass.to_adapted(x0), b.T @ rho0, 0.02, 25)
    np.testing.assert_allclose(z.x, mass.from_adapted(y), atol=1e-10)
    np.testing.assert_allclose(b.T @ z.rho, p, atol=1e-10)


def test_leapfrog_energy_error_is_second_order(rng):
    t = GaussianTarget(np.zeros(3), np.diag([1.0, 2.0, 3.0]))
    mass = DiagonalMass(np.ones(3))
    z0 = make_phase_point(t, mass, np.ones(3), np.ones(3))
    errs = []
    for eps in (0.1, 0.05, 0.025):
        z, _ = leapfrog(t, mass, z0, eps, int(round(1.0 / eps)))
        errs.append(abs(z.energy - z0.energy))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2) < 0.3)


def test_leapfrog_divergence_detected():
    t = LogGammaGaussianTarget(2)
    mass = DiagonalMass(np.ones(2))
    z0 = make_phase_point(t, mass, np.zeros(2), np.array([0.0, 1000.0]))
    z, div = leapfrog(t, mass, z0, 1.0, 5)
    assert div


def _run_pair(target, mass, seed, max_depth=10, phase=1, steps=20):
    out = {}
    for backend in available_backends():
        rng = np.random.default_rng(seed)
        step = Transition(target, max_depth, backend)
        x = np.full(target.dim, 0.3)
        logp, score = target.eval(x)
        seq = []
        for _ in range(steps):
            x, logp, score, st = step(mass, x, logp, score, 0.4, rng, phase)
            seq.append((x.copy(), st))
        out[backend] = seq
    return out


@pytest.mark.skipif(len(available_backends()) < 2, reason="compiled kernel not built")
@pytest.mark.parametrize("idx", [0, 1, 2])
@pytest.mark.parametrize("kind", ["gaussian", "banana"])
def test_backends_agree(rng, idx, kind):
    mass = make_masses(rng, d=4)[idx]
    target = GaussianTarget(np.zeros(4), random_spd(rng, 4)) if kind == "gaussian" else BananaTarget(4, 0.1, 2.0)
    out = _run_pair(target, mass, seed=7, phase=1 + idx)
    for (xa, sa), (xb, sb) in zip(out["python"], out["compiled"]):
        np.testing.assert_allclose(xa, xb, rtol=1e-11, atol=1e-11)
        assert (sa.tree_depth, sa.n_leapfrog, sa.divergent) == (sb.tree_depth, sb.n_leapfrog, sb.divergent)
        assert sa.accept_stat == pytest.approx(sb.accept_stat, rel=1e-9, abs=1e-12)


def test_max_depth_zero_is_metropolis(backend):
    t = GaussianTarget(np.zeros(2), np.eye(2))
    rng = np.random.default_rng(1)
    x, st = nuts_transition(t, DiagonalMass(np.ones(2)), np.zeros(2), 0.5, 0, rng, backend=backend)
    assert st.tree_depth == 0 and st.n_leapfrog == 1


def test_transition_counts_gradients(backend):
    t = GaussianTarget(np.zeros(3), np.eye(3))
    rng = np.random.default_rng(2)
    before = t.grad_count
    _, st = nuts_transition(t, DiagonalMass(np.ones(3)), np.ones(3), 0.3, 10, rng, backend=backend)
    assert t.grad_count - before == st.n_leapfrog + 1
    assert 1 <= st.n_leapfrog <= 2**st.tree_depth


def test_bad_initial_point(backend):
    t = LogGammaGaussianTarget(2)
    rng = np.random.default_rng(0)
    with pytest.raises(BadInitialPointError):
        nuts_transition(t, DiagonalMass(np.ones(2)), np.array([np.nan, 0.0]), 0.1, 5, rng, backend=backend)


def test_huge_step_diverges(backend):
    t = LogGammaGaussianTarget(2)
    rng = np.random.default_rng(0)
    x0 = np.array([0.0, 2.0])
    x, st = nuts_transition(t, DiagonalMass(np.ones(2)), x0, 50.0, 10, rng, backend=backend)
    assert st.divergent
    assert np.all(np.isfinite(x))


def test_invalid_step_size():
    t = GaussianTarget(np.zeros(1), np.eye(1))
    with pytest.raises(ValueError):
        nuts_transition(t, DiagonalMass(np.ones(1)), np.zeros(1), 0.0, 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        Transition(t, max_depth=-1)
    with pytest.raises(ValueError):
        Transition(t, backend="gpu")


def test_nuts_preserves_gaussian(backend):
    sigma = np.array([[2.0, 0.9], [0.9, 1.0]])
    t = GaussianTarget(np.array([1.0, -1.0]), sigma)
    mass = DenseMass(sigma)
    step = Transition(t, 8, backend)
    rng = np.random.default_rng(3)
    x = t.sample(1, rng)[0]
    logp, score = t.eval(x)
    xs = np.empty((20_000, 2))
    for i in range(xs.shape[0]):
        x, logp, score, _ = step(mass, x, logp, score, 0.9, rng)
        xs[i] = x
    np.testing.assert_allclose(xs.mean(0), t.mu, atol=0.05)
    np.testing.assert_allclose(np.cov(xs.T), sigma, atol=0.08)


def test_phase_point_flags_non_finite():
    p = PhasePoint(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), np.zeros(1), math.inf)
    assert p.divergent_point
