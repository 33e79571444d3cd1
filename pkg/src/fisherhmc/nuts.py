"""Leapfrog integration and multinomial No-U-Turn transitions.

The pure-Python transition here is the reference implementation; the
compiled kernel in ``_kernels`` follows it step for step and consumes the
same random numbers, so the two agree to rounding.

Random numbers for one transition are drawn up front: a standard normal
vector for the momentum, then ``2 * max_depth + 2**max_depth`` uniforms.
The first ``max_depth`` pick trajectory directions, the next ``max_depth``
drive the top-level sample selection, and the rest are consumed by subtree
merges in order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mass import MassMatrix
from .targets import TargetDensity

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "PhasePoint",
    "TransitionStats",
    "BadInitialPointError",
    "acceptance_statistic",
    "leapfrog",
    "leapfrog_step",
    "initial_point",
    "make_phase_point",
    "nuts_transition_python",
    "transition_uniforms",
]

DIVERGENCE_THRESHOLD = 1000.0


class BadInitialPointError(ValueError):
    """The starting position has a non-finite log density or score."""


@dataclass
class PhasePoint:
    x: np.ndarray
    rho: np.ndarray
    logp: float
    score: np.ndarray
    velocity: np.ndarray
    energy: float

    @property
    def divergent_point(self) -> bool:
        return not math.isfinite(self.energy)


@dataclass(frozen=True)
class TransitionStats:
    delta_h: float
    accept_stat: float
    tree_depth: int
    n_leapfrog: int
    divergent: bool


def acceptance_statistic(delta_h: float, phase: int) -> float:
    """Acceptance statistic of one trajectory state, ``delta_h = H0 - H``.

    Phases 1 and 2 use the Metropolis probability ``exp(min(0, dH))``; phase
    3 uses the symmetric form ``2 exp(min(0, dH)) / (1 + exp(dH))``, which
    equals ``2 / (1 + exp(|dH|))``.
    """
    if math.isnan(delta_h):
        return 0.0
    if phase == 3:
        a = abs(delta_h)
        return 0.0 if a > 700.0 else 2.0 / (1.0 + math.exp(a))
    if phase not in (1, 2):
        raise ValueError(f"phase must be 1, 2 or 3, got {phase}")
    return 1.0 if delta_h >= 0 else math.exp(delta_h)


def make_phase_point(target: TargetDensity, mass: MassMatrix, x, rho) -> PhasePoint:
    x = np.asarray(x, dtype=float)
    logp, score = target.eval(x)
    return _finish_point(mass, x, np.asarray(rho, dtype=float), logp, score)


def _finish_point(mass, x, rho, logp, score) -> PhasePoint:
    v = mass.velocity(rho)
    logp = float(logp)
    energy = -logp + 0.5 * float(rho @ v)
    if not (math.isfinite(energy) and np.all(np.isfinite(score))):
        energy = math.inf
    return PhasePoint(x, rho, logp, score, v, energy)


def leapfrog_step(target, mass, z: PhasePoint, eps: float) -> PhasePoint | None:
    """One kick-drift-kick step; None if the new position is not finite."""
    rho = z.rho + (0.5 * eps) * z.score
    x = z.x + eps * mass.velocity(rho)
    if not np.all(np.isfinite(x)):
        return None
    logp, score = target.eval(x)
    rho = rho + (0.5 * eps) * score
    return _finish_point(mass, x, rho, logp, score)


def leapfrog(target, mass, z: PhasePoint, eps: float, n: int = 1) -> tuple[PhasePoint, bool]:
    """Run ``n`` leapfrog steps; returns (point, divergent).

    Stops early at the first non-finite position or energy and returns the
    last point reached with the divergent flag set.
    """
    if eps <= 0 or n < 1:
        raise ValueError("need eps > 0 and n >= 1")
    for _ in range(n):
        new = leapfrog_step(target, mass, z, eps)
        if new is None:
            return z, True
        z = new
        if z.divergent_point:
            return z, True
    return z, False


def transition_uniforms(max_depth: int) -> int:
    return 2 * max_depth + 2**max_depth


class _Tree:
    __slots__ = ("first", "last", "sample", "logw")

    def __init__(self, first, last, sample, logw):
        self.first = first
        self.last = last
        self.sample = sample
        self.logw = logw


def _uturn(a: PhasePoint, b: PhasePoint, direction: int) -> bool:
    """True if a and b (b later along the integration) turned back on each other."""
    s = b.x - a.x
    if direction < 0:
        s = -s
    return float(a.rho @ s) < 0.0 or float(b.rho @ s) < 0.0


class _Builder:
    def __init__(self, target, mass, eps, h0, phase, merge_u):
        self.target = target
        self.mass = mass
        self.eps = eps
        self.h0 = h0
        self.phase = phase
        self.merge_u = merge_u
        self.n_merge = 0
        self.n_leapfrog = 0
        self.sum_accept = 0.0
        self.max_abs_dh = 0.0
        self.divergent = False

    def leaf(self, edge: PhasePoint, direction: int) -> _Tree | None:
        new = leapfrog_step(self.target, self.mass, edge, direction * self.eps)
        if new is None:
            self.divergent = True
            self.max_abs_dh = math.inf
            return None
        self.n_leapfrog += 1
        dh = new.energy - self.h0
        if not math.isfinite(dh) or dh > DIVERGENCE_THRESHOLD:
            self.divergent = True
            self.max_abs_dh = max(self.max_abs_dh, abs(dh) if not math.isnan(dh) else math.inf)
            return None
        self.max_abs_dh = max(self.max_abs_dh, abs(dh))
        self.sum_accept += acceptance_statistic(-dh, self.phase)
        return _Tree(new, new, new, -dh)

    def build(self, edge: PhasePoint, direction: int, depth: int) -> _Tree | None:
        if depth == 0:
            return self.leaf(edge, direction)
        inner = self.build(edge, direction, depth - 1)
        if inner is None:
            return None
        outer = self.build(inner.last, direction, depth - 1)
        if outer is None:
            return None
        logw = float(np.logaddexp(inner.logw, outer.logw))
        u = self.merge_u[self.n_merge]
        self.n_merge += 1
        sample = outer.sample if u < math.exp(outer.logw - logw) else inner.sample
        if (
            _uturn(inner.first, outer.last, direction)
            or _uturn(inner.first, outer.first, direction)
            or _uturn(inner.last, outer.last, direction)
        ):
            return None
        return _Tree(inner.first, outer.last, sample, logw)


def initial_point(mass, x, logp, score, rho) -> PhasePoint:
    """Phase point from a cached (logp, score) at x; no target evaluation."""
    x = np.asarray(x, dtype=float)
    score = np.asarray(score, dtype=float)
    if not np.all(np.isfinite(x)):
        raise BadInitialPointError("bad initial point: non-finite position")
    z0 = _finish_point(mass, x, np.asarray(rho, dtype=float), logp, score)
    if z0.divergent_point:
        raise BadInitialPointError("bad initial point: non-finite log density or score")
    return z0


def nuts_transition_python(
    target: TargetDensity,
    mass: MassMatrix,
    x: np.ndarray,
    logp: float,
    score: np.ndarray,
    eps: float,
    max_depth: int,
    rho0: np.ndarray,
    u: np.ndarray,
    phase: int = 1,
) -> tuple[np.ndarray, float, np.ndarray, TransitionStats]:
    """One NUTS transition from x given its cached logp/score and pre-drawn randomness.

    ``rho0`` is the initial momentum and ``u`` holds the uniforms described
    in the module docstring. Returns (new x, its logp, its score, stats).
    """
    z0 = initial_point(mass, x, logp, score, rho0)
    h0 = z0.energy

    if max_depth == 0:
        # A single leapfrog step with a Metropolis correction.
        new = leapfrog_step(target, mass, z0, eps)
        n_leap = 0 if new is None else 1
        if new is None or not math.isfinite(new.energy - h0) or new.energy - h0 > DIVERGENCE_THRESHOLD:
            dh = math.inf if new is None else new.energy - h0
            stats = TransitionStats(abs(dh) if not math.isnan(dh) else math.inf, 0.0, 0, n_leap, True)
            return z0.x, z0.logp, z0.score, stats
        d_h = h0 - new.energy
        accept = acceptance_statistic(d_h, phase)
        chosen = new if d_h >= 0 or u[0] < math.exp(d_h) else z0
        stats = TransitionStats(abs(d_h), accept, 0, 1, False)
        return chosen.x, chosen.logp, chosen.score, stats

    builder = _Builder(target, mass, eps, h0, phase, u[2 * max_depth :])
    minus = plus = z0
    sample = z0
    logw_total = 0.0
    depth = 0
    while depth < max_depth:
        direction = 1 if u[depth] < 0.5 else -1
        edge = plus if direction > 0 else minus
        far = minus if direction > 0 else plus
        sub = builder.build(edge, direction, depth)
        depth += 1
        if sub is None:
            break
        if sub.logw > logw_total or u[max_depth + depth - 1] < math.exp(sub.logw - logw_total):
            sample = sub.sample
        logw_total = float(np.logaddexp(logw_total, sub.logw))
        if direction > 0:
            plus = sub.last
        else:
            minus = sub.last
        # Checks on the merged trajectory, in the order of integration away from far.
        if (
            _uturn(far, sub.last, direction)
            or _uturn(far, sub.first, direction)
            or _uturn(edge, sub.last, direction)
        ):
            break

    n = builder.n_leapfrog
    accept = builder.sum_accept / n if n else 0.0
    stats = TransitionStats(builder.max_abs_dh, accept, depth, n, builder.divergent)
    return sample.x, sample.logp, sample.score, stats
