"""Warmup: three-phase schedule, dual averaging, mass-matrix refresh cadence.

Phase 1 (first 30% of warmup) refreshes the mass matrix from a short
window (L = 10); phase 2 (up to 85%) uses a longer window (L = 80) and
restarts step-size search; phase 3 freezes the mass matrix and only tunes
the step size, scoring trajectories with the symmetric acceptance
statistic. Sampling then runs with everything frozen.

Diagonal-type estimators refresh after every draw from streamed moments.
Dense and low-rank estimators refresh when the window switches, from the
stored draws of the fresh foreground.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .accumulators import WindowPair
from .hmc import BadInitialPointError, Transition
from .mass import MassMatrix
from .nuts import DIVERGENCE_THRESHOLD, initial_point, leapfrog_step
from .spd import NotPositiveDefiniteError
from .targets import TargetDensity

__all__ = [
    "ESTIMATOR_KINDS",
    "WarmupSchedule",
    "DualAveragingState",
    "dual_averaging_update",
    "init_step_size",
    "SamplerConfig",
    "MassUpdate",
    "ChainResult",
    "StepSizeInitError",
    "WarmupFailedError",
    "warmup_and_sample",
]

ESTIMATOR_KINDS = ("diagonal", "dense", "low_rank", "variance_baseline", "score_baseline")
_PER_DRAW_KINDS = {"diagonal", "variance_baseline", "score_baseline"}


class StepSizeInitError(RuntimeError):
    pass


class WarmupFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class WarmupSchedule:
    num_warmup: int
    estimator_kind: str = "diagonal"
    L1: int = 10
    L2: int = 80

    def __post_init__(self):
        if self.num_warmup < 20:
            raise ValueError("num_warmup must be at least 20")
        if self.L1 < 1 or self.L2 < 1:
            raise ValueError("window lengths must be >= 1")
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.estimator_kind!r}")

    @property
    def phase1_end(self) -> int:
        return int(math.floor(0.30 * self.num_warmup))

    @property
    def phase2_end(self) -> int:
        return int(math.floor(0.85 * self.num_warmup))

    @property
    def boundaries(self) -> tuple[int, int, int]:
        return self.phase1_end, self.phase2_end, self.num_warmup

    def phase(self, i: int) -> int:
        """Phase (1, 2, 3) of warmup transition i; 0 once sampling starts."""
        if i < self.phase1_end:
            return 1
        if i < self.phase2_end:
            return 2
        if i < self.num_warmup:
            return 3
        return 0

    def switch_interval(self, phase: int) -> int:
        return self.L1 if phase == 1 else self.L2


@dataclass
class DualAveragingState:
    """Nesterov dual averaging on log step size.

    ``m`` is the index of the next update (1 right after a restart).
    """

    log_eps: float
    mu: float
    target_accept: float = 0.8
    log_eps_bar: float = 0.0
    h_bar: float = 0.0
    m: int = 1
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75

    @classmethod
    def start(cls, eps: float, target_accept: float = 0.8, **hyper) -> "DualAveragingState":
        if not eps > 0:
            raise ValueError("step size must be positive")
        return cls(log_eps=math.log(eps), mu=math.log(10.0 * eps), target_accept=target_accept,
                   log_eps_bar=math.log(eps), **hyper)

    @property
    def eps(self) -> float:
        return math.exp(self.log_eps)

    @property
    def eps_bar(self) -> float:
        return math.exp(self.log_eps_bar)


def dual_averaging_update(state: DualAveragingState, accept_stat: float) -> DualAveragingState:
    """One recurrence step (in place); low acceptance shrinks the step size."""
    if not 0.0 <= accept_stat <= 1.0:
        raise ValueError("accept_stat must lie in [0, 1]")
    m = state.m
    w = 1.0 / (m + state.t0)
    state.h_bar = (1.0 - w) * state.h_bar + w * (state.target_accept - accept_stat)
    state.log_eps = state.mu - math.sqrt(m) / state.gamma * state.h_bar
    eta = m ** (-state.kappa)
    state.log_eps_bar = eta * state.log_eps + (1.0 - eta) * state.log_eps_bar
    state.m = m + 1
    return state


def init_step_size(
    target: TargetDensity,
    mass: MassMatrix,
    x0,
    rng: np.random.Generator,
    logp: float | None = None,
    score=None,
    eps0: float = 1.0,
    max_iter: int = 50,
) -> float:
    """Double or halve eps until one leapfrog step accepts with probability in (0.25, 0.95).

    One momentum draw is used for the whole search. If the search reverses
    direction the smaller of the last two step sizes is returned.
    """
    x0 = np.asarray(x0, dtype=float)
    if logp is None or score is None:
        logp, score = target.eval(x0)
    z0 = initial_point(mass, x0, logp, score, mass.sample_momentum(rng))

    def accept(eps):
        new = leapfrog_step(target, mass, z0, eps)
        if new is None:
            return 0.0, True
        dh = new.energy - z0.energy
        if not math.isfinite(dh) or dh > DIVERGENCE_THRESHOLD:
            return 0.0, True
        return (1.0 if dh <= 0 else math.exp(-dh)), False

    eps = eps0
    a, div = accept(eps)
    any_finite = not div
    direction = 0
    for _ in range(max_iter):
        if 0.25 < a < 0.95:
            return eps
        step_dir = 1 if a >= 0.95 else -1
        if direction and step_dir != direction:
            return min(eps, prev)
        direction = step_dir
        prev = eps
        eps = eps * 2.0 if step_dir > 0 else eps * 0.5
        a, div = accept(eps)
        any_finite = any_finite or not div
    if not any_finite:
        raise StepSizeInitError("cannot initialize step size: every trial step diverged")
    return eps


@dataclass(frozen=True)
class SamplerConfig:
    estimator_kind: str = "diagonal"
    num_warmup: int = 1000
    num_draws: int = 1000
    max_depth: int = 10
    target_accept: float = 0.8
    gamma: float = est.DEFAULT_GAMMA
    cutoff: float = est.DEFAULT_CUTOFF
    L1: int = 10
    L2: int = 80
    backend: str | None = None

    def __post_init__(self):
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.estimator_kind!r}")
        if self.num_warmup < 20:
            raise ValueError("num_warmup must be at least 20")
        if self.num_draws < 1:
            raise ValueError("num_draws must be at least 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.gamma <= 0 or self.cutoff < 1:
            raise ValueError("need gamma > 0 and cutoff >= 1")

    @property
    def schedule(self) -> WarmupSchedule:
        return WarmupSchedule(self.num_warmup, self.estimator_kind, self.L1, self.L2)


@dataclass(frozen=True)
class MassUpdate:
    """A mass-matrix refresh: used from draw ``draw`` on, built from draws [start, stop)."""

    draw: int
    start: int
    stop: int
    mass: MassMatrix


@dataclass
class ChainResult:
    """Output of one chain.

    Draw 0 is the initial point; warmup transition i produces draw i + 1.
    Per-transition arrays have num_warmup + num_draws entries, warmup first.
    """

    x0: np.ndarray
    warmup_draws: np.ndarray
    draws: np.ndarray
    delta_h: np.ndarray
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    step_sizes: np.ndarray
    phase: np.ndarray
    grad_counts: np.ndarray
    mass: MassMatrix
    step_size: float
    mass_updates: list[MassUpdate] = field(default_factory=list)
    n_grad_warmup: int = 0
    n_grad_sampling: int = 0
    estimator_failures: int = 0
    wall_time: float = 0.0

    @property
    def n_grad(self) -> int:
        return self.n_grad_warmup + self.n_grad_sampling

    @property
    def num_warmup(self) -> int:
        return self.warmup_draws.shape[0]

    @property
    def n_divergent(self) -> int:
        return int(self.divergent[self.num_warmup :].sum())


class _MassAdapter:
    """Owns the window and turns pushes into mass-matrix refreshes."""

    def __init__(self, config: SamplerConfig, dim: int, mass: MassMatrix):
        self.config = config
        self.kind = config.estimator_kind
        self.per_draw = self.kind in _PER_DRAW_KINDS
        self.dim = dim
        self.mass = mass
        self.updates: list[MassUpdate] = []
        self.failures = 0
        self.window = None
        self.offset = 0

    def reset(self, L: int, first_draw: int):
        self.window = WindowPair(self.dim, L, "moments" if self.per_draw else "buffer")
        self.offset = first_draw

    def _estimate(self, data):
        c = self.config
        if self.kind == "diagonal":
            return est.estimate_diagonal(data, previous=self.mass if hasattr(self.mass, "sigma2") else None)
        if self.kind == "variance_baseline":
            return est.estimate_variance_baseline(data, previous=self.mass if hasattr(self.mass, "sigma2") else None)
        if self.kind == "score_baseline":
            return est.estimate_score_baseline(data, previous=self.mass if hasattr(self.mass, "sigma2") else None)
        if self.kind == "dense":
            return est.estimate_dense(data, gamma=c.gamma)
        return est.estimate_low_rank(data, cutoff=c.cutoff, gamma=c.gamma, previous=self.mass)

    def push(self, draw: np.ndarray, score: np.ndarray) -> None:
        if not (np.all(np.isfinite(draw)) and np.all(np.isfinite(score))):
            return
        switched = self.window.push(draw, score)
        fg = self.window.foreground
        if self.per_draw:
            if fg.count < 2:
                return
        elif not switched or fg.count < 2:
            return
        try:
            self.mass = self._estimate(fg)
        except (np.linalg.LinAlgError, NotPositiveDefiniteError, ValueError):
            self.failures += 1
            return
        start, stop = self.window.foreground_range
        self.updates.append(MassUpdate(self.offset + stop, self.offset + start, self.offset + stop, self.mass))


def warmup_and_sample(
    target: TargetDensity,
    config: SamplerConfig,
    rng: np.random.Generator,
    x0=None,
    inv_mass0=None,
) -> ChainResult:
    """Run warmup then sampling for one chain.

    ``x0`` defaults to a uniform draw on [-2, 2]^d. The starting inverse
    mass is ``init_mass`` of the first score unless ``inv_mass0`` (a
    positive vector) is given.
    """
    t_start = time.perf_counter()
    schedule = config.schedule
    d = target.dim
    N, S = config.num_warmup, config.num_draws
    x = rng.uniform(-2.0, 2.0, size=d) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (d,) or not np.all(np.isfinite(x)):
        raise BadInitialPointError("bad initial point: x0 must be a finite vector of the target dimension")
    grad_before = target.grad_count
    logp, score = target.eval(x)
    if not (math.isfinite(logp) and np.all(np.isfinite(score))):
        raise BadInitialPointError("bad initial point: non-finite log density or score")
    x0_arr = x.copy()

    if inv_mass0 is None:
        mass0 = est.init_mass(score)
    else:
        mass0 = est.DiagonalMass(np.broadcast_to(np.asarray(inv_mass0, dtype=float), (d,)).copy())
    adapter = _MassAdapter(config, d, mass0)
    adapter.reset(schedule.L1, 0)
    adapter.push(x, score)
    step = Transition(target, config.max_depth, config.backend)

    eps = init_step_size(target, adapter.mass, x, rng, logp, score)
    da = DualAveragingState.start(eps, config.target_accept)

    total = N + S
    draws = np.empty((total, d))
    delta_h = np.empty(total)
    accept = np.empty(total)
    depth = np.empty(total, dtype=np.int64)
    n_leap = np.empty(total, dtype=np.int64)
    divergent = np.zeros(total, dtype=bool)
    step_sizes = np.empty(total)
    phases = np.empty(total, dtype=np.int64)
    grad_counts = np.empty(total, dtype=np.int64)

    for i in range(total):
        phase = schedule.phase(i)
        if i == schedule.phase1_end:
            # Draws up to and including draw i exist; the window restarts at draw i + 1.
            adapter.reset(schedule.L2, i + 1)
            eps = init_step_size(target, adapter.mass, x, rng, logp, score)
            da = DualAveragingState.start(eps, config.target_accept)
        elif i == schedule.phase2_end:
            da = DualAveragingState.start(da.eps_bar, config.target_accept)
            eps = da.eps
        elif i == N:
            if divergent[:N].all():
                raise WarmupFailedError("warmup failed: every warmup transition diverged")
            eps = da.eps_bar

        x, logp, score, st = step(adapter.mass, x, logp, score, eps, rng, phase if phase else 1)
        draws[i] = x
        delta_h[i] = st.delta_h
        accept[i] = st.accept_stat
        depth[i] = st.tree_depth
        n_leap[i] = st.n_leapfrog
        divergent[i] = st.divergent
        step_sizes[i] = eps
        phases[i] = phase
        grad_counts[i] = target.grad_count - grad_before

        if phase:
            dual_averaging_update(da, st.accept_stat)
            eps = da.eps
            if phase < 3:
                adapter.push(x, score)

    n_warm = int(grad_counts[N - 1])
    return ChainResult(
        x0=x0_arr,
        warmup_draws=draws[:N],
        draws=draws[N:],
        delta_h=delta_h,
        accept_stat=accept,
        tree_depth=depth,
        n_leapfrog=n_leap,
        divergent=divergent,
        step_sizes=step_sizes,
        phase=phases,
        grad_counts=grad_counts,
        mass=adapter.mass,
        step_size=da.eps_bar,
        mass_updates=adapter.updates,
        n_grad_warmup=n_warm,
        n_grad_sampling=int(grad_counts[-1]) - n_warm,
        estimator_failures=adapter.failures,
        wall_time=time.perf_counter() - t_start,
    )
