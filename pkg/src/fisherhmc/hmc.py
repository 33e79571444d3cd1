"""Public sampler-core API: momentum sampling, leapfrog and NUTS transitions.

The transition runs in the compiled kernel when it is available and in the
pure-Python reference otherwise. Set ``FISHERHMC_PURE_PYTHON=1`` to force
the Python path. Both consume identical random numbers.
"""

from __future__ import annotations

import os

import numpy as np

from .mass import DenseMass, DiagonalMass, LowRankMass, MassMatrix
from .nuts import (
    DIVERGENCE_THRESHOLD,
    BadInitialPointError,
    PhasePoint,
    TransitionStats,
    acceptance_statistic,
    leapfrog,
    leapfrog_step,
    make_phase_point,
    nuts_transition_python,
    transition_uniforms,
)
from .targets import TargetDensity

try:
    if os.environ.get("FISHERHMC_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from . import _kernels
except ImportError:
    _kernels = None

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "BadInitialPointError",
    "PhasePoint",
    "TransitionStats",
    "Transition",
    "acceptance_statistic",
    "available_backends",
    "default_backend",
    "leapfrog",
    "leapfrog_step",
    "make_phase_point",
    "nuts_transition",
    "sample_momentum",
]


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _kernels is not None else [])


def default_backend() -> str:
    return "compiled" if _kernels is not None else "python"


def sample_momentum(mass: MassMatrix, rng: np.random.Generator) -> np.ndarray:
    """Draw ``rho ~ N(0, M)``."""
    return mass.sample_momentum(rng)


class Transition:
    """Stateful NUTS stepper for one chain.

    Keeps the compiled workspace alive between calls and tracks which mass
    matrix it was last given so the kernel is only reconfigured on change.
    """

    def __init__(self, target: TargetDensity, max_depth: int = 10, backend: str | None = None):
        if max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        backend = backend or default_backend()
        if backend not in available_backends():
            raise ValueError(f"backend {backend!r} unavailable; have {available_backends()}")
        self.target = target
        self.max_depth = int(max_depth)
        self.backend = backend
        self.n_uniforms = transition_uniforms(self.max_depth)
        self._kernel = None
        self._mass_id = None
        if backend == "compiled":
            self._kernel = _kernels.NutsKernel(target.dim, self.max_depth)
            self._native = target.native_spec()
            self._kernel.set_target(target, self._native)

    def _configure(self, mass: MassMatrix):
        if self._mass_id == id(mass):
            return
        code, *arrays = mass.kernel_spec()
        if isinstance(mass, DiagonalMass):
            self._kernel.set_mass(code, arrays[0], None, None)
        elif isinstance(mass, DenseMass):
            self._kernel.set_mass(code, None, arrays[0], None)
        elif isinstance(mass, LowRankMass):
            self._kernel.set_mass(code, arrays[0], arrays[1], arrays[2])
        else:
            raise TypeError(f"unsupported mass matrix {type(mass).__name__}")
        self._mass = mass  # keep alive so id() stays unique
        self._mass_id = id(mass)

    def __call__(self, mass, x, logp, score, eps, rng, phase=1):
        """Advance from x (with cached logp/score); returns (x, logp, score, stats)."""
        if not eps > 0:
            raise ValueError("step size must be positive")
        rho0 = mass.momentum_from_normal(rng.standard_normal(self.target.dim))
        u = rng.random(self.n_uniforms)
        if self._kernel is None:
            return nuts_transition_python(
                self.target, mass, x, logp, score, eps, self.max_depth, rho0, u, phase
            )
        self._configure(mass)
        try:
            out = self._kernel.transition(
                np.ascontiguousarray(x, dtype=float),
                float(logp),
                np.ascontiguousarray(score, dtype=float),
                rho0,
                float(eps),
                u,
                int(phase),
            )
        except ValueError as exc:
            if "bad initial point" in str(exc):
                raise BadInitialPointError(str(exc)) from exc
            raise
        x_new, logp_new, score_new, delta_h, accept, depth, n_leap, divergent = out
        if self._native is not None:
            self.target.grad_count += n_leap
        return x_new, logp_new, score_new, TransitionStats(delta_h, accept, depth, n_leap, divergent)


def nuts_transition(
    target: TargetDensity,
    mass: MassMatrix,
    x,
    eps: float,
    max_depth: int,
    rng: np.random.Generator,
    phase: int = 1,
    logp: float | None = None,
    score=None,
    backend: str | None = None,
) -> tuple[np.ndarray, TransitionStats]:
    """One NUTS update from x.

    If ``logp``/``score`` at x are not supplied they are evaluated first,
    which costs one extra gradient beyond ``stats.n_leapfrog``.
    """
    x = np.asarray(x, dtype=float)
    if logp is None or score is None:
        if not np.all(np.isfinite(x)):
            raise BadInitialPointError("bad initial point: non-finite position")
        logp, score = target.eval(x)
    step = Transition(target, max_depth, backend)
    x_new, _, _, stats = step(mass, x, logp, score, eps, rng, phase)
    return x_new, stats
