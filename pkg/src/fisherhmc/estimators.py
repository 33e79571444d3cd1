"""Mass-matrix estimators.

All estimators take draws and their scores over a window. Arrays are laid
out one row per draw, shape (k, d). The diagonal estimators also accept
streamed moments so the window never has to store draws.

The Fisher estimators minimise the empirical Fisher divergence between the
preconditioned target and a standard normal; the two baselines match draw
variances or score variances instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accumulators import DrawBuffer, MomentPair
from .mass import DenseMass, DiagonalMass, LowRankMass
from .spd import eigendecompose, spd_solve_mean

__all__ = [
    "InsufficientDrawsError",
    "Moments",
    "EstimatorInput",
    "DiagonalMass",
    "DenseMass",
    "LowRankMass",
    "init_mass",
    "estimate_diagonal",
    "estimate_dense",
    "estimate_low_rank",
    "estimate_variance_baseline",
    "estimate_score_baseline",
    "DEFAULT_GAMMA",
    "DEFAULT_CUTOFF",
]

DEFAULT_GAMMA = 1e-5
DEFAULT_CUTOFF = 2.0
# Variances below this are treated as degenerate for the coordinate.
VARIANCE_FLOOR = 1e-20
SIGMA2_BOUNDS = (1e-20, 1e20)
INIT_BOUNDS = (1e-10, 1e10)


class InsufficientDrawsError(ValueError):
    """Fewer than two draws in the estimation window."""


@dataclass(frozen=True)
class Moments:
    """Per-coordinate means and unbiased variances of draws and scores."""

    count: int
    draw_mean: np.ndarray
    draw_var: np.ndarray
    score_mean: np.ndarray
    score_var: np.ndarray


@dataclass(frozen=True)
class EstimatorInput:
    """Draws and scores of one window, each of shape (k, d)."""

    draws: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        scores = np.atleast_2d(np.asarray(self.scores, dtype=float))
        if draws.shape != scores.shape:
            raise ValueError(f"draws {draws.shape} and scores {scores.shape} differ in shape")
        if not (np.all(np.isfinite(draws)) and np.all(np.isfinite(scores))):
            raise ValueError("draws and scores must be finite")
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "scores", scores)

    @property
    def count(self) -> int:
        return self.draws.shape[0]

    def moments(self) -> Moments:
        k = self.count
        if k < 2:
            raise InsufficientDrawsError("insufficient draws: need at least 2")
        return Moments(
            count=k,
            draw_mean=self.draws.mean(axis=0),
            draw_var=self.draws.var(axis=0, ddof=1),
            score_mean=self.scores.mean(axis=0),
            score_var=self.scores.var(axis=0, ddof=1),
        )


def _as_moments(data) -> Moments:
    if isinstance(data, Moments):
        if data.count < 2:
            raise InsufficientDrawsError("insufficient draws: need at least 2")
        return data
    if isinstance(data, MomentPair):
        if data.count < 2:
            raise InsufficientDrawsError("insufficient draws: need at least 2")
        return Moments(
            data.count, data.draws.mean, data.draws.variance, data.scores.mean, data.scores.variance
        )
    return _as_input(data).moments()


def _as_input(data) -> EstimatorInput:
    if isinstance(data, EstimatorInput):
        return data
    if isinstance(data, DrawBuffer):
        return EstimatorInput(data.draws, data.scores)
    if isinstance(data, tuple) and len(data) == 2:
        return EstimatorInput(*data)
    raise TypeError(f"cannot use {type(data).__name__} as estimator input")


def _degenerate(var: np.ndarray) -> np.ndarray:
    return ~np.isfinite(var) | (var < VARIANCE_FLOOR)


def _fallback(values, bad, previous: DiagonalMass | None):
    if not np.any(bad):
        return values
    backup = np.ones_like(values) if previous is None else previous.sigma2
    return np.where(bad, backup, values)


def init_mass(score0) -> DiagonalMass:
    """Inverse mass ``diag(1/|score0|)``, so that M starts at ``diag(|score0|)``.

    Entries are clamped to [1e-10, 1e10]; coordinates with a zero score get 1.
    """
    score0 = np.asarray(score0, dtype=float)
    if not np.all(np.isfinite(score0)):
        raise ValueError("initial score must be finite")
    mag = np.abs(score0)
    with np.errstate(divide="ignore"):
        inv = np.where(mag > 0, 1.0 / np.where(mag > 0, mag, 1.0), 1.0)
    return DiagonalMass(np.clip(inv, *INIT_BOUNDS))


def _fisher_sigma2(m: Moments, previous) -> np.ndarray:
    bad = _degenerate(m.draw_var) | _degenerate(m.score_var)
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.sqrt(m.draw_var / m.score_var)
    s2 = _fallback(s2, bad | ~np.isfinite(s2), previous)
    return np.clip(s2, *SIGMA2_BOUNDS)


def estimate_diagonal(data, previous: DiagonalMass | None = None) -> DiagonalMass:
    """Diagonal Fisher minimiser ``sigma2 = sqrt(var(x) / var(alpha))``.

    ``data`` may be an EstimatorInput, a (draws, scores) tuple, a DrawBuffer,
    a MomentPair or Moments. ``previous`` supplies the fallback for
    coordinates whose variances are degenerate.
    """
    m = _as_moments(data)
    s2 = _fisher_sigma2(m, previous)
    return DiagonalMass(s2, mu=m.draw_mean + s2 * m.score_mean)


def estimate_variance_baseline(data, previous: DiagonalMass | None = None) -> DiagonalMass:
    """Inverse mass equal to the draw variances."""
    m = _as_moments(data)
    s2 = _fallback(m.draw_var, _degenerate(m.draw_var), previous)
    return DiagonalMass(np.clip(s2, *SIGMA2_BOUNDS), mu=m.draw_mean.copy())


def estimate_score_baseline(data, previous: DiagonalMass | None = None) -> DiagonalMass:
    """Mass equal to the score variances, so ``M^{-1} = diag(1/var(alpha))``."""
    m = _as_moments(data)
    bad = _degenerate(m.score_var)
    with np.errstate(divide="ignore"):
        s2 = 1.0 / np.where(bad, 1.0, m.score_var)
    s2 = _fallback(s2, bad, previous)
    return DiagonalMass(np.clip(s2, *SIGMA2_BOUNDS), mu=m.draw_mean.copy())


def _covariance(a: np.ndarray) -> np.ndarray:
    centered = a - a.mean(axis=0)
    return centered.T @ centered / (a.shape[0] - 1)


def estimate_dense(data, gamma: float = DEFAULT_GAMMA) -> DenseMass:
    """Dense Fisher minimiser: the SPD solution of ``S (C_a + g I) S = C_x + g I``."""
    inp = _as_input(data)
    k, d = inp.draws.shape
    if k < 2:
        raise InsufficientDrawsError("insufficient draws: need at least 2")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    reg = gamma * np.eye(d)
    inv_mass = spd_solve_mean(_covariance(inp.scores) + reg, _covariance(inp.draws) + reg)
    mu = inp.draws.mean(axis=0) + inv_mass @ inp.scores.mean(axis=0)
    return DenseMass(inv_mass, mu=mu, gamma=gamma)


def _column_basis(a: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column span of a (d, n) matrix, trimmed by numerical rank."""
    if a.size == 0:
        return np.zeros((a.shape[0], 0))
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((a.shape[0], 0))
    tol = max(a.shape) * np.finfo(float).eps * s[0]
    return u[:, s > tol]


def estimate_low_rank(
    data,
    cutoff: float = DEFAULT_CUTOFF,
    gamma: float = DEFAULT_GAMMA,
    previous: DiagonalMass | LowRankMass | None = None,
) -> LowRankMass:
    """Low-rank plus diagonal Fisher minimiser.

    A diagonal stage whitens each coordinate by ``sigma = (var x / var a)^{1/4}``.
    In that space the dense problem is solved inside the joint span of the
    centred draws and scores, and only eigendirections with eigenvalue
    ``>= cutoff`` or ``<= 1/cutoff`` are kept. Directions outside the span
    are left alone.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    inp = _as_input(data)
    m = inp.moments()
    k = m.count
    prev_diag = None
    if isinstance(previous, LowRankMass):
        prev_diag = DiagonalMass(previous.sigma**2)
    elif isinstance(previous, DiagonalMass):
        prev_diag = previous
    sigma2 = _fisher_sigma2(m, prev_diag)
    sigma = np.sqrt(sigma2)

    y = (inp.draws - m.draw_mean) / sigma
    beta = (inp.scores - m.score_mean) * sigma
    q = _column_basis(np.hstack([_column_basis(y.T), _column_basis(beta.T)]))
    r = q.shape[1]
    if r == 0:
        U, lam = np.zeros((sigma.size, 0)), np.zeros(0)
    else:
        py = y @ q
        pb = beta @ q
        reg = gamma * np.eye(r)
        c_y = py.T @ py / (k - 1) + reg
        c_b = pb.T @ pb / (k - 1) + reg
        eig = eigendecompose(spd_solve_mean(c_b, c_y))
        keep = (eig.lam >= cutoff) | (eig.lam <= 1.0 / cutoff)
        U = q @ eig.U[:, keep]
        lam = eig.lam[keep]

    mu2 = m.draw_mean + sigma2 * m.score_mean
    t = sigma * m.score_mean
    mu1 = U @ ((lam - 1.0) * (U.T @ t)) if lam.size else np.zeros_like(t)
    return LowRankMass(sigma, U, lam, mu1=mu1, mu2=mu2, cutoff=cutoff, gamma=gamma)
