"""Target densities: the evaluation interface plus built-in analytic targets.

Log densities are unnormalized. Every target counts its own score
evaluations; ``spawn`` hands a chain an independent copy with a fresh
counter so chains never share mutable state.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from .spd import kappa_prime

__all__ = [
    "InvalidPositionError",
    "TargetDensity",
    "GaussianTarget",
    "ScaledTarget",
    "LogGammaGaussianTarget",
    "BananaTarget",
    "SpectrumRecipe",
    "eval_target",
    "make_gaussian_target",
    "generate_spectrum_sigma",
    "find_recipe_with_kappa",
]


class InvalidPositionError(ValueError):
    """Raised when a target is evaluated at a non-finite position."""


class TargetDensity:
    """Base class for targets on R^d.

    Subclasses implement ``_logp_and_score``. Callers use ``eval`` which
    validates the position and increments ``grad_count``.
    """

    # Set by targets the compiled kernel can evaluate without calling back
    # into Python, see ``native_spec``.
    native_kind: str | None = None

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be a positive integer")
        self.dim = int(dim)
        self.grad_count = 0

    def _logp_and_score(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def eval(self, x) -> tuple[float, np.ndarray]:
        """Return ``(logp, score)`` at x.

        Non-finite outputs are returned as-is; callers treat them as a
        divergence.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InvalidPositionError(
                f"invalid position: expected shape ({self.dim},), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise InvalidPositionError("invalid position: non-finite coordinates")
        self.grad_count += 1
        return self._logp_and_score(x)

    def logp(self, x) -> float:
        return self.eval(x)[0]

    def spawn(self) -> "TargetDensity":
        """Copy sharing the (immutable) parameters with a zeroed counter."""
        child = copy.copy(self)
        child.grad_count = 0
        return child

    def native_spec(self):
        """Parameters for the compiled kernel, or None to call back into Python."""
        return None

    @property
    def true_mean(self) -> np.ndarray | None:
        return None


def eval_target(target: TargetDensity, x) -> tuple[float, np.ndarray]:
    return target.eval(x)


class GaussianTarget(TargetDensity):
    """Multivariate normal N(mu, sigma)."""

    native_kind = "gaussian"

    def __init__(self, mu, sigma):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma shape {sigma.shape} does not match mu of size {mu.size}")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=0.0):
            raise ValueError("sigma must be symmetric")
        try:
            chol = linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError(f"sigma is not positive definite: {exc}") from exc
        super().__init__(mu.size)
        self.mu = mu
        self.sigma = sigma
        self.chol = chol
        chol_inv = linalg.solve_triangular(chol, np.eye(mu.size), lower=True)
        prec = chol_inv.T @ chol_inv
        self.prec = np.ascontiguousarray(0.5 * (prec + prec.T))

    def _logp_and_score(self, x):
        r = x - self.mu
        score = -(self.prec @ r)
        return 0.5 * float(r @ score), score

    def native_spec(self):
        return self.mu, self.prec

    @property
    def true_mean(self):
        return self.mu

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Exact i.i.d. draws, shape (n, d)."""
        z = rng.standard_normal((n, self.dim))
        return self.mu + z @ self.chol.T

    def score_at(self, x: np.ndarray) -> np.ndarray:
        """Analytic scores for rows of x without touching the counter."""
        return -(np.atleast_2d(x) - self.mu) @ self.prec


def make_gaussian_target(mu, sigma) -> GaussianTarget:
    return GaussianTarget(mu, sigma)


class ScaledTarget(TargetDensity):
    """q(theta) = p(c * theta) for a positive scale vector c.

    The Jacobian constant is dropped, so ``logq(theta) = logp(c * theta)``
    exactly and ``score_q(theta) = c * score_p(c * theta)``.
    """

    def __init__(self, base: TargetDensity, scale):
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (base.dim,)).copy()
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise ValueError("scale must be positive and finite")
        super().__init__(base.dim)
        self.base = base
        self.scale = scale

    def _logp_and_score(self, x):
        logp, score = self.base._logp_and_score(self.scale * x)
        return logp, self.scale * score

    def spawn(self):
        child = super().spawn()
        child.base = self.base.spawn()
        return child

    @property
    def true_mean(self):
        m = self.base.true_mean
        return None if m is None else m / self.scale


class LogGammaGaussianTarget(TargetDensity):
    """Independent product of N(0, I_{d-1}) and log of a Gamma(shape, rate).

    The last coordinate z = log(g) with g ~ Gamma(shape, rate) has density
    proportional to ``exp(shape * z - rate * exp(z))``. Large positive z makes
    the score blow up exponentially, which is what this target is for.
    """

    def __init__(self, dim: int, shape: float = 2.0, rate: float = 1.0):
        if dim < 1 or shape <= 0 or rate <= 0:
            raise ValueError("dim, shape and rate must be positive")
        super().__init__(dim)
        self.shape = float(shape)
        self.rate = float(rate)

    def _logp_and_score(self, x):
        score = -x.copy()
        z = x[-1]
        with np.errstate(over="ignore"):
            ez = np.exp(z)
        logp = -0.5 * float(x[:-1] @ x[:-1]) + self.shape * z - self.rate * ez
        score[-1] = self.shape - self.rate * ez
        return float(logp), score

    @property
    def true_mean(self):
        mean = np.zeros(self.dim)
        mean[-1] = float(special.digamma(self.shape)) - np.log(self.rate)
        return mean


class BananaTarget(TargetDensity):
    """Warped Gaussian: x2 is shifted by ``curvature * (x1^2 - s^2)``.

    Remaining coordinates are independent standard normals.
    """

    def __init__(self, dim: int = 2, curvature: float = 0.1, s: float = 10.0):
        if dim < 2:
            raise ValueError("banana target needs dim >= 2")
        super().__init__(dim)
        self.curvature = float(curvature)
        self.s = float(s)

    def _logp_and_score(self, x):
        b, s = self.curvature, self.s
        x1, x2 = x[0], x[1]
        w = x2 - b * (x1 * x1 - s * s)
        rest = x[2:]
        logp = -0.5 * x1 * x1 / (s * s) - 0.5 * w * w - 0.5 * float(rest @ rest)
        score = np.empty_like(x)
        score[0] = -x1 / (s * s) + w * 2.0 * b * x1
        score[1] = -w
        score[2:] = -rest
        return float(logp), score

    @property
    def true_mean(self):
        return np.zeros(self.dim)


@dataclass(frozen=True)
class SpectrumRecipe:
    """Random covariance ``D^{1/2} U diag(lam^2) U^T D^{1/2}``.

    ``eigval_law`` is "lognormal" (log lam ~ N(0, eigval_param^2)) or
    "exponential" (lam ~ Exp(rate=eigval_param)); log D_ii ~ N(0, diag_scale^2).
    U is Haar-distributed on the orthogonal group. With ``square_eigvals``
    false the middle factor is ``diag(lam)`` instead of ``diag(lam^2)``.
    """

    d: int
    eigval_law: str = "lognormal"
    eigval_param: float = 1.0
    diag_scale: float = 2.0
    seed: int = 0
    square_eigvals: bool = True


def generate_spectrum_sigma(recipe: SpectrumRecipe) -> np.ndarray:
    if recipe.d < 1:
        raise ValueError("recipe dimension must be at least 1")
    if recipe.eigval_param < 0 or recipe.diag_scale < 0:
        raise ValueError("law parameters must be non-negative")
    rng = np.random.default_rng(recipe.seed)
    d = recipe.d
    U = stats.ortho_group.rvs(d, random_state=rng) if d > 1 else np.ones((1, 1))
    if recipe.eigval_law == "lognormal":
        lam = np.exp(recipe.eigval_param * rng.standard_normal(d))
    elif recipe.eigval_law == "exponential":
        if recipe.eigval_param <= 0:
            raise ValueError("exponential rate must be positive")
        lam = rng.exponential(1.0 / recipe.eigval_param, size=d)
    else:
        raise ValueError(f"unknown eigval_law {recipe.eigval_law!r}")
    diag_root = np.exp(0.5 * recipe.diag_scale * rng.standard_normal(d))
    sigma = (U * (lam**2 if recipe.square_eigvals else lam)) @ U.T
    sigma = diag_root[:, None] * sigma * diag_root[None, :]
    return 0.5 * (sigma + sigma.T)


def find_recipe_with_kappa(
    recipe: SpectrumRecipe, low: float, high: float, max_tries: int = 1000
) -> tuple[SpectrumRecipe, np.ndarray]:
    """Resample seeds (starting at ``recipe.seed``) until the Hessian kappa' lands in [low, high]."""
    for offset in range(max_tries):
        candidate = dataclasses.replace(recipe, seed=recipe.seed + offset)
        sigma = generate_spectrum_sigma(candidate)
        kp = kappa_prime(1.0 / np.linalg.eigvalsh(sigma))
        if low <= kp <= high:
            return candidate, sigma
    raise RuntimeError(f"no seed in {max_tries} tries gave kappa' in [{low}, {high}]")
