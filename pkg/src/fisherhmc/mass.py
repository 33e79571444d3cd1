"""Mass-matrix families and their momentum algebra.

Each family stores the inverse mass ``M^{-1}`` in a structured form together
with an affine factor ``B`` (``B B^T = M^{-1}``). Sampling with mass ``M`` is
the same as sampling ``y = B^{-1}(x - mu)`` with identity mass, which is what
``to_adapted``/``from_adapted`` expose for testing.

Momenta follow ``rho ~ N(0, M)``; the velocity is ``M^{-1} rho`` and the
kinetic energy ``rho . M^{-1} rho / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = ["MassMatrix", "DiagonalMass", "DenseMass", "LowRankMass", "KIND_CODES"]

# Codes understood by the compiled kernel.
KIND_CODES = {"diagonal": 0, "dense": 1, "low_rank": 2}


class MassMatrix:
    """Interface shared by the three families."""

    kind: str = ""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def velocity(self, rho: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def kinetic(self, rho: np.ndarray) -> float:
        return 0.5 * float(rho @ self.velocity(rho))

    def momentum_from_normal(self, z: np.ndarray) -> np.ndarray:
        """Map a standard normal vector to ``B^{-T} z ~ N(0, M)``."""
        raise NotImplementedError

    def sample_momentum(self, rng: np.random.Generator) -> np.ndarray:
        return self.momentum_from_normal(rng.standard_normal(self.dim))

    def inv_mass_matrix(self) -> np.ndarray:
        raise NotImplementedError

    def factor(self) -> np.ndarray:
        """Dense B with ``B B^T = M^{-1}``."""
        raise NotImplementedError

    @property
    def location(self) -> np.ndarray:
        return np.zeros(self.dim)

    def to_adapted(self, x: np.ndarray) -> np.ndarray:
        return linalg.solve(self.factor(), x - self.location)

    def from_adapted(self, y: np.ndarray) -> np.ndarray:
        return self.factor() @ y + self.location

    def kernel_spec(self) -> tuple:
        """(kind code, arrays...) in the layout the compiled kernel reads."""
        raise NotImplementedError


@dataclass(eq=False)
class DiagonalMass(MassMatrix):
    """``M^{-1} = diag(sigma2)``; ``mu`` is the matching location estimate."""

    sigma2: np.ndarray
    mu: np.ndarray | None = None
    kind: str = field(default="diagonal", init=False)

    def __post_init__(self):
        self.sigma2 = np.ascontiguousarray(self.sigma2, dtype=float)
        if self.sigma2.ndim != 1 or np.any(~np.isfinite(self.sigma2)) or np.any(self.sigma2 <= 0):
            raise ValueError("sigma2 must be a vector of positive finite values")
        self.mu = np.zeros_like(self.sigma2) if self.mu is None else np.asarray(self.mu, dtype=float)
        self._scale = np.sqrt(self.sigma2)

    @classmethod
    def identity(cls, dim: int) -> "DiagonalMass":
        return cls(np.ones(dim))

    @property
    def dim(self):
        return self.sigma2.size

    @property
    def location(self):
        return self.mu

    def velocity(self, rho):
        return self.sigma2 * rho

    def momentum_from_normal(self, z):
        return z / self._scale

    def inv_mass_matrix(self):
        return np.diag(self.sigma2)

    def factor(self):
        return np.diag(self._scale)

    def to_adapted(self, x):
        return (x - self.mu) / self._scale

    def from_adapted(self, y):
        return self._scale * y + self.mu

    def kernel_spec(self):
        return (KIND_CODES["diagonal"], self.sigma2)


@dataclass(eq=False)
class DenseMass(MassMatrix):
    """Full SPD inverse mass with its lower Cholesky factor."""

    inv_mass: np.ndarray
    mu: np.ndarray | None = None
    gamma: float = 0.0
    kind: str = field(default="dense", init=False)

    def __post_init__(self):
        a = np.asarray(self.inv_mass, dtype=float)
        self.inv_mass = np.ascontiguousarray(0.5 * (a + a.T))
        try:
            self.chol = linalg.cholesky(self.inv_mass, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError(f"inverse mass is not positive definite: {exc}") from exc
        d = self.inv_mass.shape[0]
        self.mu = np.zeros(d) if self.mu is None else np.asarray(self.mu, dtype=float)

    @property
    def dim(self):
        return self.inv_mass.shape[0]

    @property
    def location(self):
        return self.mu

    def velocity(self, rho):
        return self.inv_mass @ rho

    def momentum_from_normal(self, z):
        return linalg.solve_triangular(self.chol, z, lower=True, trans="T")

    def inv_mass_matrix(self):
        return self.inv_mass.copy()

    def factor(self):
        return self.chol.copy()

    def to_adapted(self, x):
        return linalg.solve_triangular(self.chol, x - self.mu, lower=True)

    def kernel_spec(self):
        return (KIND_CODES["dense"], self.inv_mass)


@dataclass(eq=False)
class LowRankMass(MassMatrix):
    """``M^{-1} = diag(sigma) (I + U (diag(lam) - I) U^T) diag(sigma)``.

    The factor is ``B = diag(sigma) (I + U (diag(lam)^{1/2} - I) U^T)``, i.e. a
    low-rank stretch in the sigma-whitened space followed by the diagonal
    rescale. Every operation costs O(rd).
    """

    sigma: np.ndarray
    U: np.ndarray
    lam: np.ndarray
    mu1: np.ndarray | None = None
    mu2: np.ndarray | None = None
    cutoff: float = 2.0
    gamma: float = 1e-5
    kind: str = field(default="low_rank", init=False)

    def __post_init__(self):
        self.sigma = np.ascontiguousarray(self.sigma, dtype=float)
        d = self.sigma.size
        if np.any(~np.isfinite(self.sigma)) or np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive and finite")
        self.U = np.ascontiguousarray(np.asarray(self.U, dtype=float).reshape(d, -1))
        self.lam = np.ascontiguousarray(self.lam, dtype=float).reshape(-1)
        if self.U.shape[1] != self.lam.size:
            raise ValueError("U and lam disagree on the rank")
        if np.any(~np.isfinite(self.lam)) or np.any(self.lam <= 0):
            raise ValueError("lam must be positive and finite")
        self.mu1 = np.zeros(d) if self.mu1 is None else np.asarray(self.mu1, dtype=float)
        self.mu2 = np.zeros(d) if self.mu2 is None else np.asarray(self.mu2, dtype=float)

    @property
    def dim(self):
        return self.sigma.size

    @property
    def rank(self) -> int:
        return self.lam.size

    @property
    def location(self):
        # F(y) = F2(F1(y)) with F1(y) = W y + mu1 and F2(z) = sigma * z + mu2.
        return self.sigma * self.mu1 + self.mu2

    def _stretch(self, t, power):
        """``(I + U (lam**power - 1) U^T) t``."""
        if self.rank == 0:
            return t
        return t + self.U @ ((self.lam**power - 1.0) * (self.U.T @ t))

    def velocity(self, rho):
        return self.sigma * self._stretch(self.sigma * rho, 1.0)

    def momentum_from_normal(self, z):
        return self._stretch(z, -0.5) / self.sigma

    def inv_mass_matrix(self):
        inner = np.eye(self.dim) + (self.U * (self.lam - 1.0)) @ self.U.T
        return self.sigma[:, None] * inner * self.sigma[None, :]

    def factor(self):
        inner = np.eye(self.dim) + (self.U * (np.sqrt(self.lam) - 1.0)) @ self.U.T
        return self.sigma[:, None] * inner

    def to_adapted(self, x):
        return self._stretch((x - self.mu2) / self.sigma - self.mu1, -0.5)

    def from_adapted(self, y):
        return self.sigma * (self._stretch(y, 0.5) + self.mu1) + self.mu2

    def kernel_spec(self):
        return (KIND_CODES["low_rank"], self.sigma, self.U, self.lam)
