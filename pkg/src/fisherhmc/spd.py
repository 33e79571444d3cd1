"""Geometry of symmetric positive-definite matrices.

Everything here goes through a symmetric eigendecomposition; the matrices
handled by the sampler are at most a few hundred dimensions wide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NotPositiveDefiniteError",
    "EigenDecomposition",
    "eigendecompose",
    "spd_power",
    "spd_solve_mean",
    "geometric_mean",
    "airm_distance",
    "kappa_prime",
    "gaussian_divergences",
]

# Eigenvalues at or below this fraction of the largest one are rejected.
RELATIVE_EIG_FLOOR = 1e-14


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD is not (numerically)."""


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs of a symmetric matrix, eigenvalues in descending order."""

    U: np.ndarray
    lam: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.lam) @ self.U.T

    def apply(self, fn) -> np.ndarray:
        """Return ``U diag(fn(lam)) U^T``."""
        return (self.U * fn(self.lam)) @ self.U.T


def _symmetrize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def eigendecompose(a: np.ndarray, *, check_spd: bool = True) -> EigenDecomposition:
    a = _symmetrize(a)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError("not positive definite: non-finite entries")
    try:
        lam, U = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"not positive definite: {exc}") from exc
    lam, U = lam[::-1], U[:, ::-1]
    if check_spd:
        top = lam[0] if lam.size else 1.0
        if top <= 0 or lam[-1] <= RELATIVE_EIG_FLOOR * top:
            raise NotPositiveDefiniteError(
                f"not positive definite: eigenvalue range [{lam[-1]:.3e}, {top:.3e}]"
            )
    return EigenDecomposition(U=U, lam=lam)


def spd_power(a: np.ndarray, p: float) -> np.ndarray:
    """Matrix power ``a**p`` of an SPD matrix."""
    return eigendecompose(a).apply(lambda lam: lam**p)


def spd_solve_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unique SPD solution ``S`` of ``S a S = b``.

    Computed as ``a^{-1/2} (a^{1/2} b a^{1/2})^{1/2} a^{-1/2}``, which is the
    geometric mean of ``a^{-1}`` and ``b``.
    """
    ea = eigendecompose(a)
    b = _symmetrize(b)
    if b.shape != ea.U.shape:
        raise ValueError(f"shape mismatch: {ea.U.shape} vs {b.shape}")
    root = np.sqrt(ea.lam)
    a_half = (ea.U * root) @ ea.U.T
    a_inv_half = (ea.U / root) @ ea.U.T
    inner = eigendecompose(a_half @ b @ a_half).apply(np.sqrt)
    return _symmetrize(a_inv_half @ inner @ a_inv_half)


def geometric_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """AIRM geometric mean ``a # b``, the midpoint of the geodesic from a to b."""
    ea = eigendecompose(a)
    b = _symmetrize(b)
    if b.shape != ea.U.shape:
        raise ValueError(f"shape mismatch: {ea.U.shape} vs {b.shape}")
    root = np.sqrt(ea.lam)
    a_half = (ea.U * root) @ ea.U.T
    a_inv_half = (ea.U / root) @ ea.U.T
    inner = eigendecompose(a_inv_half @ b @ a_inv_half).apply(np.sqrt)
    return _symmetrize(a_half @ inner @ a_half)


def airm_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Affine-invariant Riemannian distance ``||log(a^{-1/2} b a^{-1/2})||_F``."""
    a_inv_half = spd_power(a, -0.5)
    lam = eigendecompose(a_inv_half @ _symmetrize(b) @ a_inv_half).lam
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def _positive_vector(values, name: str) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(values, dtype=float))
    if lam.size == 0 or not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise ValueError(f"{name} must be a non-empty vector of positive finite values")
    return lam


def kappa_prime(hessian_spectrum) -> float:
    """Leapfrog condition number ``(sum_i (max(lam)/lam_i)^2)^(1/4)``.

    ``hessian_spectrum`` holds the eigenvalues of the Hessian of the negative
    log density. The minimum over spectra of size d is ``d**0.25``.
    """
    lam = _positive_vector(hessian_spectrum, "hessian_spectrum")
    return float(np.sum((lam.max() / lam) ** 2) ** 0.25)


def gaussian_divergences(sigma_spectrum) -> tuple[float, float, float]:
    """Divergences from N(0, Sigma) to N(0, I) given the spectrum of Sigma.

    Returns ``(fisher, kl_draws, kl_scores)``. The Fisher divergence is
    symmetric under ``lam -> 1/lam``; the two KL variants are not.
    """
    lam = _positive_vector(sigma_spectrum, "sigma_spectrum")
    log_lam = np.log(lam)
    fisher = float(np.sum(lam + 1.0 / lam - 2.0))
    kl_draws = float(0.5 * np.sum(lam - log_lam - 1.0))
    kl_scores = float(0.5 * np.sum(1.0 / lam + log_lam - 1.0))
    return fisher, kl_draws, kl_scores
