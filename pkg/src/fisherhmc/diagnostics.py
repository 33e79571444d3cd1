"""MCMC diagnostics: ESS, split R-hat, RMSE traces, preconditioned kappa'.

Chains are passed as arrays of shape (chains, draws, params); (draws,) and
(chains, draws) are promoted. ESS follows the usual split-chain,
pooled-autocorrelation estimator with Geyer's initial monotone sequence,
computed on raw values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .mass import MassMatrix
from .spd import kappa_prime

__all__ = [
    "DegenerateChainWarning",
    "RunSummary",
    "as_chains",
    "autocovariance",
    "effective_sample_size",
    "ess_with_flags",
    "split_rhat",
    "rmse_trace",
    "preconditioned_kappa",
    "summarize_chains",
    "SUMMARY_FIELDS",
]


class DegenerateChainWarning(UserWarning):
    """A parameter is constant across all draws, so ESS and R-hat are undefined."""


def as_chains(chains) -> np.ndarray:
    a = np.asarray(chains, dtype=float)
    if a.ndim == 1:
        a = a[None, :, None]
    elif a.ndim == 2:
        a = a[:, :, None]
    elif a.ndim != 3:
        raise ValueError("chains must have shape (draws,), (chains, draws) or (chains, draws, params)")
    return a


def _split(a: np.ndarray) -> np.ndarray:
    n = a.shape[1] // 2
    if n < 2:
        raise ValueError("need at least 4 draws per chain")
    return np.concatenate([a[:, :n], a[:, a.shape[1] - n :]], axis=0)


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of a 1-D series (divided by n) via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def _ess_1d(c: np.ndarray) -> float:
    """ESS of one parameter given split chains of shape (m, n)."""
    m, n = c.shape
    acov = np.array([autocovariance(row) for row in c])
    chain_mean = c.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0:
        return float("nan")
    acov_mean = acov.mean(axis=0)
    rho = np.zeros(n)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - acov_mean[1]) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov_mean[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - acov_mean[t + 2]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # Initial monotone sequence: pair sums may not increase.
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + rho[max_t + 1 : max_t + 2].sum()
    # Antithetic chains give tau < 1; cap the implied superefficiency.
    tau = max(tau, 1.0 / np.log10(total))
    return total / tau


def ess_with_flags(chains) -> tuple[np.ndarray, np.ndarray]:
    """Per-parameter ESS and a mask of degenerate (constant) parameters."""
    a = _split(as_chains(chains))
    ess = np.array([_ess_1d(a[:, :, j]) for j in range(a.shape[2])])
    degenerate = ~np.isfinite(ess)
    ess[degenerate] = 0.0
    return ess, degenerate


def effective_sample_size(chains) -> np.ndarray:
    """Per-parameter effective sample size; constant parameters give 0 with a warning."""
    ess, degenerate = ess_with_flags(chains)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} parameter(s) constant; ESS set to 0",
            DegenerateChainWarning,
            stacklevel=2,
        )
    return ess


def split_rhat(chains, return_flags: bool = False):
    """Split-chain potential scale reduction per parameter.

    Constant parameters give NaN (and a warning, or a True flag with
    ``return_flags``).
    """
    a = _split(as_chains(chains))
    m, n, _ = a.shape
    chain_mean = a.mean(axis=1)
    w = a.var(axis=1, ddof=1).mean(axis=0)
    b = n * chain_mean.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / w)
    degenerate = ~(w > 0)
    rhat[degenerate] = np.nan
    if return_flags:
        return rhat, degenerate
    if degenerate.any():
        warnings.warn("constant parameter(s); R-hat undefined", DegenerateChainWarning, stacklevel=2)
    return rhat


def rmse_trace(chains, true_mean, grad_counts) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative-mean RMSE against ``true_mean`` versus gradient evaluations.

    ``grad_counts`` holds the cumulative gradient count at each draw, shape
    (chains, draws). Both outputs are averaged over chains, draw by draw.
    """
    a = as_chains(chains)
    g = np.asarray(grad_counts, dtype=float).reshape(a.shape[0], a.shape[1])
    steps = np.arange(1, a.shape[1] + 1)[None, :, None]
    cum_mean = np.cumsum(a, axis=1) / steps
    err = cum_mean - np.asarray(true_mean, dtype=float)[None, None, :]
    rmse = np.sqrt(np.mean(err**2, axis=2))
    return g.mean(axis=0), rmse.mean(axis=0)


def preconditioned_kappa(sigma, mass) -> float:
    """kappa' of the whitened Hessian ``B^T Sigma^{-1} B`` where ``B B^T = M^{-1}``.

    ``mass`` is a MassMatrix or a dense inverse-mass array.
    """
    if isinstance(mass, MassMatrix):
        b = mass.factor()
    else:
        b = linalg.cholesky(np.asarray(mass, dtype=float), lower=True)
    chol = linalg.cholesky(np.asarray(sigma, dtype=float), lower=True)
    w = linalg.solve_triangular(chol, b, lower=True)
    lam = linalg.eigvalsh(w.T @ w)
    return kappa_prime(lam)


SUMMARY_FIELDS = [
    "target",
    "sampler",
    "replication",
    "estimator_kind",
    "dim",
    "chains",
    "num_warmup",
    "num_draws",
    "n_grad",
    "n_grad_warmup",
    "n_grad_sampling",
    "n_divergent",
    "min_ess",
    "max_rhat",
    "ess_per_grad",
    "grad_per_ess",
    "mean_tree_depth",
    "step_size",
    "converged",
    "wall_time",
    "error",
    "ess",
    "rhat",
]


@dataclass
class RunSummary:
    """One (target, sampler, replication) run across its chains."""

    ess: np.ndarray
    rhat: np.ndarray
    n_grad_warmup: int
    n_grad_sampling: int
    n_divergent: int
    wall_time: float
    mean_tree_depth: float = float("nan")
    step_size: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def n_grad(self) -> int:
        return self.n_grad_warmup + self.n_grad_sampling

    @property
    def min_ess(self) -> float:
        return float(np.min(self.ess))

    @property
    def ess_per_grad(self) -> float:
        return self.min_ess / self.n_grad if self.n_grad else float("nan")

    @property
    def grad_per_ess(self) -> float:
        return self.n_grad / self.min_ess if self.min_ess > 0 else float("inf")

    def converged(self, min_ess: float = 200.0) -> bool:
        """No post-warmup divergences and every parameter's ESS above ``min_ess``."""
        return self.n_divergent == 0 and self.min_ess > min_ess

    def to_row(self) -> dict:
        row = {k: self.meta.get(k) for k in ("target", "sampler", "replication", "estimator_kind",
                                              "dim", "chains", "num_warmup", "num_draws")}
        row.update(
            n_grad=self.n_grad,
            n_grad_warmup=self.n_grad_warmup,
            n_grad_sampling=self.n_grad_sampling,
            n_divergent=self.n_divergent,
            min_ess=self.min_ess,
            max_rhat=float(np.nanmax(self.rhat)) if np.any(np.isfinite(self.rhat)) else float("nan"),
            ess_per_grad=self.ess_per_grad,
            grad_per_ess=self.grad_per_ess,
            mean_tree_depth=self.mean_tree_depth,
            step_size=self.step_size,
            converged=self.converged(),
            wall_time=self.wall_time,
            error=self.meta.get("error", ""),
            ess=[float(v) for v in self.ess],
            rhat=[float(v) for v in self.rhat],
        )
        return {k: row[k] for k in SUMMARY_FIELDS}


def summarize_chains(results, meta: dict | None = None) -> RunSummary:
    """Pool a list of ChainResult into a RunSummary (gradients include warmup)."""
    draws = np.stack([r.draws for r in results])
    ess, _ = ess_with_flags(draws)
    rhat, _ = split_rhat(draws, return_flags=True)
    n_warm = [r.num_warmup for r in results]
    depth = np.concatenate([r.tree_depth[w:] for r, w in zip(results, n_warm)])
    return RunSummary(
        ess=ess,
        rhat=rhat,
        n_grad_warmup=sum(r.n_grad_warmup for r in results),
        n_grad_sampling=sum(r.n_grad_sampling for r in results),
        n_divergent=sum(r.n_divergent for r in results),
        wall_time=sum(r.wall_time for r in results),
        mean_tree_depth=float(depth.mean()),
        step_size=float(np.mean([r.step_size for r in results])),
        meta=dict(meta or {}),
    )

