"""Private SVD completion and private projected gradient descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .linalg import covariance_accumulate, top_r_subspace
from .models import DenseModel, FactoredModel
from .privacy import RngStream, noise_scale, progressive_sigmas, symmetric_noise_matrix

__all__ = [
    "SvdConfig", "PgdConfig", "step_schedule", "top_r_subspace", "nuclear_project",
    "run_private_svd", "run_private_pgd",
]

# relative eigenvalue floor below which PGD drops a direction instead of
# dividing by it
DROP_TOL = 1e-8


@dataclass(frozen=True)
class SvdConfig:
    r: int
    L: float

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if not self.L > 0:
            raise ValueError("L must be > 0")


@dataclass(frozen=True)
class PgdConfig:
    k: float
    T: int
    steps: tuple
    L: float
    noise_schedule: str = "uniform"

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be > 0")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        steps = tuple(float(s) for s in self.steps)
        if len(steps) != self.T:
            raise ValueError(f"step schedule has {len(steps)} entries, expected T={self.T}")
        if any(not s > 0 for s in steps):
            raise ValueError("step sizes must be > 0")
        object.__setattr__(self, "steps", steps)


def step_schedule(spec, T):
    """Step sizes for ``t = 1..T``.

    ``spec`` is a number (constant step), ``"inv_sqrt"`` (``t**-0.5``),
    ``"inv"`` (``1/t``) or an explicit sequence of length ``T``.
    """
    t = np.arange(1, T + 1, dtype=np.float64)
    if isinstance(spec, str):
        if spec == "inv_sqrt":
            return tuple(t**-0.5)
        if spec == "inv":
            return tuple(1 / t)
        spec = float(spec)
    if np.ndim(spec) == 0:
        return (float(spec),) * T
    return tuple(float(s) for s in spec)


def nuclear_project(singular_values, k):
    """Water-filling: shrink ``singular_values`` by a common ``tau`` (floored
    at 0) so they sum to ``k``; returned unchanged if they already sum to at
    most ``k``.

    ``singular_values`` must be non-negative and sorted non-increasing.
    """
    lam = np.asarray(singular_values, dtype=np.float64)
    if k < 0:
        raise ValueError("k must be >= 0")
    if lam.sum() <= k:
        return lam.copy()
    if k == 0:
        return np.zeros_like(lam)
    cums = np.cumsum(lam)
    j = np.arange(1, len(lam) + 1)
    taus = (cums - k) / j
    # largest j whose j-th value survives the shrink; j = 1 always does, up
    # to rounding when k is tiny
    alive = np.flatnonzero(lam - taus > 0)
    rho = alive[-1] if len(alive) else 0
    return np.maximum(lam - taus[rho], 0.0)


def run_private_svd(obs, cfg, params, seed, *, sigma=None):
    """Single noisy release of the top-r right subspace, then local projection.

    Each user's completed row is ``(m n / |Omega|) P_Omega(Y*_i) V_r V_r^T``;
    the result is returned in factored form (basis ``V_r^T``).
    """
    if obs.nnz == 0:
        raise ValueError("no observed entries")
    n, m = obs.n, obs.m
    if cfg.r > n:
        raise ValueError(f"r={cfg.r} exceeds n={n}")
    norms = obs.rows.row_norms()
    factor = np.ones(m)
    over = norms > cfg.L
    factor[over] = cfg.L / norms[over]
    clipped = obs.rows.with_data(obs.rows.data * factor[obs.rows.row_ids])
    if sigma is None:
        sigma = noise_scale("svd", cfg.L, 1, params).sigma
    W = covariance_accumulate(clipped)
    W = W + symmetric_noise_matrix(n, sigma, RngStream(seed, "svd", 1, "cov-noise"))
    V = top_r_subspace(W, cfg.r)
    scale = m * n / obs.nnz
    coef = scale * (obs.rows.to_csr() @ V)
    return FactoredModel(V.T.copy(), np.asarray(coef), obs.means.copy(), obs.rating_lo, obs.rating_hi,
                         k=float("nan"), L=cfg.L, T=1, diagnostics={"sigma": sigma, "scale": scale})


def run_private_pgd(obs, cfg, params, seed, *, sigma=None, callback=None):
    """Projected gradient descent on the nuclear-norm ball with a noisy
    spectral projection; stores the iterate densely.

    The gradient step moves against the residual, ``Y <- Y - eta_t P_Omega(Y - Y*)``.
    """
    m, n = obs.m, obs.n
    rows = obs.rows
    rid = rows.row_ids
    if sigma is None:
        base = noise_scale("pgd", cfg.L, cfg.T, params).sigma
        sigmas = progressive_sigmas(base, cfg.T) if cfg.noise_schedule == "progressive" else np.full(cfg.T, base)
    else:
        sigmas = np.full(cfg.T, float(sigma))
    Y = np.zeros((m, n))
    dropped = 0
    for t in range(1, cfg.T + 1):
        Y[rid, rows.indices] -= cfg.steps[t - 1] * (Y[rid, rows.indices] - rows.data)
        W = Y.T @ Y
        W = 0.5 * (W + W.T)
        W += symmetric_noise_matrix(n, float(sigmas[t - 1]), RngStream(seed, "pgd", t, "cov-noise"))
        evals, evecs = scipy.linalg.eigh(W)
        evals, evecs = evals[::-1], evecs[:, ::-1]
        lam = np.sqrt(np.maximum(evals, 0.0))
        if lam[0] == 0:
            Y = np.zeros((m, n))
        else:
            keep = lam > DROP_TOL * lam[0]
            dropped += int((~keep).sum())
            V = evecs[:, keep]
            U = (Y @ V) / lam[keep]
            Z = nuclear_project(lam[keep], cfg.k)
            Y = (U * Z) @ V.T
        if callback is not None:
            callback(t, Y)
    return DenseModel(Y, obs.means.copy(), obs.rating_lo, obs.rating_hi, cfg.k, cfg.L, cfg.T,
                      {"sigmas": list(map(float, sigmas)), "dropped_directions": dropped})
