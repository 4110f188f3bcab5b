"""Private Frank-Wolfe matrix completion and its non-private reference.

The iterate is kept factored: a shared basis of broadcast unit vectors and a
per-user coefficient row. The row projection scales a whole user row by one
scalar, so every row stays in the span of the broadcast basis and memory is
``O((m + n) T)``.

Each iteration ``t = 1..T``:

1. every user returns the Gram contribution ``A_i^T A_i`` of its residual
   ``A_i = P_Omega(Y_i - Y*_i)`` (centred space);
2. the server adds symmetric Gaussian noise, takes the top eigenpair
   ``(v, lambda_hat**2)`` and broadcasts ``v`` with the inflated
   ``lambda_prime = lambda_hat + sqrt(sigma ln(n / beta)) n**(1/4)``;
3. every user sets ``u_i = A_i . v / lambda_prime`` and
   ``Y_i <- Pi_L((1 - 1/T) Y_i - (k/T) u_i v^T)``.

Step 3 only reads the user's own row and the broadcasts, which is what makes
the overall output jointly differentially private.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import covariance_accumulate, private_oja, top_eig_exact
from .models import FactoredModel
from .privacy import RngStream, noise_scale, progressive_sigmas, symmetric_noise_matrix

BACKENDS = ("exact", "oja")
SCHEDULES = ("uniform", "progressive")


@dataclass(frozen=True)
class FwConfig:
    k: float
    T: int
    L: float
    beta: float = 0.1
    backend: str = "exact"
    oja_iters: int = 100
    noise_schedule: str = "uniform"

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError("k must be >= 0")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.L > 0:
            raise ValueError("L must be > 0")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.oja_iters < 1:
            raise ValueError("oja_iters must be >= 1")
        if self.noise_schedule not in SCHEDULES:
            raise ValueError(f"noise_schedule must be one of {SCHEDULES}")


@dataclass(frozen=True)
class GlobalBroadcast:
    vector: np.ndarray
    lambda_prime: float
    iteration: int


@dataclass
class FwTrace:
    """What the server released, plus optional recorded noise."""

    broadcasts: list = field(default_factory=list)
    noise: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    u_norm_violations: int = 0


def lambda_prime(lambda_hat, sigma, n, beta):
    """``lambda_hat + sqrt(sigma * ln(n / beta)) * n**0.25``."""
    return lambda_hat + math.sqrt(sigma * math.log(n / beta)) * n**0.25


def suggest_T(mode, k, L, n, m, n_obs, epsilon):
    """Iteration count from the risk-optimal rates (unit constants, no log factors).

    ``empirical``: ``k^(4/5) eps^(2/5) / (n^(1/5) L^(4/5))``;
    ``generalization``: ``k^(4/3) / (|Omega| (m + n))^(1/3)``.
    """
    if mode == "empirical":
        t = k**0.8 * epsilon**0.4 / (n**0.2 * L**0.8)
    elif mode == "generalization":
        t = k ** (4 / 3) / (n_obs * (m + n)) ** (1 / 3)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return max(1, int(round(t)))


def project_row_factored(coef, basis, items, L):
    """Scale a coefficient row so its reconstruction restricted to ``items``
    has l2 norm at most ``L``."""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.size == 0 or len(items) == 0:
        return coef
    norm = np.linalg.norm(coef @ basis[:, items])
    if norm > L:
        return coef * (L / norm)
    return coef


def local_update(coef, basis, items, values, broadcast, cfg):
    """One user's update.

    Parameters
    ----------
    coef : (t-1,) array
        Current coefficient row for ``basis`` (shape ``(t-1, n)``).
    items, values : arrays
        The user's observed items and centred ratings.
    broadcast : GlobalBroadcast

    Returns
    -------
    new_coef : (t,) array
        Projected coefficients for the basis extended by ``broadcast.vector``.
    residual : array
        ``P_Omega(Y_i - Y*_i)`` on ``items`` after the update; its outer
        product is the user's Gram contribution.
    """
    if not broadcast.lambda_prime > 0:
        raise ValueError("lambda_prime must be > 0")
    v = broadcast.vector
    items = np.asarray(items, dtype=np.int64)
    pred = np.asarray(coef) @ basis[:, items] if len(coef) else np.zeros(len(items))
    u_hat = float((pred - values) @ v[items]) / broadcast.lambda_prime
    new_coef = np.append((1 - 1 / cfg.T) * np.asarray(coef, dtype=np.float64), -(cfg.k / cfg.T) * u_hat)
    new_basis = np.vstack([basis, v]) if len(coef) else v[None, :]
    new_coef = project_row_factored(new_coef, new_basis, items, cfg.L)
    residual = new_coef @ new_basis[:, items] - values
    return new_coef, residual


class _LocalState:
    """All users' local state, updated together.

    Every operation is row-local: user ``i``'s state only depends on its own
    observed row and the broadcasts.
    """

    def __init__(self, obs, cfg, project=True):
        self.rows = obs.rows
        self.cfg = cfg
        self.project = project
        # coefficient row i is scale[i] * raw[i]; decay and projection only
        # touch the per-row scale
        self.raw = np.zeros((obs.m, cfg.T))
        self.scale = np.ones(obs.m)
        self.basis = np.zeros((cfg.T, obs.n))
        self.t = 0
        self.row_ids = obs.rows.row_ids
        # reconstruction on the observed entries, kept in sync with the coefficients
        self.pred = np.zeros(obs.nnz)
        self.u_norm_violations = 0

    def residual(self):
        return self.pred - self.rows.data

    def apply(self, b):
        cfg, rows = self.cfg, self.rows
        v = b.vector
        res = self.pred - rows.data
        u_hat = rows.row_sums(res * v[rows.indices]) / b.lambda_prime
        if u_hat @ u_hat > 1 + 1e-9:
            self.u_norm_violations += 1
        decay = 1 - 1 / cfg.T
        step = -(cfg.k / cfg.T) * u_hat
        t = self.t
        if decay == 0:
            self.raw[:, :t] = 0.0
            self.scale[:] = 1.0
        else:
            self.scale *= decay
        if self.scale.min() < 1e-150:
            self.raw[:, :t] *= self.scale[:, None]
            self.scale[:] = 1.0
        self.raw[:, t] = step / self.scale
        self.basis[t] = v
        self.t = t + 1
        self.pred = decay * self.pred + step[self.row_ids] * v[rows.indices]
        if self.project:
            norms = np.sqrt(rows.row_sums(self.pred**2))
            factor = np.ones(len(norms))
            over = norms > cfg.L
            factor[over] = cfg.L / norms[over]
            self.scale *= factor
            self.pred = self.pred * factor[self.row_ids]
        return self.pred - rows.data

    @property
    def coef(self):
        return self.raw[:, : self.t] * self.scale[:, None]

    def model(self, obs, diagnostics):
        return FactoredModel(
            self.basis[: self.t].copy(), self.coef, obs.means.copy(),
            obs.rating_lo, obs.rating_hi, self.cfg.k, self.cfg.L, self.cfg.T, diagnostics,
        )


def apply_broadcasts(obs, cfg, broadcasts, project=True):
    """Replay the local side of the algorithm against fixed broadcasts."""
    state = _LocalState(obs, cfg, project)
    for b in broadcasts:
        state.apply(b)
    return state.model(obs, {})


def _iteration_sigmas(cfg, params, n_rounds_mech, mech, override):
    if override is not None:
        return np.full(cfg.T, float(override))
    sigma = noise_scale(mech, cfg.L, n_rounds_mech, params).sigma
    if cfg.noise_schedule == "progressive":
        return progressive_sigmas(sigma, cfg.T)
    return np.full(cfg.T, sigma)


def run_private_fw(obs, cfg, params, seed, *, sigma=None, record_noise=False, callback=None, threads=1):
    """Private Frank-Wolfe on an observed (centred, row-clipped) matrix.

    Parameters
    ----------
    obs : ObservedMatrix
    cfg : FwConfig
    params : PrivacyParams
        May be ``None`` when ``sigma`` is given.
    seed : int
        Master seed for all noise streams.
    sigma : float, optional
        Overrides the calibrated noise scale (``0`` gives the noiseless test
        mode, in which ``lambda_prime == lambda_hat``).
    record_noise : bool
        Keep every noise matrix in ``model.diagnostics["trace"]``.
    callback : callable, optional
        Called as ``callback(t, model)`` after every iteration.

    Returns
    -------
    FactoredModel
        ``diagnostics["trace"]`` holds the :class:`FwTrace` of broadcasts.
    """
    return _fw_loop(obs, cfg, params, seed, sigma, record_noise, callback, threads, project=True)


def _fw_loop(obs, cfg, params, seed, sigma_override, record_noise, callback, threads, project):
    n = obs.n
    state = _LocalState(obs, cfg, project)
    trace = FwTrace()
    root = RngStream(seed, "fw")
    if cfg.backend == "oja":
        sigmas = _iteration_sigmas(cfg, params, cfg.T * cfg.oja_iters, "oja", sigma_override)
    else:
        sigmas = _iteration_sigmas(cfg, params, cfg.T, "fw", sigma_override)
    residual = state.residual()
    for t in range(1, cfg.T + 1):
        sigma_t = float(sigmas[t - 1])
        res_rows = obs.rows.with_data(residual)
        if cfg.backend == "exact":
            W = covariance_accumulate(res_rows, threads=threads)
            N = symmetric_noise_matrix(n, sigma_t, root.child(iteration=t, purpose="cov-noise"))
            if record_noise:
                trace.noise.append(N)
            eig = top_eig_exact(W + N, stream=root.child(iteration=t, purpose="eig-start"))
        else:
            eig = private_oja(res_rows, cfg.L, params, cfg.oja_iters,
                              root.child(iteration=t, purpose="oja"), sigma=sigma_t)
        trace.sigmas.append(sigma_t)
        lp = lambda_prime(eig.lambda_hat, sigma_t, n, cfg.beta)
        if lp == 0:
            # noiseless mode with a zero residual: nothing left to fit
            trace.skipped.append(t)
            continue
        b = GlobalBroadcast(eig.vector, lp, t)
        trace.broadcasts.append(b)
        residual = state.apply(b)
        if callback is not None:
            callback(t, state.model(obs, {}))
    trace.u_norm_violations = state.u_norm_violations
    return state.model(obs, {"trace": trace})


def run_nonprivate_fw(obs, k, T, threads=1):
    """Frank-Wolfe with the exact linear oracle and fixed step ``1/T``.

    Each step adds ``Z/T`` with ``Z = -k u v^T`` for the top singular pair of
    the current residual; no noise and no row projection.
    """
    # L is only read by the row projection, which is off here
    cfg = FwConfig(k=k, T=T, L=1.0)
    model = _fw_loop(obs, cfg, None, 0, 0.0, False, None, threads, project=False)
    model.L = obs.row_bound
    return model
