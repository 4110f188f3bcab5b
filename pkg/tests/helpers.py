"""Naive dense reference implementations and random instance builders.

These are written directly from the algorithm statements, share no code
with the package beyond data containers, and are used as oracles.
"""

import math

import numpy as np

from dpmc.data import ObservedMatrix
from dpmc.linalg import SparseRows


def observed_from_dense(Ystar, mask, L=math.inf, means=None):
    m = Ystar.shape[0]
    rows = SparseRows.from_dense(np.where(mask, Ystar, 0.0), mask)
    return ObservedMatrix(rows, np.zeros(m) if means is None else means, L, -math.inf, math.inf)


def random_instance(rng, m, n, rank=1, frac=0.5, row_bound=None):
    """Low-rank ``Y*`` with a random mask; rows optionally scaled into the
    ``row_bound`` ball on the observed entries."""
    Y = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    mask = rng.random((m, n)) < frac
    if row_bound is not None:
        norms = np.sqrt(((Y * mask) ** 2).sum(axis=1))
        scale = np.where(norms > row_bound, row_bound / np.maximum(norms, 1e-300), 1.0)
        Y = Y * scale[:, None]
    return Y, mask


def dense_top_eig(W):
    evals, evecs = np.linalg.eigh(W)
    v = evecs[:, -1]
    j = np.flatnonzero(np.abs(v) > 1e-12)[0]
    if v[j] < 0:
        v = -v
    return v, evals[-1]


def dense_private_fw(Ystar, mask, k, T, L, sigmas, noise, beta=0.1, project=True):
    """Dense m x n private Frank-Wolfe against a fixed noise tape.

    Iteration t: A = P(Y - Y*), W = A^T A + N_t, (v, lam^2) = top eigenpair,
    lam' = lam + sqrt(sigma ln(n/beta)) n^(1/4), u = A v / lam',
    Y <- Pi((1 - 1/T) Y - (k/T) u v^T).
    """
    m, n = Ystar.shape
    Y = np.zeros((m, n))
    iterates = []
    for t in range(T):
        A = np.where(mask, Y - Ystar, 0.0)
        W = A.T @ A + noise[t]
        v, lam2 = dense_top_eig(W)
        lam = math.sqrt(max(lam2, 0.0))
        lp = lam + math.sqrt(sigmas[t] * math.log(n / beta)) * n**0.25
        if lp == 0:
            iterates.append(Y.copy())
            continue
        u = A @ v / lp
        Y = (1 - 1 / T) * Y - (k / T) * np.outer(u, v)
        if project:
            for i in range(m):
                nrm = math.sqrt(sum(Y[i, j] ** 2 for j in range(n) if mask[i, j]))
                if nrm > L:
                    Y[i] *= L / nrm
        iterates.append(Y.copy())
    return Y, iterates


def dense_private_svd(Ystar, mask, r, L, noise):
    m, n = Ystar.shape
    P = np.where(mask, Ystar, 0.0)
    Pc = P.copy()
    for i in range(m):
        nrm = np.linalg.norm(Pc[i])
        if nrm > L:
            Pc[i] *= L / nrm
    W = Pc.T @ Pc + noise
    evals, evecs = np.linalg.eigh(W)
    V = evecs[:, ::-1][:, :r]
    return (m * n / mask.sum()) * P @ V @ V.T


def dense_pgd(Ystar, mask, k, steps):
    """Noiseless projected gradient descent with an SVD-based projection."""
    Y = np.zeros_like(Ystar)
    for eta in steps:
        Y = Y - eta * np.where(mask, Y - Ystar, 0.0)
        U, s, Vt = np.linalg.svd(Y, full_matrices=False)
        s = brute_water_fill(s, k)
        Y = (U * s) @ Vt
    return Y


def brute_water_fill(lam, k, grid=None):
    """Find tau with sum(max(0, lam - tau)) == k by bisection on tau."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.sum() <= k:
        return lam.copy()
    lo, hi = 0.0, float(lam.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(lam - mid, 0).sum() > k:
            lo = mid
        else:
            hi = mid
    return np.maximum(lam - 0.5 * (lo + hi), 0.0)


def loop_risk(Y, Ystar, mask):
    total, count = 0.0, 0
    for i in range(Ystar.shape[0]):
        for j in range(Ystar.shape[1]):
            if mask[i, j]:
                total += (Y[i, j] - Ystar[i, j]) ** 2
                count += 1
    return total / (2 * count)


def nuclear_norm(Y):
    return float(np.linalg.svd(Y, compute_uv=False).sum())
