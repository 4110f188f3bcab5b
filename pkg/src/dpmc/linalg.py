"""Sparse row storage, Gram-matrix kernels, top-eigenpair extraction and
the private Oja iteration."""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .privacy import gaussian_vector, noise_scale

# rows per chunk in the Gram reduction; fixed so the summation order never
# depends on the thread count
CHUNK_ROWS = 2048
# chunks with at most this many dense entries use a dense BLAS product
DENSE_BLOCK = 1 << 17


@dataclass(frozen=True)
class SparseRows:
    """m rows over n columns in CSR layout; column indices strictly increase per row."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        data = np.asarray(self.data, dtype=np.float64)
        if indptr.ndim != 1 or len(indptr) < 1 or indptr[0] != 0 or indptr[-1] != len(indices):
            raise ValueError("malformed indptr")
        if len(indices) != len(data):
            raise ValueError("indices and data differ in length")
        if len(indices):
            if indices.min() < 0 or indices.max() >= self.n:
                raise ValueError("column index out of range")
            rid = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
            same_row = rid[1:] == rid[:-1]
            if np.any(np.diff(indices)[same_row] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)

    @property
    def m(self):
        return len(self.indptr) - 1

    @property
    def nnz(self):
        return len(self.indices)

    @functools.cached_property
    def row_ids(self):
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.m), np.diff(self.indptr))

    def row(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_lengths(self):
        return np.diff(self.indptr)

    def row_sums(self, values):
        """Per-row sums of an nnz-length array (0 for empty rows)."""
        out = np.zeros(self.m)
        lens = self.row_lengths()
        nonempty = lens > 0
        if self.nnz:
            out[nonempty] = np.add.reduceat(values, self.indptr[:-1][nonempty])
        return out

    def row_norms(self):
        return np.sqrt(self.row_sums(self.data**2))

    def with_data(self, data):
        """Same sparsity pattern, new values (the pattern is not re-validated)."""
        data = np.asarray(data, dtype=np.float64)
        if data.shape != self.data.shape:
            raise ValueError("data length does not match the sparsity pattern")
        out = object.__new__(SparseRows)
        for name, value in (("indptr", self.indptr), ("indices", self.indices), ("data", data), ("n", self.n)):
            object.__setattr__(out, name, value)
        if "row_ids" in self.__dict__:
            out.__dict__["row_ids"] = self.row_ids
        return out

    def to_csr(self):
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.m, self.n))

    def to_dense(self):
        out = np.zeros((self.m, self.n))
        out[self.row_ids, self.indices] = self.data
        return out

    @classmethod
    def from_dense(cls, A, mask=None):
        A = np.asarray(A, dtype=np.float64)
        if mask is None:
            mask = A != 0
        rows, cols = np.nonzero(mask)
        indptr = np.zeros(A.shape[0] + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(np.cumsum(indptr), cols, A[rows, cols], A.shape[1])


@dataclass
class EigPair:
    vector: np.ndarray
    lambda_hat: float
    diagnostics: dict = field(default_factory=dict)


def sign_convention(v, tol=1e-12):
    """Flip ``v`` so its first coordinate with ``|v_j| > tol`` is positive."""
    v = np.asarray(v, dtype=np.float64)
    big = np.flatnonzero(np.abs(v) > tol)
    if len(big) and v[big[0]] < 0:
        return -v
    return v


def _chunk_gram(rows, csr, lo, hi):
    a, b = rows.indptr[lo], rows.indptr[hi]
    if (hi - lo) * rows.n <= DENSE_BLOCK:
        block = np.zeros((hi - lo, rows.n))
        block[rows.row_ids[a:b] - lo, rows.indices[a:b]] = rows.data[a:b]
        return block.T @ block
    block = csr[lo:hi]
    return (block.T @ block).toarray()


def _tree_sum(parts):
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def covariance_accumulate(rows, threads=1):
    """Dense ``sum_i A_i^T A_i`` over the rows of ``rows``.

    Rows are grouped into fixed chunks of ``CHUNK_ROWS``; chunk Gram matrices
    are combined by a pairwise tree so the result is bit-identical for any
    ``threads``.
    """
    n = rows.n
    if rows.m == 0 or rows.nnz == 0:
        return np.zeros((n, n))
    csr = rows.to_csr() if CHUNK_ROWS * n > DENSE_BLOCK else None
    bounds = [(lo, min(lo + CHUNK_ROWS, rows.m)) for lo in range(0, rows.m, CHUNK_ROWS)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _chunk_gram(rows, csr, *b), bounds))
    else:
        parts = [_chunk_gram(rows, csr, lo, hi) for lo, hi in bounds]
    W = _tree_sum(parts)
    # the products can leave ulp-level asymmetry; IEEE addition commutes, so
    # this is exactly symmetric
    return 0.5 * (W + W.T)


def sparse_gram_matvec(rows, v):
    """``A^T (A v)`` in two sparse passes; never forms ``A^T A``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (rows.n,):
        raise ValueError(f"vector length {v.shape} does not match n={rows.n}")
    Av = rows.row_sums(rows.data * v[rows.indices])
    return np.bincount(rows.indices, weights=rows.data * Av[rows.row_ids], minlength=rows.n)


def top_eig_exact(W, tol=1e-9, max_iter=1000, stream=None):
    """Largest-algebraic eigenpair of a symmetric matrix.

    Uses a LAPACK symmetric eigensolver for the top eigenpair. If the top
    eigenvalue is (numerically) repeated, the seeded random start is projected
    onto the top eigenspace and returned, with ``diagnostics["degenerate"]``
    set. ``lambda_hat`` is ``sqrt(max(0, top eigenvalue))``.

    ``max_iter`` is accepted for interface compatibility; the direct solver
    does not iterate.
    """
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    if W.shape != (n, n):
        raise ValueError("W must be square")
    if not np.array_equal(W, W.T):
        W = 0.5 * (W + W.T)
    if n == 1:
        val = float(W[0, 0])
        return EigPair(np.ones(1), math.sqrt(max(0.0, val)), {"eigenvalue": val, "degenerate": False})
    top2 = scipy.linalg.eigh(W, eigvals_only=False, subset_by_index=[n - 2, n - 1])
    vals, vecs = top2
    scale = max(1.0, float(np.abs(vals).max()))
    degenerate = abs(vals[1] - vals[0]) <= tol * scale
    if degenerate:
        evals, evecs = scipy.linalg.eigh(W)
        basis = evecs[:, np.abs(evals - vals[1]) <= tol * scale]
        start = _start_vector(n, stream)
        v = basis @ (basis.T @ start)
        nv = np.linalg.norm(v)
        v = v / nv if nv > 0 else basis[:, -1]
    else:
        v = vecs[:, 1]
    v = sign_convention(v / np.linalg.norm(v))
    val = float(v @ W @ v) if degenerate else float(vals[1])
    return EigPair(v, math.sqrt(max(0.0, val)), {"eigenvalue": val, "degenerate": bool(degenerate)})


def _start_vector(n, stream):
    if stream is None:
        return np.ones(n) / math.sqrt(n)
    return stream.generator().standard_normal(n)


def top_r_subspace(W, r):
    """Orthonormal n x r basis of the top-r eigenspace of symmetric ``W``.

    Columns are ordered by decreasing eigenvalue and sign-normalised.
    """
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    if not 1 <= r <= n:
        raise ValueError(f"rank r must be in [1, {n}], got {r}")
    W = 0.5 * (W + W.T)
    _, vecs = scipy.linalg.eigh(W, subset_by_index=[n - r, n - 1])
    vecs = vecs[:, ::-1]
    return np.column_stack([sign_convention(vecs[:, j]) for j in range(r)])


def private_oja(rows, L, params, n_iter, stream, sigma=None):
    """Private Oja iteration for the top right singular vector of ``rows``.

    ``sigma`` defaults to the ``oja`` noise scale for ``n_iter`` rounds;
    callers composing several Oja runs pass their own. With ``sigma == 0`` the
    step size is unbounded and each step reduces to ``v <- A^T A v``
    (normalised), i.e. plain power iteration.

    Working memory is a handful of length-n and length-nnz vectors.
    """
    n = rows.n
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if sigma is None:
        sigma = noise_scale("oja", L, n_iter, params).sigma
    # N(0, sigma^2 I) normalised has the same law as N(0, I) normalised, and
    # stays defined when sigma == 0
    v = stream.child(purpose="oja-init").generator().standard_normal(n)
    nv = np.linalg.norm(v)
    v = v / nv if nv > 0 else np.ones(n) / math.sqrt(n)
    eta = math.inf if sigma == 0 else 1.0 / (n_iter * sigma * math.sqrt(n))
    for tau in range(1, n_iter + 1):
        Wv = sparse_gram_matvec(rows, v)
        if sigma == 0:
            step = Wv
            if not np.any(step):
                break
        else:
            g = gaussian_vector(n, sigma, stream.child(purpose=f"oja-step-{tau}"))
            step = v + eta * (Wv + g)
        v = step / np.linalg.norm(step)
    Av = rows.row_sums(rows.data * v[rows.indices])
    lam_sq = float(Av @ Av)
    if sigma > 0:
        lam_sq += sigma * float(stream.child(purpose="oja-eigval").generator().standard_normal())
    return EigPair(sign_convention(v), math.sqrt(max(0.0, lam_sq)), {"sigma": sigma, "lambda_sq": lam_sq})
