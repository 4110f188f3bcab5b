"""Prediction models and their on-disk format.

Models are stored as ``.npz`` archives (binary, exact round trip) with a
``kind`` entry of ``"factored"`` or ``"dense"`` and header scalars
``m, n, T, k, L``. A factored model adds ``basis`` (t x n) and
``coefficients`` (m x t); a dense model adds ``Y`` (m x n). Both carry
``means`` and ``rating_bounds``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FactoredModel:
    """Row ``i`` of the completed (centred) matrix is ``coefficients[i] @ basis``."""

    basis: np.ndarray
    coefficients: np.ndarray
    means: np.ndarray
    rating_lo: float = -math.inf
    rating_hi: float = math.inf
    k: float = math.nan
    L: float = math.nan
    T: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.coefficients.shape[0]

    @property
    def n(self):
        return self.basis.shape[1]

    @property
    def rank(self):
        return self.basis.shape[0]

    def reconstruct(self):
        return self.coefficients @ self.basis

    def centered_values(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        return np.einsum("ij,ji->i", self.coefficients[users], self.basis[:, items])

    def predict_many(self, users, items, clip=False):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        _check_range(users, items, self.m, self.n)
        out = self.centered_values(users, items) + self.means[users]
        return np.clip(out, self.rating_lo, self.rating_hi) if clip else out

    def predict(self, user, item, clip=False):
        return float(self.predict_many([user], [item], clip)[0])


@dataclass
class DenseModel:
    Y: np.ndarray
    means: np.ndarray
    rating_lo: float = -math.inf
    rating_hi: float = math.inf
    k: float = math.nan
    L: float = math.nan
    T: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.Y.shape[0]

    @property
    def n(self):
        return self.Y.shape[1]

    def reconstruct(self):
        return self.Y

    def centered_values(self, users, items):
        return self.Y[np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64)]

    def predict_many(self, users, items, clip=False):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        _check_range(users, items, self.m, self.n)
        out = self.Y[users, items] + self.means[users]
        return np.clip(out, self.rating_lo, self.rating_hi) if clip else out

    def predict(self, user, item, clip=False):
        return float(self.predict_many([user], [item], clip)[0])


def _check_range(users, items, m, n):
    if len(users) and (users.min() < 0 or users.max() >= m):
        raise IndexError(f"user index out of range [0, {m})")
    if len(items) and (items.min() < 0 or items.max() >= n):
        raise IndexError(f"item index out of range [0, {n})")


def save_model(model, path):
    common = dict(
        m=model.m, n=model.n, T=model.T, k=model.k, L=model.L,
        means=model.means, rating_bounds=np.array([model.rating_lo, model.rating_hi]),
    )
    if isinstance(model, FactoredModel):
        np.savez(path, kind="factored", basis=model.basis, coefficients=model.coefficients, **common)
    else:
        np.savez(path, kind="dense", Y=model.Y, **common)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        kind = str(z["kind"])
        lo, hi = (float(x) for x in z["rating_bounds"])
        meta = dict(means=z["means"], rating_lo=lo, rating_hi=hi, k=float(z["k"]),
                    L=float(z["L"]), T=int(z["T"]))
        if kind == "factored":
            return FactoredModel(z["basis"], z["coefficients"], **meta)
        if kind == "dense":
            return DenseModel(z["Y"], **meta)
    raise ValueError(f"unknown model kind {kind!r}")
