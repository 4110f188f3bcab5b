"""Privacy parameters, Gaussian noise calibration and seeded noise streams.

Every ``log`` in the noise formulas is the natural logarithm.

Noise scales per mechanism (``L`` is the per-row l2 bound, ``R`` the number
of rounds):

=========  ==============================================
mechanism  sigma
=========  ==============================================
fw         L**2 * sqrt(64 * R * ln(1/delta)) / epsilon
oja        L**2 * sqrt(256 * R * ln(2/delta)) / epsilon
svd        L**2 * sqrt(64 * ln(1/delta)) / epsilon
pgd        L**2 * sqrt(64 * R * ln(1/delta)) / epsilon
=========  ==============================================

The constants for ``fw`` and ``oja`` differ (64 vs 256, ``1/delta`` vs
``2/delta``) for the same privacy target. Both are kept as published.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

MECHANISMS = ("fw", "oja", "svd", "pgd")

# relative slack on the epsilon cap, so a delta typed to 5 significant digits
# (1.1254e-7 for e**-16) still admits its boundary epsilon
CAP_RTOL = 1e-5


class PrivacyError(ValueError):
    """Raised for invalid (epsilon, delta) pairs."""


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float


@dataclass(frozen=True)
class NoiseScale:
    sigma: float
    mechanism: str
    rounds: int


def validate_params(epsilon, delta):
    """Check ``epsilon > 0``, ``0 < delta < 1`` and ``epsilon <= 2 ln(1/delta)``.

    Returns
    -------
    PrivacyParams

    Raises
    ------
    PrivacyError
        With a distinct message for each violated condition.
    """
    epsilon = float(epsilon)
    delta = float(delta)
    if not math.isfinite(epsilon) or epsilon <= 0:
        raise PrivacyError(f"epsilon must be > 0, got {epsilon!r}")
    if not (0.0 < delta < 1.0):
        raise PrivacyError(f"delta must lie in (0, 1), got {delta!r}")
    cap = 2.0 * math.log(1.0 / delta)
    if epsilon > cap * (1 + CAP_RTOL):
        raise PrivacyError(
            f"epsilon <= 2 ln(1/delta) violated: epsilon={epsilon!r} > "
            f"2 ln(1/{delta!r}) = {cap:.6g}"
        )
    return PrivacyParams(epsilon, delta)


def noise_scale(mechanism, L, rounds, params):
    """Gaussian noise standard deviation for one release of ``mechanism``.

    ``rounds`` is ignored for ``svd`` (single release).
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")
    if not L > 0:
        raise ValueError(f"L must be > 0, got {L!r}")
    eps, delta = params.epsilon, params.delta
    if mechanism == "svd":
        rounds = 1
        sigma = L**2 * math.sqrt(64.0 * math.log(1.0 / delta)) / eps
    else:
        rounds = int(rounds)
        if rounds < 1:
            raise ValueError(f"rounds must be >= 1 for {mechanism}, got {rounds}")
        if mechanism == "oja":
            sigma = L**2 * math.sqrt(256.0 * rounds * math.log(2.0 / delta)) / eps
        else:
            sigma = L**2 * math.sqrt(64.0 * rounds * math.log(1.0 / delta)) / eps
    return NoiseScale(sigma, mechanism, rounds)


def progressive_sigmas(sigma, T):
    """Per-iteration noise scales that spend the same total budget as ``T``
    uniform releases at ``sigma``, with later iterations receiving less noise.

    Under zCDP the per-release cost is proportional to ``1 / sigma_t**2``;
    weights ``w_t = t`` keep ``sum_t 1/sigma_t**2 == T / sigma**2``.
    """
    t = np.arange(1, T + 1, dtype=np.float64)
    return sigma * np.sqrt(t.sum() / (T * t))


def _tag(label):
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by a master seed and a label.

    The label is ``(algorithm tag, iteration index, purpose tag)``. Equal
    ``(seed, label)`` pairs give bit-identical samples; distinct labels give
    independent streams (via :class:`numpy.random.SeedSequence` spawn keys).
    """

    seed: int
    algo: str = ""
    iteration: int = 0
    purpose: str = ""

    def child(self, algo=None, iteration=None, purpose=None):
        return RngStream(
            self.seed,
            self.algo if algo is None else algo,
            self.iteration if iteration is None else int(iteration),
            self.purpose if purpose is None else purpose,
        )

    def generator(self):
        key = (_tag(self.algo), int(self.iteration), _tag(self.purpose))
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(self.seed), spawn_key=key)))


def gaussian_vector(length, sigma, stream):
    """``length`` i.i.d. draws from N(0, sigma**2)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.zeros(length)
    return sigma * stream.generator().standard_normal(length)


def symmetric_noise_matrix(n, sigma, stream):
    """Symmetric n x n matrix, upper triangle (with diagonal) i.i.d. N(0, sigma**2)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.zeros((n, n))
    iu = np.triu_indices(n)
    draws = sigma * stream.generator().standard_normal(len(iu[0]))
    out = np.empty((n, n))
    out[iu] = draws
    out[(iu[1], iu[0])] = draws
    return out
