"""Metrics and the epsilon-sweep experiment harness.

Sweep configs are JSON objects whose keys match the ``sweep`` CLI flags
(underscores for dashes)::

    {
      "dataset": "synthetic",          # or a path to a ratings file
      "format": "synthetic",           # csv_comma | double_colon | synthetic
      "synthetic_m": 2000, "synthetic_n": 50,
      "algorithms": ["zero_baseline", "fw_private"],
      "epsilons": [0.1, 1, 5], "delta": 1e-6, "seeds": [1, 2, 3],
      "xi": 10, "test_frac": 0.01,
      "k": "auto", "k_scale": 2.0, "T": 5
    }

``k: "auto"`` uses ``k_scale`` times the true nuclear norm of the synthetic
matrix (so it is only valid with ``format: "synthetic"``).

See :class:`ExperimentSpec` for every key and its default.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import data as dmod
from .baselines import PgdConfig, SvdConfig, run_private_pgd, run_private_svd, step_schedule
from .fw import FwConfig, run_nonprivate_fw, run_private_fw
from .models import FactoredModel
from .privacy import validate_params

log = logging.getLogger(__name__)

ALGORITHMS = ("fw_private", "fw_nonprivate", "svd_private", "pgd_private", "pgd_nonprivate", "zero_baseline")
CSV_HEADER = ("algo", "epsilon", "delta", "seed", "T", "k", "train_risk", "test_rmse", "wallclock_s")


@dataclass
class Metrics:
    empirical_risk: float
    test_rmse: float
    train_rmse: float
    n_test: int


def empirical_risk(model, obs):
    """``(1 / 2|Omega|) * ||P_Omega(Y - Y*)||_F**2`` in the centred space."""
    if obs.nnz == 0:
        raise ValueError("empirical risk undefined for an empty Omega")
    fitted = model.centered_values(obs.rows.row_ids, obs.rows.indices)
    diff = fitted - obs.rows.data
    return float(diff @ diff) / (2 * obs.nnz)


def test_rmse(model, users, items, ratings, clip=True):
    """RMSE of ``model`` predictions (mean added back) against raw ratings."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if len(ratings) == 0:
        raise ValueError("empty test set")
    pred = model.predict_many(users, items, clip=clip)
    return float(np.sqrt(np.mean((pred - ratings) ** 2)))


def evaluate(model, obs, test, clip=True):
    risk = empirical_risk(model, obs) if obs.nnz else math.nan
    rmse = test_rmse(model, test.users, test.items, test.ratings, clip) if len(test) else math.nan
    return Metrics(risk, rmse, math.sqrt(2 * risk) if obs.nnz else math.nan, len(test))


def zero_model(obs):
    """Predicts each user's training mean everywhere."""
    return FactoredModel(np.zeros((0, obs.n)), np.zeros((obs.m, 0)), obs.means.copy(),
                         obs.rating_lo, obs.rating_hi, k=0.0, L=obs.row_bound, T=0)


@dataclass
class ExperimentSpec:
    dataset: str = "synthetic"
    format: str = "synthetic"
    rating_lo: float | None = None
    rating_hi: float | None = None
    rescale_lo: float | None = None
    rescale_hi: float | None = None
    synthetic_m: int = 2000
    synthetic_n: int = 50
    synthetic_per_user: int | None = None
    algorithms: list = field(default_factory=lambda: ["fw_private"])
    epsilons: list = field(default_factory=lambda: [0.1, 1.0, 5.0])
    delta: float = 1e-6
    seeds: list = field(default_factory=lambda: [1])
    xi: int = 80
    test_frac: float = 0.01
    L: float | None = None
    k: object = "auto"
    k_scale: float = 1.0
    T: int = 10
    nonprivate_T: int | None = None
    backend: str = "exact"
    oja_iters: int = 100
    beta: float = 0.1
    noise_schedule: str = "uniform"
    r: int = 1
    pgd_T: int | None = None
    pgd_step: object = 1.0
    clip: bool = True
    master_seed: int = 0
    threads: int = 1
    wallclock: bool = True

    def __post_init__(self):
        if not self.epsilons:
            raise ValueError("epsilons must be non-empty")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithms {bad}; expected a subset of {ALGORITHMS}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_spec(path, overrides=None):
    """Read a JSON config; ``overrides`` (non-``None`` values) win.

    A relative ``dataset`` path is resolved against the config file's directory.
    """
    with open(path) as fh:
        d = json.load(fh)
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    ds = d.get("dataset")
    if ds and d.get("format", "synthetic") != "synthetic" and not os.path.isabs(ds):
        d["dataset"] = os.path.join(os.path.dirname(os.path.abspath(path)), ds)
    return ExperimentSpec.from_dict(d)


@dataclass
class ResultRow:
    algo: str
    epsilon: float
    delta: float
    seed: int
    T: int
    k: float
    train_risk: float
    test_rmse: float
    wallclock_s: float
    error: str = ""


def _load_dataset(spec, seed):
    """Returns ``(dataset, true nuclear norm or None)``."""
    if spec.format == "synthetic":
        ds, Y = dmod.synthetic_rank_one(spec.synthetic_m, spec.synthetic_n, seed, spec.synthetic_per_user)
        return ds, float(np.linalg.svd(Y, compute_uv=False).sum())
    bounds = None
    if spec.rating_lo is not None and spec.rating_hi is not None:
        bounds = (spec.rating_lo, spec.rating_hi)
    with open(spec.dataset, "rb") as fh:
        ds = dmod.parse_ratings(fh, spec.format, bounds)
    if spec.rescale_lo is not None and spec.rescale_hi is not None:
        ds = dmod.rescale_ratings(ds, spec.rescale_lo, spec.rescale_hi)
    return ds, None


def _noise_seed(master_seed, seed):
    return int(np.random.SeedSequence([int(master_seed), int(seed)]).generate_state(1)[0])


def train(algo, obs, spec, epsilon, seed, k_true=None):
    """Fit one algorithm; returns ``(model, T, k_or_r)``."""
    k = None if k_true is None else spec.k_scale * k_true
    if spec.k != "auto":
        k = float(spec.k)
    if algo in ("fw_private", "fw_nonprivate", "pgd_private", "pgd_nonprivate") and k is None:
        raise ValueError("k='auto' needs the synthetic generator; give k explicitly")
    noise_seed = _noise_seed(spec.master_seed, seed)
    if algo == "zero_baseline":
        return zero_model(obs), 0, 0.0
    if algo == "fw_nonprivate":
        T = spec.nonprivate_T or spec.T
        return run_nonprivate_fw(obs, k, T), T, k
    params = validate_params(epsilon, spec.delta) if algo.endswith("_private") else None
    if algo == "fw_private":
        cfg = FwConfig(k=k, T=spec.T, L=obs.row_bound, beta=spec.beta, backend=spec.backend,
                       oja_iters=spec.oja_iters, noise_schedule=spec.noise_schedule)
        return run_private_fw(obs, cfg, params, noise_seed), spec.T, k
    if algo == "svd_private":
        return run_private_svd(obs, SvdConfig(spec.r, obs.row_bound), params, noise_seed), 1, float(spec.r)
    T = spec.pgd_T or spec.T
    cfg = PgdConfig(k, T, step_schedule(spec.pgd_step, T), obs.row_bound, spec.noise_schedule)
    sigma = 0.0 if algo == "pgd_nonprivate" else None
    return run_private_pgd(obs, cfg, params, noise_seed, sigma=sigma), T, k


def _run_seed(spec, seed):
    rows = []
    try:
        ds, k_true = _load_dataset(spec, seed)
        obs, test = dmod.preprocess(ds, spec.xi, spec.test_frac, seed, spec.L)
    except Exception as exc:  # unreadable data: one error row per cell
        log.error("seed %s: preprocessing failed: %s", seed, exc)
        return [ResultRow(a, float(e), spec.delta, seed, 0, math.nan, math.nan, math.nan, 0.0, str(exc))
                for a in spec.algorithms for e in spec.epsilons]
    for algo in spec.algorithms:
        for eps in spec.epsilons:
            start = time.perf_counter()
            try:
                model, T, k = train(algo, obs, spec, eps, seed, k_true)
                met = evaluate(model, obs, test, spec.clip)
                elapsed = time.perf_counter() - start if spec.wallclock else 0.0
                rows.append(ResultRow(algo, float(eps), spec.delta, seed, T, k, met.empirical_risk,
                                      met.test_rmse, elapsed))
            except Exception as exc:
                log.error("%s eps=%s seed=%s failed: %s", algo, eps, seed, exc)
                rows.append(ResultRow(algo, float(eps), spec.delta, seed, 0, math.nan, math.nan, math.nan,
                                      0.0, str(exc)))
    return rows


def run_sweep(spec):
    """Every ``(algorithm, epsilon, seed)`` cell, in a deterministic order.

    Seeds run in parallel when ``spec.threads > 1``; each seed owns its
    preprocessing and noise streams, so the output does not depend on the
    thread count.
    """
    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            per_seed = list(pool.map(lambda s: _run_seed(spec, s), spec.seeds))
    else:
        per_seed = [_run_seed(spec, s) for s in spec.seeds]
    rows = [r for chunk in per_seed for r in chunk]
    algo_rank = {a: i for i, a in enumerate(spec.algorithms)}
    rows.sort(key=lambda r: (algo_rank[r.algo], r.epsilon, spec.seeds.index(r.seed)))
    return rows


def _fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.6g}"


def write_results_csv(rows, sink):
    """Write ``rows`` with the fixed header; reals at 6 significant digits."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.algo, _fmt(r.epsilon), _fmt(r.delta), _fmt(int(r.seed)), _fmt(int(r.T)),
                         _fmt(r.k), _fmt(r.train_risk), _fmt(r.test_rmse), _fmt(r.wallclock_s)])


def read_results_csv(source):
    reader = csv.DictReader(source)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected header {reader.fieldnames}")
    return [
        ResultRow(d["algo"], float(d["epsilon"]), float(d["delta"]), int(d["seed"]), int(d["T"]),
                  float(d["k"]), float(d["train_risk"]), float(d["test_rmse"]), float(d["wallclock_s"]))
        for d in reader
    ]


def spec_to_dict(spec):
    return asdict(spec)


# keep pytest from collecting the metric when it is imported into a test module
test_rmse.__test__ = False
