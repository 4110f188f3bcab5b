"""Rating ingestion and preprocessing.

Pipeline used by the experiments::

    ds = parse_ratings(fh, "csv_comma")
    split = split_train_test(ds, 0.01, seed)          # test drawn first
    train = subsample_per_user(split.train, xi, seed)
    obs = clip_rows(center_per_user(train.triplets, ...), default_row_bound(...))

Serialized :class:`ObservedMatrix` text format (``write_observed`` /
``read_observed``)::

    m n L
    #bounds <rating_lo> <rating_hi>
    #means <u_0>,<u_1>,...,<u_{m-1}>
    <user_index>\t<item>:<value>,<item>:<value>,...

Every user has a line (possibly with an empty item list). Reals are written
with ``repr`` so a round trip is exact. Readers that only understand the
minimal ``m n L`` + row format can skip lines starting with ``#``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import SparseRows

FORMATS = ("csv_comma", "double_colon")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RatingsDataset:
    """Ratings as parallel arrays ``users``, ``items``, ``ratings``."""

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    rating_lo: float
    rating_hi: float
    user_ids: list = field(default_factory=list)
    item_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.users)

    @property
    def triplets(self):
        return list(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    def subset(self, mask_or_index):
        return RatingsDataset(
            self.num_users,
            self.num_items,
            self.users[mask_or_index],
            self.items[mask_or_index],
            self.ratings[mask_or_index],
            self.rating_lo,
            self.rating_hi,
            self.user_ids,
            self.item_ids,
        )


def make_dataset(users, items, ratings, m, n, rating_lo, rating_hi, user_ids=(), item_ids=()):
    """Build a :class:`RatingsDataset`, checking every invariant."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    if not (len(users) == len(items) == len(ratings)):
        raise DataError("users, items and ratings must have equal length")
    if len(users):
        if users.min() < 0 or users.max() >= m:
            raise DataError("user index out of range")
        if items.min() < 0 or items.max() >= n:
            raise DataError("item index out of range")
        if ratings.min() < rating_lo or ratings.max() > rating_hi:
            raise DataError(f"rating outside [{rating_lo}, {rating_hi}]")
        key = users * n + items
        uniq, counts = np.unique(key, return_counts=True)
        if (counts > 1).any():
            k = uniq[counts > 1][0]
            raise DataError(f"duplicate (user, item) pair ({k // n}, {k % n})")
    return RatingsDataset(int(m), int(n), users, items, ratings, float(rating_lo), float(rating_hi),
                          list(user_ids), list(item_ids))


def parse_ratings(source, format="csv_comma", rating_bounds=None):
    """Parse a ratings file.

    Parameters
    ----------
    source : binary or text file object, bytes, or str
        ``user,item,rating[,timestamp]`` lines (optional one-line header) for
        ``csv_comma``; ``user::item::rating::timestamp`` for ``double_colon``.
    format : {"csv_comma", "double_colon"}
    rating_bounds : (lo, hi), optional
        Rating scale. Defaults to the observed min and max.

    Raw IDs are reindexed densely from 0 in order of first appearance; the raw
    IDs are kept in ``user_ids`` / ``item_ids``. Timestamps are dropped.
    """
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw

    user_index, item_index = {}, {}
    users, items, ratings = [], [], []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if format == "csv_comma":
            parts = next(csv.reader([line]))
        else:
            parts = line.split("::")
        parts = [p.strip() for p in parts]
        if len(parts) not in (3, 4):
            raise DataError(f"line {lineno}: expected 3 or 4 fields, got {len(parts)}")
        try:
            rating = float(parts[2])
        except ValueError:
            if lineno == 1 and format == "csv_comma":
                continue  # header
            raise DataError(f"line {lineno}: rating {parts[2]!r} is not a number") from None
        if not math.isfinite(rating):
            raise DataError(f"line {lineno}: rating must be finite")
        u = user_index.setdefault(parts[0], len(user_index))
        i = item_index.setdefault(parts[1], len(item_index))
        if (u, i) in seen:
            raise DataError(
                f"line {lineno}: duplicate (user, item) pair ({parts[0]}, {parts[1]}), "
                f"first seen on line {seen[(u, i)]}"
            )
        seen[(u, i)] = lineno
        users.append(u)
        items.append(i)
        ratings.append(rating)

    if rating_bounds is None:
        lo, hi = (min(ratings), max(ratings)) if ratings else (0.0, 1.0)
    else:
        lo, hi = map(float, rating_bounds)
    return make_dataset(users, items, ratings, len(user_index), len(item_index), lo, hi,
                        user_ids=list(user_index), item_ids=list(item_index))


def rescale_ratings(ds, lo, hi):
    """Affinely map ratings from ``[ds.rating_lo, ds.rating_hi]`` onto ``[lo, hi]``."""
    if not ds.rating_hi > ds.rating_lo:
        raise DataError("degenerate source rating range")
    if not hi > lo:
        raise DataError("target range must satisfy hi > lo")
    if (lo, hi) == (ds.rating_lo, ds.rating_hi):
        return ds
    scale = (hi - lo) / (ds.rating_hi - ds.rating_lo)
    r = lo + (ds.ratings - ds.rating_lo) * scale
    return RatingsDataset(ds.num_users, ds.num_items, ds.users, ds.items, np.clip(r, lo, hi),
                          float(lo), float(hi), ds.user_ids, ds.item_ids)


def subsample_per_user(ds, xi, seed):
    """Keep at most ``xi`` ratings per user, chosen uniformly without replacement."""
    if xi < 1:
        raise DataError("xi must be >= 1")
    rng = np.random.default_rng([int(seed), 0x5B5])
    # random key per rating, keep the xi smallest keys within each user
    keys = rng.random(len(ds))
    order = np.lexsort((keys, ds.users))
    sorted_users = ds.users[order]
    starts = np.searchsorted(sorted_users, sorted_users, side="left")
    rank = np.arange(len(order)) - starts
    keep = np.sort(order[rank < xi])
    return ds.subset(keep)


@dataclass(frozen=True)
class TrainTestSplit:
    train: RatingsDataset
    test: RatingsDataset


def split_train_test(ds, frac, seed):
    """Hold out ``round(frac * len(ds))`` ratings uniformly at random."""
    if not 0 <= frac < 1:
        raise DataError("frac must satisfy 0 <= frac < 1")
    n_test = int(round(frac * len(ds)))
    rng = np.random.default_rng([int(seed), 0x7E57])
    perm = rng.permutation(len(ds))
    test_mask = np.zeros(len(ds), dtype=bool)
    test_mask[perm[:n_test]] = True
    return TrainTestSplit(ds.subset(~test_mask), ds.subset(test_mask))


@dataclass(frozen=True)
class ObservedMatrix:
    """The revealed, per-user centred matrix.

    ``rows`` holds the centred values on each user's sorted observed items,
    ``means`` the per-user mean that was removed and ``row_bound`` the public
    bound ``L`` on every row's l2 norm.
    """

    rows: SparseRows
    means: np.ndarray
    row_bound: float
    rating_lo: float
    rating_hi: float

    @property
    def m(self):
        return self.rows.m

    @property
    def n(self):
        return self.rows.n

    @property
    def nnz(self):
        return self.rows.nnz


def center_per_user(users, items, ratings, m, n, rating_lo, rating_hi):
    """Subtract each user's mean training rating.

    Users without training ratings get the rating-scale midpoint as mean and
    an empty row. ``row_bound`` is left as ``inf`` until :func:`clip_rows`.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    counts = np.bincount(users, minlength=m)
    sums = np.bincount(users, weights=ratings, minlength=m)
    means = np.full(m, 0.5 * (rating_lo + rating_hi))
    has = counts > 0
    means[has] = sums[has] / counts[has]
    order = np.lexsort((items, users))
    users, items, ratings = users[order], items[order], ratings[order]
    indptr = np.concatenate([[0], np.cumsum(counts)])
    rows = SparseRows(indptr, items, ratings - means[users], n)
    return ObservedMatrix(rows, means, math.inf, float(rating_lo), float(rating_hi))


def center_dataset(ds):
    return center_per_user(ds.users, ds.items, ds.ratings, ds.num_users, ds.num_items,
                           ds.rating_lo, ds.rating_hi)


def clip_rows(obs, L):
    """Scale every row with l2 norm above ``L`` back onto the L-ball."""
    if not L > 0:
        raise DataError("L must be > 0")
    norms = obs.rows.row_norms()
    factor = np.ones(obs.m)
    over = norms > L
    factor[over] = L / norms[over]
    data = obs.rows.data * factor[obs.rows.row_ids]
    return ObservedMatrix(obs.rows.with_data(data), obs.means, float(L), obs.rating_lo, obs.rating_hi)


def default_row_bound(rating_lo, rating_hi, xi):
    """Public row bound ``h * sqrt(xi)`` with ``h`` the rating half-range.

    A mean-centred row of at most ``xi`` ratings in ``[lo, hi]`` has squared
    norm at most ``count * h**2`` (the variance of a bounded variable is at
    most ``h**2``), so this bound never depends on the private data.
    """
    return 0.5 * (rating_hi - rating_lo) * math.sqrt(xi)


def synthetic_rank_one(m, n, seed, per_user=None):
    """Rank-one ``Y* = u v^T`` with unit max-norm, sampled as a ratings dataset.

    ``u`` and ``v`` are uniform on [-1, 1] and rescaled to max-abs 1. Each user
    rates ``per_user`` items (all ``n`` by default) chosen uniformly without
    replacement. Returns ``(dataset, Y*)``; ratings live on [-1, 1].
    """
    rng = np.random.default_rng([int(seed), 0x5F7])
    u = rng.uniform(-1, 1, m)
    v = rng.uniform(-1, 1, n)
    u /= np.abs(u).max()
    v /= np.abs(v).max()
    Y = np.outer(u, v)
    per_user = n if per_user is None else min(int(per_user), n)
    if per_user == n:
        users = np.repeat(np.arange(m), n)
        items = np.tile(np.arange(n), m)
    else:
        items = np.argsort(rng.random((m, n)), axis=1)[:, :per_user]
        items = np.sort(items, axis=1).ravel()
        users = np.repeat(np.arange(m), per_user)
    ds = make_dataset(users, items, Y[users, items], m, n, -1.0, 1.0)
    return ds, Y


def preprocess(ds, xi, test_frac, seed, L=None):
    """Split, subsample, centre and clip.

    The test set is drawn before subsampling, so held-out ratings are never
    training candidates. Returns ``(obs, test_dataset)``.
    """
    split = split_train_test(ds, test_frac, seed)
    train = subsample_per_user(split.train, xi, seed)
    obs = center_dataset(train)
    if L is None:
        L = default_row_bound(ds.rating_lo, ds.rating_hi, xi)
    return clip_rows(obs, L), split.test


def write_observed(obs, fh):
    """Write ``obs`` in the text format described in the module docstring."""
    fh.write(f"{obs.m} {obs.n} {obs.row_bound!r}\n")
    fh.write(f"#bounds {obs.rating_lo!r} {obs.rating_hi!r}\n")
    fh.write("#means " + ",".join(repr(float(x)) for x in obs.means) + "\n")
    for i in range(obs.m):
        idx, vals = obs.rows.row(i)
        fh.write(f"{i}\t" + ",".join(f"{j}:{float(x)!r}" for j, x in zip(idx, vals)) + "\n")


def read_observed(fh):
    """Inverse of :func:`write_observed`."""
    lines = fh.read().splitlines()
    if not lines:
        raise DataError("empty observed-matrix file")
    head = lines[0].split()
    if len(head) != 3:
        raise DataError("header must be 'm n L'")
    m, n, L = int(head[0]), int(head[1]), float(head[2])
    lo, hi = -math.inf, math.inf
    means = None
    rows = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("#bounds"):
            lo, hi = map(float, line.split()[1:3])
        elif line.startswith("#means"):
            body = line[len("#means"):].strip()
            means = np.array([float(x) for x in body.split(",")]) if body else np.zeros(0)
        elif line.startswith("#") or not line.strip():
            continue
        else:
            user, _, body = line.partition("\t")
            pairs = [p.split(":") for p in body.split(",") if p]
            try:
                rows[int(user)] = [(int(j), float(x)) for j, x in pairs]
            except ValueError:
                raise DataError(f"line {lineno}: malformed row") from None
    indptr = [0]
    indices, data = [], []
    for i in range(m):
        for j, x in rows.get(i, []):
            indices.append(j)
            data.append(x)
        indptr.append(len(indices))
    if means is None:
        means = np.zeros(m)
    if len(means) != m:
        raise DataError("number of means does not match m")
    return ObservedMatrix(SparseRows(indptr, indices, data, n), means, L, lo, hi)


def write_triplets(ds, fh):
    """Write ``user_index<TAB>item_index<TAB>rating`` lines (dense indices)."""
    fh.write(f"#shape {ds.num_users} {ds.num_items} {ds.rating_lo!r} {ds.rating_hi!r}\n")
    for u, i, r in zip(ds.users.tolist(), ds.items.tolist(), ds.ratings.tolist()):
        fh.write(f"{u}\t{i}\t{r!r}\n")


def read_triplets(fh):
    m = n = None
    lo, hi = -math.inf, math.inf
    users, items, ratings = [], [], []
    for line in fh.read().splitlines():
        if line.startswith("#shape"):
            parts = line.split()
            m, n, lo, hi = int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        u, i, r = line.split("\t")
        users.append(int(u))
        items.append(int(i))
        ratings.append(float(r))
    if m is None:
        m = max(users, default=-1) + 1
        n = max(items, default=-1) + 1
    return make_dataset(users, items, ratings, m, n, lo, hi)


def write_id_map(ds, fh):
    """Persist the raw-ID to dense-index mapping (``kind<TAB>raw<TAB>index``)."""
    for k, raw in enumerate(ds.user_ids):
        fh.write(f"user\t{raw}\t{k}\n")
    for k, raw in enumerate(ds.item_ids):
        fh.write(f"item\t{raw}\t{k}\n")


def read_id_map(fh):
    users, items = {}, {}
    for line in fh.read().splitlines():
        kind, raw, k = line.split("\t")
        (users if kind == "user" else items)[raw] = int(k)
    return users, items
