import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmc.data import (DataError, center_dataset, center_per_user, clip_rows, default_row_bound, make_dataset,
                       parse_ratings, preprocess, read_id_map, read_observed, read_triplets, rescale_ratings,
                       split_train_test, subsample_per_user, synthetic_rank_one, write_id_map, write_observed,
                       write_triplets)


class TestParse:
    def test_csv(self):
        ds = parse_ratings(b"1,10,4.0,99\n2,10,3.0,98", "csv_comma")
        assert ds.triplets == [(0, 0, 4.0), (1, 0, 3.0)]
        assert (ds.num_users, ds.num_items) == (2, 1)

    def test_double_colon_equivalent(self):
        a = parse_ratings(b"1::10::4.0::99", "double_colon")
        b = parse_ratings(b"1,10,4.0,99", "csv_comma")
        assert a.triplets == b.triplets

    def test_duplicate_names_pair(self):
        with pytest.raises(DataError, match=r"\(1, 10\)"):
            parse_ratings(b"1,10,4.0,99\n1,10,5.0,98")

    def test_malformed_line_number(self):
        with pytest.raises(DataError, match="line 2"):
            parse_ratings(b"1,10,4.0\n1,x\n")

    def test_header_and_no_timestamp(self):
        ds = parse_ratings("userId,movieId,rating,timestamp\n7,3,2.5\n8,4,1.0,5\n")
        assert ds.triplets == [(0, 0, 2.5), (1, 1, 1.0)]
        assert ds.user_ids == ["7", "8"]

    def test_first_appearance_order(self):
        ds = parse_ratings(b"9,5,1\n3,5,2\n9,2,3\n")
        assert ds.user_ids == ["9", "3"] and ds.item_ids == ["5", "2"]
        assert ds.triplets == [(0, 0, 1.0), (1, 0, 2.0), (0, 1, 3.0)]

    def test_bounds(self):
        ds = parse_ratings(b"1,1,3\n2,1,4\n", rating_bounds=(0, 5))
        assert (ds.rating_lo, ds.rating_hi) == (0, 5)
        with pytest.raises(DataError):
            parse_ratings(b"1,1,7\n", rating_bounds=(0, 5))

    def test_text_stream(self):
        assert len(parse_ratings(io.StringIO("1,1,3\n"))) == 1

    def test_unknown_format(self):
        with pytest.raises(DataError):
            parse_ratings(b"", "tsv")

    def test_id_map_round_trip(self):
        ds = parse_ratings(b"a,x,1\nb,y,2\n")
        buf = io.StringIO()
        write_id_map(ds, buf)
        buf.seek(0)
        assert read_id_map(buf) == ({"a": 0, "b": 1}, {"x": 0, "y": 1})


class TestRescale:
    def ds(self, r):
        return make_dataset([0] * len(r), list(range(len(r))), r, 1, len(r), -10, 10)

    def test_endpoints(self):
        out = rescale_ratings(self.ds([-10.0, 0.0, 10.0]), 0, 5)
        assert out.ratings.tolist() == [0.0, 2.5, 5.0]
        assert (out.rating_lo, out.rating_hi) == (0, 5)

    def test_identity(self):
        ds = self.ds([1.0, 2.0])
        assert rescale_ratings(ds, -10, 10) is ds

    def test_degenerate(self):
        ds = make_dataset([0], [0], [1.0], 1, 1, 1.0, 1.0)
        with pytest.raises(DataError):
            rescale_ratings(ds, 0, 5)
        with pytest.raises(DataError):
            rescale_ratings(self.ds([1.0]), 5, 5)


def ratings_with_counts(counts, n=200, seed=0):
    rng = np.random.default_rng(seed)
    users, items = [], []
    for u, c in enumerate(counts):
        users += [u] * c
        items += sorted(rng.choice(n, c, replace=False).tolist())
    return make_dataset(users, items, rng.uniform(0, 5, len(users)), len(counts), n, 0, 5)


class TestSubsample:
    def test_caps(self):
        ds = ratings_with_counts([100, 5])
        out = subsample_per_user(ds, 80, 1)
        assert np.bincount(out.users).tolist() == [80, 5]

    def test_deterministic(self):
        ds = ratings_with_counts([100, 50, 3])
        a, b = subsample_per_user(ds, 10, 4), subsample_per_user(ds, 10, 4)
        assert a.triplets == b.triplets
        assert subsample_per_user(ds, 10, 5).triplets != a.triplets

    def test_zero(self):
        with pytest.raises(DataError):
            subsample_per_user(ratings_with_counts([3]), 0, 1)

    def test_uniform(self):
        ds = ratings_with_counts([10], n=10)
        hits = np.zeros(10)
        for s in range(2000):
            hits[subsample_per_user(ds, 3, s).items] += 1
        assert np.allclose(hits / 2000, 0.3, atol=0.04)


class TestSplit:
    def test_counts(self):
        ds = ratings_with_counts([100] * 10)
        sp = split_train_test(ds, 0.01, 0)
        assert (len(sp.test), len(sp.train)) == (10, 990)

    def test_zero_fraction(self):
        sp = split_train_test(ratings_with_counts([5]), 0.0, 0)
        assert len(sp.test) == 0 and len(sp.train) == 5

    def test_partition(self):
        ds = ratings_with_counts([30, 20, 10])
        sp = split_train_test(ds, 0.3, 2)
        assert not set(sp.train.triplets) & set(sp.test.triplets)
        assert sorted(sp.train.triplets + sp.test.triplets) == sorted(ds.triplets)

    def test_bad_fraction(self):
        with pytest.raises(DataError):
            split_train_test(ratings_with_counts([5]), 1.0, 0)


class TestCenter:
    def test_mean_removal(self):
        obs = center_per_user([0, 0], [0, 1], [4.0, 2.0], 1, 2, 0, 5)
        assert obs.means[0] == 3 and obs.rows.data.tolist() == [1.0, -1.0]

    def test_single(self):
        obs = center_per_user([0], [0], [5.0], 1, 1, 0, 5)
        assert obs.means[0] == 5 and obs.rows.data.tolist() == [0.0]

    def test_absent_user(self):
        obs = center_per_user([0], [0], [5.0], 2, 1, 0, 5)
        assert obs.means[1] == 2.5 and obs.rows.row_lengths()[1] == 0

    def test_items_sorted(self):
        obs = center_per_user([0, 0, 0], [2, 0, 1], [1.0, 2.0, 3.0], 1, 3, 0, 5)
        assert obs.rows.indices.tolist() == [0, 1, 2]
        assert obs.rows.data.tolist() == [0.0, 1.0, -1.0]


def obs_from_rows(rows):
    users = [i for i, r in enumerate(rows) for _ in r]
    items = [j for r in rows for j in range(len(r))]
    vals = [x for r in rows for x in r]
    n = max(len(r) for r in rows)
    obs = center_per_user(users, items, vals, len(rows), n, -100, 100)
    # undo centring so rows hold the given values
    return type(obs)(obs.rows.with_data(np.array(vals, dtype=float)), obs.means, math.inf, -100, 100)


class TestClip:
    def test_boundary(self):
        assert clip_rows(obs_from_rows([[3.0, 4.0]]), 5).rows.data.tolist() == [3.0, 4.0]

    def test_scaled(self):
        assert np.allclose(clip_rows(obs_from_rows([[3.0, 4.0]]), 1).rows.data, [0.6, 0.8])

    def test_idempotent(self):
        once = clip_rows(obs_from_rows([[3.0, 4.0], [0.1, 0.2], [7.0, -1.0]]), 1.5)
        twice = clip_rows(once, 1.5)
        assert np.allclose(once.rows.data, twice.rows.data, rtol=1e-15, atol=0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), L=st.floats(0.01, 10))
    def test_norm_bound(self, seed, L):
        rng = np.random.default_rng(seed)
        obs = obs_from_rows([rng.standard_normal(int(rng.integers(1, 8))).tolist() for _ in range(6)])
        out = clip_rows(obs, L)
        assert out.rows.row_norms().max() <= L + 1e-12
        assert out.row_bound == L

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), xi=st.integers(1, 40), lo=st.floats(-5, 5), width=st.floats(0.1, 10))
    def test_default_bound_dominates(self, seed, xi, lo, width):
        rng = np.random.default_rng(seed)
        hi = lo + width
        count = int(rng.integers(1, xi + 1))
        r = rng.choice([lo, hi], count) if rng.random() < 0.5 else rng.uniform(lo, hi, count)
        centred = r - r.mean()
        assert np.linalg.norm(centred) <= default_row_bound(lo, hi, xi) * (1 + 1e-12)


class TestPipeline:
    def test_preprocess_partition_and_bound(self):
        ds = ratings_with_counts([120, 40, 3, 90], seed=3)
        obs, test = preprocess(ds, 80, 0.05, 9)
        assert len(test) == round(0.05 * len(ds))
        assert np.bincount(obs.rows.row_ids, minlength=4).max() <= 80
        train_pairs = set(zip(obs.rows.row_ids.tolist(), obs.rows.indices.tolist()))
        assert not train_pairs & set(zip(test.users.tolist(), test.items.tolist()))
        assert obs.rows.row_norms().max() <= obs.row_bound + 1e-12
        assert obs.row_bound == default_row_bound(0, 5, 80)

    def test_synthetic(self):
        ds, Y = synthetic_rank_one(30, 8, 1)
        assert np.abs(Y).max() == pytest.approx(1.0)
        assert np.linalg.matrix_rank(Y) == 1
        assert len(ds) == 240
        ds2, _ = synthetic_rank_one(30, 8, 1, per_user=3)
        assert np.bincount(ds2.users).tolist() == [3] * 30
        assert np.allclose(ds2.ratings, Y[ds2.users, ds2.items])

    def test_observed_round_trip(self):
        ds = ratings_with_counts([12, 0, 5], seed=4)
        obs = clip_rows(center_dataset(ds), 2.0)
        buf = io.StringIO()
        write_observed(obs, buf)
        buf.seek(0)
        back = read_observed(buf)
        assert back.row_bound == 2.0 and (back.rating_lo, back.rating_hi) == (0, 5)
        assert np.array_equal(back.means, obs.means)
        assert np.array_equal(back.rows.indptr, obs.rows.indptr)
        assert np.array_equal(back.rows.indices, obs.rows.indices)
        assert np.array_equal(back.rows.data, obs.rows.data)

    def test_observed_header_format(self):
        obs = center_per_user([0, 1], [1, 0], [4.0, 2.0], 2, 2, 0, 5)
        buf = io.StringIO()
        write_observed(clip_rows(obs, 3.0), buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "2 2 3.0"
        assert lines[-2:] == ["0\t1:0.0", "1\t0:0.0"]

    def test_triplets_round_trip(self):
        ds = ratings_with_counts([4, 2], seed=5)
        buf = io.StringIO()
        write_triplets(ds, buf)
        buf.seek(0)
        back = read_triplets(buf)
        assert back.triplets == ds.triplets and (back.num_users, back.num_items) == (2, 200)

    def test_make_dataset_invariants(self):
        with pytest.raises(DataError, match="duplicate"):
            make_dataset([0, 0], [1, 1], [1, 2], 1, 2, 0, 5)
        with pytest.raises(DataError):
            make_dataset([2], [0], [1], 2, 1, 0, 5)
        with pytest.raises(DataError):
            make_dataset([0], [0], [6], 1, 1, 0, 5)
