import json

import numpy as np
import pytest

from semrec.ingest import (Dataset, EmptyFile, InvalidK, ItemMeta, MalformedLine, NetworkError,
                           OutOfRange, RatingRecord, load_dataset, load_item_metadata,
                           make_cold_start_slice, make_folds, parse_movielens, polarity,
                           save_dataset)


def write(tmp_path, name, text):
    fp = tmp_path / name
    fp.write_text(text, encoding="utf-8")
    return fp


class TestParseMovielens:
    def test_tab_100k_line(self, tmp_path):
        fp = write(tmp_path, "u.data", "1\t50\t5\t874965758\n")
        ds = parse_movielens(fp, "tab100k")
        assert ds.ratings == [RatingRecord(1, 50, 5, 874965758)]

    def test_colon_1m_line(self, tmp_path):
        fp = write(tmp_path, "ratings.dat", "1::1193::5::978300760\n")
        ds = parse_movielens(fp, "colon1m")
        assert ds.ratings == [RatingRecord(1, 1193, 5, 978300760)]

    def test_empty_file(self, tmp_path):
        fp = write(tmp_path, "u.data", "\n\n")
        with pytest.raises(EmptyFile):
            parse_movielens(fp, "tab100k")

    def test_malformed_line_number(self, tmp_path):
        fp = write(tmp_path, "u.data", "1\t2\t5\t100\n1\t2\tfive\t100\n")
        with pytest.raises(MalformedLine) as err:
            parse_movielens(fp, "tab100k")
        assert err.value.line_no == 2

    def test_rating_out_of_range_is_malformed(self, tmp_path):
        fp = write(tmp_path, "u.data", "1\t2\t9\t100\n")
        with pytest.raises(MalformedLine):
            parse_movielens(fp, "tab100k")

    def test_duplicates_collapse_to_latest(self, tmp_path):
        fp = write(tmp_path, "u.data", "1\t2\t5\t100\n1\t2\t1\t200\n")
        ds = parse_movielens(fp, "tab100k")
        assert ds.ratings == [RatingRecord(1, 2, 1, 200)]

    def test_line_order_does_not_matter(self, tmp_path):
        fwd = write(tmp_path, "a.data", "1\t2\t5\t100\n2\t1\t3\t50\n1\t1\t4\t70\n")
        rev = write(tmp_path, "b.data", "1\t1\t4\t70\n2\t1\t3\t50\n1\t2\t5\t100\n")
        assert parse_movielens(fwd).ratings == parse_movielens(rev).ratings


class TestPolarity:
    @pytest.mark.parametrize("rating,expected", [
        (1, "negative"), (2, "negative"), (3, "neutral"), (4, "positive"), (5, "positive"),
    ])
    def test_table(self, rating, expected):
        assert polarity(rating) == expected

    @pytest.mark.parametrize("rating", [0, 6, -1])
    def test_out_of_range(self, rating):
        with pytest.raises(OutOfRange):
            polarity(rating)


class TestMetadata:
    def test_fixture_passthrough(self, tmp_path):
        (tmp_path / "7.json").write_text(json.dumps(
            {"id": 7, "title": "Alien", "genres": ["Horror", "SciFi"],
             "overview": "deep space dread"}))
        metas = load_item_metadata([7], source="fixture_dir", fixture_dir=tmp_path)
        assert metas[7].title == "Alien"
        assert metas[7].genres == ["Horror", "SciFi"]
        assert not metas[7].missing

    def test_missing_fixture_flagged_not_error(self, tmp_path):
        metas = load_item_metadata([9], source="fixture_dir", fixture_dir=tmp_path)
        assert metas[9].missing
        assert metas[9].title == "unknown"
        assert metas[9].genres == []

    def test_live_fetch_caches_then_offline_rerun_identical(self, tmp_path):
        calls = []

        def transport(url, headers):
            calls.append(url)
            return {"title": "Brazil", "genres": ["SciFi"], "overview": "ducts"}

        first = load_item_metadata([3], source="live_api", fixture_dir=tmp_path,
                                   url_template="http://x/{item_id}", transport=transport)
        again = load_item_metadata([3], source="fixture_dir", fixture_dir=tmp_path)
        assert first[3] == again[3]
        assert len(calls) == 1

    def test_live_failure_after_retries(self, tmp_path):
        def transport(url, headers):
            raise ConnectionError("down")

        with pytest.raises(NetworkError):
            load_item_metadata([3], source="live_api", fixture_dir=tmp_path,
                               url_template="http://x/{item_id}", transport=transport,
                               max_retries=2)


def ratings_for_user(user, n, start_ts=0):
    return [RatingRecord(user, i + 1, (i % 5) + 1, start_ts + i) for i in range(n)]


class TestFolds:
    def test_user_with_100_ratings_gets_20_per_fold(self):
        ds = Dataset(ratings=ratings_for_user(1, 100))
        folds = make_folds(ds, k=5, seed=1)
        for f in folds:
            assert len(f.test) == 20
            assert len(f.train) == 80

    def test_user_below_k_stays_in_train(self):
        ds = Dataset(ratings=ratings_for_user(1, 3))
        folds = make_folds(ds, k=5, seed=1)
        for f in folds:
            assert len(f.train) == 3
            assert f.test == []

    def test_partition_property(self):
        ds = Dataset(ratings=ratings_for_user(1, 23) + ratings_for_user(2, 57))
        folds = make_folds(ds, k=5, seed=9)
        together = []
        for f in folds:
            together.extend(f.test)
            assert set(f.train).isdisjoint(set(f.test))
            assert sorted(f.train + f.test) == sorted(ds.ratings)
        assert sorted(together) == sorted(ds.ratings)

    def test_determinism(self):
        ds = Dataset(ratings=ratings_for_user(1, 40) + ratings_for_user(2, 21))
        a = make_folds(ds, k=5, seed=4)
        b = make_folds(ds, k=5, seed=4)
        assert [(f.train, f.test) for f in a] == [(f.train, f.test) for f in b]

    def test_seed_changes_assignment(self):
        ds = Dataset(ratings=ratings_for_user(1, 40))
        a = make_folds(ds, k=5, seed=4)
        b = make_folds(ds, k=5, seed=5)
        assert any(a[i].test != b[i].test for i in range(5))

    def test_invalid_k(self):
        ds = Dataset(ratings=ratings_for_user(1, 10))
        with pytest.raises(InvalidK):
            make_folds(ds, k=1, seed=0)


class TestColdStart:
    def make_fold(self, n_users=30, per_user=16):
        ratings = []
        for u in range(1, n_users + 1):
            ratings.extend(RatingRecord(u, i + 1, 5, i) for i in range(per_user))
        return make_folds(Dataset(ratings=ratings), k=4, seed=2)[0]

    def test_truncation_keeps_most_recent(self):
        fold = self.make_fold()
        sliced = make_cold_start_slice(fold, fraction=0.5, seed=8)
        assert sliced.cold_start_users
        by_user = {}
        for r in fold.train:
            by_user.setdefault(r.user_id, []).append(r)
        for u in sliced.cold_start_users:
            kept = [r for r in sliced.train if r.user_id == u]
            n = len(kept)
            assert 3 <= n <= 9
            expected = sorted(by_user[u], key=lambda r: (r.timestamp, r.item_id),
                              reverse=True)[:n]
            assert sorted(kept) == sorted(expected)

    def test_fraction_floor_and_min_one(self):
        fold = self.make_fold(n_users=30)
        sliced = make_cold_start_slice(fold, fraction=0.1, seed=8)
        assert len(sliced.cold_start_users) == 3
        tiny = make_cold_start_slice(fold, fraction=0.01, seed=8)
        assert len(tiny.cold_start_users) == 1

    def test_test_ratings_untouched(self):
        fold = self.make_fold()
        sliced = make_cold_start_slice(fold, fraction=0.3, seed=8)
        assert sliced.test == fold.test

    def test_determinism(self):
        fold = self.make_fold()
        a = make_cold_start_slice(fold, fraction=0.3, seed=8)
        b = make_cold_start_slice(fold, fraction=0.3, seed=8)
        assert a.cold_start_users == b.cold_start_users
        assert a.train == b.train

    def test_always_under_ten(self):
        fold = self.make_fold(per_user=40)
        sliced = make_cold_start_slice(fold, fraction=0.9, seed=1)
        counts = {}
        for r in sliced.train:
            counts[r.user_id] = counts.get(r.user_id, 0) + 1
        for u in sliced.cold_start_users:
            assert counts[u] < 10


def test_dataset_roundtrip(tmp_path):
    ds = Dataset(
        ratings=[RatingRecord(1, 2, 5, 10), RatingRecord(2, 1, 3, 20)],
        catalog={2: ItemMeta(2, "Heat", ["Crime"], "heist epic"),
                 1: ItemMeta(1, "unknown", [], "", missing=True)},
    )
    fp = tmp_path / "ds.json"
    save_dataset(ds, fp)
    back = load_dataset(fp)
    assert back.ratings == ds.ratings
    assert back.catalog == ds.catalog
