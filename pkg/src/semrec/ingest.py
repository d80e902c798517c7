"""Rating-file parsing, item metadata, cross-validation folds, cold-start slices.

Supports the two classic MovieLens layouts (tab-separated 100k, ``::``
separated 1M). Metadata comes from a fixture directory of per-item JSON
documents or from a live JSON API whose responses are cached back into the
fixture directory, so reruns are offline.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np


class IngestError(Exception):
    pass


class MalformedLine(IngestError):
    def __init__(self, line_no: int, line: str):
        super().__init__(f"line {line_no}: cannot parse rating record: {line!r}")
        self.line_no = line_no


class EmptyFile(IngestError):
    pass


class InvalidK(IngestError):
    pass


class OutOfRange(IngestError):
    pass


class NetworkError(IngestError):
    pass


POSITIVE = "positive"
NEGATIVE = "negative"
NEUTRAL = "neutral"


class RatingRecord(NamedTuple):
    user_id: int
    item_id: int
    rating: int
    timestamp: int


@dataclass
class ItemMeta:
    item_id: int
    title: str
    genres: list[str]
    overview: str = ""
    missing: bool = False


@dataclass
class Dataset:
    ratings: list[RatingRecord]
    catalog: dict[int, ItemMeta] = field(default_factory=dict)

    @property
    def user_ids(self) -> list[int]:
        return sorted({r.user_id for r in self.ratings})

    @property
    def item_ids(self) -> list[int]:
        return sorted({r.item_id for r in self.ratings})


@dataclass
class FoldSplit:
    fold_index: int
    train: list[RatingRecord]
    test: list[RatingRecord]
    cold_start_users: set[int] = field(default_factory=set)


def polarity(rating: int) -> str:
    """Map an explicit 1-5 rating to edge polarity: 4,5 positive; 1,2 negative; 3 neutral."""
    if rating in (4, 5):
        return POSITIVE
    if rating in (1, 2):
        return NEGATIVE
    if rating == 3:
        return NEUTRAL
    raise OutOfRange(f"rating {rating} outside [1,5]")


_FORMATS = {"tab100k": "\t", "colon1m": "::"}


def parse_movielens(path: str | Path, format: str = "tab100k") -> Dataset:
    """Parse a MovieLens-style ratings file into a canonical Dataset.

    Duplicate (user, item) pairs collapse to the record with the latest
    timestamp (ties by higher rating), and records are sorted by
    (user_id, item_id) so the result is independent of line order.
    """
    if format not in _FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {sorted(_FORMATS)}")
    sep = _FORMATS[format]
    path = Path(path)
    best: dict[tuple[int, int], RatingRecord] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split(sep)
            if len(parts) != 4:
                raise MalformedLine(line_no, line)
            try:
                user, item, rating, ts = (int(p) for p in parts)
            except ValueError:
                raise MalformedLine(line_no, line) from None
            if user <= 0 or item <= 0 or ts < 0 or rating not in (1, 2, 3, 4, 5):
                raise MalformedLine(line_no, line)
            rec = RatingRecord(user, item, rating, ts)
            key = (user, item)
            prev = best.get(key)
            if prev is None or (rec.timestamp, rec.rating) > (prev.timestamp, prev.rating):
                best[key] = rec
    if not best:
        raise EmptyFile(f"no rating records in {path}")
    ratings = sorted(best.values(), key=lambda r: (r.user_id, r.item_id))
    return Dataset(ratings=ratings)


def _read_fixture(fixture_dir: Path, item_id: int) -> ItemMeta | None:
    fp = fixture_dir / f"{item_id}.json"
    if not fp.exists():
        return None
    doc = json.loads(fp.read_text(encoding="utf-8"))
    return ItemMeta(
        item_id=item_id,
        title=str(doc.get("title", "unknown")),
        genres=[str(g) for g in doc.get("genres", [])],
        overview=str(doc.get("overview", "")),
    )


def _write_fixture(fixture_dir: Path, meta: ItemMeta) -> None:
    fixture_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "id": meta.item_id,
        "title": meta.title,
        "genres": meta.genres,
        "overview": meta.overview,
    }
    (fixture_dir / f"{meta.item_id}.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8"
    )


def _fetch_live(item_id: int, url_template: str, api_key_env: str,
                max_retries: int, transport=None, sleep=time.sleep) -> ItemMeta:
    import requests

    url = url_template.format(item_id=item_id)
    headers = {}
    key = os.environ.get(api_key_env or "", "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    post = transport
    last = None
    for attempt in range(max(1, max_retries)):
        try:
            if post is not None:
                doc = post(url, headers)
            else:
                resp = requests.get(url, headers=headers, timeout=30)
                resp.raise_for_status()
                doc = resp.json()
            return ItemMeta(
                item_id=item_id,
                title=str(doc.get("title", "unknown")),
                genres=[str(g) for g in doc.get("genres", [])],
                overview=str(doc.get("overview", "")),
            )
        except Exception as exc:  # transport or decode failure: retry with backoff
            last = exc
            if attempt + 1 < max(1, max_retries):
                sleep(min(0.25 * (2 ** attempt), 2.0))
    raise NetworkError(f"metadata fetch for item {item_id} failed after {max_retries} attempts: {last}")


def load_item_metadata(
    item_ids: Iterable[int],
    source: str = "fixture_dir",
    fixture_dir: str | Path = "fixtures",
    url_template: str = "",
    api_key_env: str = "",
    max_retries: int = 3,
    max_workers: int = 4,
    titles: dict[int, str] | None = None,
    transport=None,
) -> dict[int, ItemMeta]:
    """Resolve metadata for every requested item id.

    ``fixture_dir`` reads one ``<item_id>.json`` document per item; missing
    fixtures yield flagged-empty metadata rather than an error. ``live_api``
    fetches over HTTP with bounded retries and caches each response into the
    fixture directory so subsequent runs work offline. The returned map is
    independent of fetch completion order.
    """
    if source not in ("fixture_dir", "live_api"):
        raise ValueError(f"unknown metadata source {source!r}")
    fixture_dir = Path(fixture_dir)
    titles = titles or {}
    ids = sorted(set(int(i) for i in item_ids))
    out: dict[int, ItemMeta] = {}

    def fallback(i: int) -> ItemMeta:
        return ItemMeta(item_id=i, title=titles.get(i, "unknown"), genres=[],
                        overview="", missing=True)

    if source == "fixture_dir":
        for i in ids:
            meta = _read_fixture(fixture_dir, i)
            out[i] = meta if meta is not None else fallback(i)
        return out

    # live_api: fixtures still win (they are the cache)
    to_fetch = []
    for i in ids:
        meta = _read_fixture(fixture_dir, i)
        if meta is not None:
            out[i] = meta
        else:
            to_fetch.append(i)
    if to_fetch:
        def job(i: int) -> tuple[int, ItemMeta]:
            meta = _fetch_live(i, url_template, api_key_env, max_retries, transport=transport)
            return i, meta

        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            for i, meta in pool.map(job, to_fetch):
                _write_fixture(fixture_dir, meta)
                out[i] = meta
    return out


def make_folds(dataset: Dataset, k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Per-user k-fold partition: each user's ratings are seeded-shuffled into
    k near-equal buckets, and fold i takes bucket i as test.

    Users with fewer than k ratings stay wholly in train for every fold (and
    are therefore never evaluated). The shuffle is keyed by (seed, user_id),
    so fold assignment does not depend on rating order in the dataset.
    """
    if k < 2:
        raise InvalidK(f"k must be >= 2, got {k}")
    by_user: dict[int, list[RatingRecord]] = {}
    for r in dataset.ratings:
        by_user.setdefault(r.user_id, []).append(r)

    folds = [FoldSplit(fold_index=i, train=[], test=[]) for i in range(k)]
    for user in sorted(by_user):
        recs = sorted(by_user[user], key=lambda r: (r.timestamp, r.item_id))
        if len(recs) < k:
            for f in folds:
                f.train.extend(recs)
            continue
        rng = np.random.default_rng([seed, user])
        order = rng.permutation(len(recs))
        shuffled = [recs[j] for j in order]
        n, base, extra = len(recs), len(recs) // k, len(recs) % k
        start = 0
        buckets = []
        for b in range(k):
            size = base + (1 if b < extra else 0)
            buckets.append(shuffled[start:start + size])
            start += size
        assert start == n
        for i, f in enumerate(folds):
            f.test.extend(buckets[i])
            for b in range(k):
                if b != i:
                    f.train.extend(buckets[b])
    for f in folds:
        f.train.sort(key=lambda r: (r.user_id, r.item_id))
        f.test.sort(key=lambda r: (r.user_id, r.item_id))
    return folds


def make_cold_start_slice(fold: FoldSplit, fraction: float = 0.1,
                          max_train: int = 9, seed: int = 0) -> FoldSplit:
    """Mark a seeded fraction of users cold-start and truncate their train history.

    Each selected user keeps only n most-recent train ratings, n drawn
    uniformly from [3, max_train], which reproduces the "fewer than 10
    interactions" regime on datasets that guarantee longer histories. Test
    ratings are untouched.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0,1), got {fraction}")
    by_user: dict[int, list[RatingRecord]] = {}
    for r in fold.train:
        by_user.setdefault(r.user_id, []).append(r)
    eligible = sorted(u for u, recs in by_user.items() if len(recs) >= 3)
    if not eligible:
        return FoldSplit(fold.fold_index, list(fold.train), list(fold.test), set())
    n_cold = max(1, int(np.floor(fraction * len(eligible))))
    rng = np.random.default_rng([seed, fold.fold_index])
    chosen = rng.choice(len(eligible), size=min(n_cold, len(eligible)), replace=False)
    cold = {eligible[int(i)] for i in chosen}

    train: list[RatingRecord] = []
    for user in sorted(by_user):
        recs = by_user[user]
        if user in cold:
            n = int(np.random.default_rng([seed, fold.fold_index, user]).integers(3, max_train + 1))
            recs = sorted(recs, key=lambda r: (r.timestamp, r.item_id), reverse=True)[:n]
        train.extend(recs)
    train.sort(key=lambda r: (r.user_id, r.item_id))
    return FoldSplit(fold.fold_index, train, list(fold.test), cold)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    doc = {
        "ratings": [[r.user_id, r.item_id, r.rating, r.timestamp] for r in dataset.ratings],
        "catalog": {
            str(m.item_id): {
                "title": m.title,
                "genres": m.genres,
                "overview": m.overview,
                "missing": m.missing,
            }
            for m in dataset.catalog.values()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    ratings = [RatingRecord(*map(int, row)) for row in doc["ratings"]]
    catalog = {
        int(i): ItemMeta(
            item_id=int(i),
            title=entry["title"],
            genres=list(entry["genres"]),
            overview=entry.get("overview", ""),
            missing=bool(entry.get("missing", False)),
        )
        for i, entry in doc.get("catalog", {}).items()
    }
    return Dataset(ratings=ratings, catalog=catalog)
