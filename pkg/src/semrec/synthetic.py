"""Deterministic synthetic datasets in MovieLens form.

Two generators: a tiny two-block planted-preference instance (every user
rates every item, 5 inside the home block and 1 across), and a
MovieLens-100k-scale instance with clustered tastes, popularity skew, and
genre/overview metadata correlated with the clusters. Both emit standard
Dataset objects and can be written out as ratings files plus metadata
fixtures, so the whole pipeline can run offline end to end.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest import Dataset, ItemMeta, RatingRecord

_CLUSTER_GENRES = ("action", "comedy", "drama", "horror", "scifi",
                   "romance", "thriller", "documentary")
_CLUSTER_WORDS = {
    "action": ("explosive", "chase", "vendetta", "squad", "showdown"),
    "comedy": ("awkward", "mishap", "roommates", "prank", "wedding"),
    "drama": ("grief", "family", "redemption", "verdict", "secrets"),
    "horror": ("haunted", "ritual", "basement", "possession", "dread"),
    "scifi": ("starship", "android", "colony", "wormhole", "signal"),
    "romance": ("letters", "summer", "reunion", "longing", "promise"),
    "thriller": ("conspiracy", "witness", "blackmail", "deadline", "mole"),
    "documentary": ("archive", "interviews", "expedition", "verite", "footage"),
}


def two_block_dataset(n_users: int = 40, n_items: int = 40, seed: int = 0) -> Dataset:
    """Two planted communities: users love every item in their block (5) and
    pan everything across (1)."""
    if n_users % 2 or n_items % 2:
        raise ValueError("two_block_dataset wants even user and item counts")
    half_u, half_i = n_users // 2, n_items // 2
    rng = np.random.default_rng(seed)
    ratings = []
    ts = 800_000_000
    for u in range(1, n_users + 1):
        block = 0 if u <= half_u else 1
        for i in range(1, n_items + 1):
            item_block = 0 if i <= half_i else 1
            rating = 5 if item_block == block else 1
            ratings.append(RatingRecord(u, i, rating, ts))
            ts += 1
    catalog = {}
    for i in range(1, n_items + 1):
        block = 0 if i <= half_i else 1
        genre = "thriller" if block == 0 else "musical"
        words = (("conspiracy", "heist", "informer") if block == 0
                 else ("ensemble", "overture", "encore"))
        pick = [words[int(k)] for k in rng.choice(3, size=2, replace=False)]
        catalog[i] = ItemMeta(
            item_id=i,
            title=f"{genre.capitalize()} feature {i}",
            genres=[genre],
            overview=f"A {genre} piece built around {pick[0]} and {pick[1]}.",
        )
    return Dataset(ratings=ratings, catalog=catalog)


def clustered_dataset(n_users: int = 943, n_items: int = 1682,
                      n_ratings: int = 100_000, n_clusters: int = 8,
                      seed: int = 0) -> Dataset:
    """MovieLens-scale instance: items belong to genre clusters with a
    popularity skew, users prefer two clusters, ratings follow preference."""
    if n_clusters > len(_CLUSTER_GENRES):
        raise ValueError(f"at most {len(_CLUSTER_GENRES)} clusters supported")
    min_per_user = 20
    if n_ratings < n_users * min_per_user:
        raise ValueError("n_ratings too small for 20 ratings per user")
    rng = np.random.default_rng(seed)

    item_cluster = rng.integers(0, n_clusters, size=n_items)
    # popularity: Zipf-ish within the catalog
    pop = 1.0 / np.power(np.arange(1, n_items + 1), 0.8)
    pop = pop[rng.permutation(n_items)]

    catalog = {}
    for idx in range(n_items):
        item_id = idx + 1
        genre = _CLUSTER_GENRES[item_cluster[idx]]
        words = _CLUSTER_WORDS[genre]
        pick = [words[int(k)] for k in rng.choice(len(words), size=3, replace=False)]
        genres = [genre]
        if rng.random() < 0.3:
            other = _CLUSTER_GENRES[int(rng.integers(0, n_clusters))]
            if other != genre:
                genres.append(other)
        catalog[item_id] = ItemMeta(
            item_id=item_id,
            title=f"{genre.capitalize()} tale {item_id}",
            genres=genres,
            overview=f"A {genre} story of {pick[0]}, {pick[1]} and {pick[2]}.",
        )

    # per-user rating counts: 20 guaranteed, remainder spread unevenly
    weights = rng.lognormal(mean=0.0, sigma=0.7, size=n_users)
    extra = rng.multinomial(n_ratings - n_users * min_per_user, weights / weights.sum())
    counts = np.minimum(min_per_user + extra, n_items)
    shortfall = n_ratings - int(counts.sum())
    u = 0
    while shortfall > 0:  # redistribute anything lost to the per-user cap
        if counts[u] < n_items:
            counts[u] += 1
            shortfall -= 1
        u = (u + 1) % n_users

    by_cluster = [np.where(item_cluster == c)[0] for c in range(n_clusters)]
    pref_rating_p = np.array([0.03, 0.05, 0.12, 0.30, 0.50])
    other_rating_p = np.array([0.35, 0.30, 0.20, 0.10, 0.05])

    ratings = []
    ts = 850_000_000
    for uix in range(n_users):
        user_id = uix + 1
        prefs = rng.choice(n_clusters, size=2, replace=False)
        pref_items = np.concatenate([by_cluster[c] for c in prefs])
        other_items = np.concatenate(
            [by_cluster[c] for c in range(n_clusters) if c not in prefs])
        n_total = int(counts[uix])
        n_pref = min(int(round(0.75 * n_total)), len(pref_items))
        n_other = min(n_total - n_pref, len(other_items))
        n_pref = n_total - n_other

        def draw(pool: np.ndarray, size: int) -> np.ndarray:
            if size == 0:
                return np.empty(0, dtype=np.int64)
            w = pop[pool] / pop[pool].sum()
            return rng.choice(pool, size=size, replace=False, p=w)

        chosen_pref = draw(pref_items, n_pref)
        chosen_other = draw(other_items, n_other)
        for idx in chosen_pref:
            rating = int(rng.choice(5, p=pref_rating_p)) + 1
            ratings.append(RatingRecord(user_id, int(idx) + 1, rating, ts))
            ts += 1
        for idx in chosen_other:
            rating = int(rng.choice(5, p=other_rating_p)) + 1
            ratings.append(RatingRecord(user_id, int(idx) + 1, rating, ts))
            ts += 1
    ratings.sort(key=lambda r: (r.user_id, r.item_id))
    return Dataset(ratings=ratings, catalog=catalog)


def write_ratings_file(dataset: Dataset, path: str | Path, format: str = "tab100k") -> None:
    sep = {"tab100k": "\t", "colon1m": "::"}[format]
    lines = [sep.join(str(v) for v in (r.user_id, r.item_id, r.rating, r.timestamp))
             for r in dataset.ratings]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_fixtures(dataset: Dataset, fixture_dir: str | Path) -> None:
    import json

    fixture_dir = Path(fixture_dir)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    for meta in dataset.catalog.values():
        doc = {"id": meta.item_id, "title": meta.title,
               "genres": meta.genres, "overview": meta.overview}
        (fixture_dir / f"{meta.item_id}.json").write_text(
            json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
