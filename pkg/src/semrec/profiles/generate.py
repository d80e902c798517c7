"""Profile generation through the chat gateway, plus on-disk persistence.

Item profiles take one structured call each. User profiles are refined over
sequential turns: the seed items (up to 10 liked, 10 disliked) are batched
five at a time, liked batches first, and every turn re-embeds the profile
from the previous turn so the document stays continuous. A turn that stays
malformed after the gateway's repair budget is skipped and the last good
profile carries forward.
"""

from __future__ import annotations

import re
from pathlib import Path

from .. import gateway as gw
from ..ingest import ItemMeta, RatingRecord
from .schema import Profile, normalize_tags, parse_profile, render_integrated_text, render_profile

SEEDS_PER_POLARITY = 10
BATCH_SIZE = 5


def minimal_item_profile(meta: ItemMeta) -> Profile:
    """Fallback profile when metadata is missing or the gateway gives up."""
    return Profile(
        subject_kind="item",
        subject_id=meta.item_id,
        overview=meta.title or "unknown",
        attributes=list(meta.genres),
        description="",
        dislikes=[],
        minimal=True,
    )


def minimal_user_profile(user_id: int, n_seeds: int = 0) -> Profile:
    return Profile(
        subject_kind="user",
        subject_id=user_id,
        overview=f"Viewer of {n_seeds} rated items." if n_seeds else "Still forming tastes.",
        attributes=[],
        description="",
        dislikes=[],
        minimal=True,
    )


def item_meta_block(meta: ItemMeta) -> str:
    overview = " ".join(meta.overview.split())
    return (f"item: {meta.item_id}\n"
            f"title: {meta.title}\n"
            f"genres: {', '.join(meta.genres)}\n"
            f"overview: {overview}")


def generate_item_profile(meta: ItemMeta, gateway: gw.Gateway) -> Profile:
    """One structured call per item; attributes always cover the source genres."""
    if not meta.title:
        raise ValueError("item metadata must carry a title")
    if meta.missing:
        return minimal_item_profile(meta)
    template = gw.load_template("profile_item")
    request = gw.ChatRequest(
        system_prompt="You write catalog profiles.",
        turns=[("user", gw.fill_template(template, item_meta=item_meta_block(meta)))],
        tag=f"profile_item/{meta.item_id}",
    )
    doc = gateway.complete_structured(request, "profile_doc")
    prof = parse_profile(doc, subject_kind="item", subject_id=meta.item_id)
    prof.attributes = normalize_tags(prof.attributes + meta.genres)
    prof.dislikes = []
    if not prof.overview:
        prof.overview = meta.title
    return prof


def select_profile_seeds(
    ratings: list[RatingRecord], limit: int = SEEDS_PER_POLARITY,
) -> tuple[list[RatingRecord], list[RatingRecord]]:
    """The user's top liked (4-5) and bottom disliked (1-2) ratings.

    Ties break toward the most recent timestamp; ratings of 3 never seed a
    profile.
    """
    liked = [r for r in ratings if r.rating >= 4]
    disliked = [r for r in ratings if r.rating <= 2]
    liked.sort(key=lambda r: (-r.rating, -r.timestamp, r.item_id))
    disliked.sort(key=lambda r: (r.rating, -r.timestamp, r.item_id))
    return liked[:limit], disliked[:limit]


def _seed_payload_id(payload) -> int:
    return payload.subject_id if isinstance(payload, Profile) else payload.item_id


def _seed_payload_body(payload) -> str:
    if isinstance(payload, Profile):
        return render_profile(payload).rstrip("\n")
    return render_integrated_text(payload)


def seed_batch_block(batch: list[tuple[object, int]]) -> str:
    parts = []
    for payload, rating in batch:
        ident = _seed_payload_id(payload)
        word = "liked" if rating >= 4 else "disliked"
        parts.append(f"[seed item {ident} {word}]\n{_seed_payload_body(payload)}\n"
                     f"[/seed item {ident}]")
    return "\n\n".join(parts)


def generate_user_profile(
    seed_items: list[tuple[object, int]],
    gateway: gw.Gateway,
    user_id: int = 0,
) -> Profile:
    """Iteratively refine one user's profile over batched gateway turns.

    ``seed_items`` pairs an ItemMeta or item Profile with the user's rating,
    already restricted per ``select_profile_seeds``.
    """
    liked = [(p, r) for p, r in seed_items if r >= 4]
    disliked = [(p, r) for p, r in seed_items if r <= 2]
    if any(r == 3 for _, r in seed_items):
        raise ValueError("neutral ratings cannot seed a profile")
    if len(liked) > SEEDS_PER_POLARITY or len(disliked) > SEEDS_PER_POLARITY:
        raise ValueError(f"at most {SEEDS_PER_POLARITY} seed items per polarity")

    template = gw.load_template("profile_user")
    profile: Profile | None = None
    batches = [("liked", liked[i:i + BATCH_SIZE]) for i in range(0, len(liked), BATCH_SIZE)]
    batches += [("disliked", disliked[i:i + BATCH_SIZE]) for i in range(0, len(disliked), BATCH_SIZE)]
    for polarity, batch in batches:
        prior = render_profile(profile).rstrip("\n") if profile is not None else "none"
        request = gw.ChatRequest(
            system_prompt="You maintain viewer taste profiles.",
            turns=[("user", gw.fill_template(template, prior_profile=prior,
                                             batch_block=seed_batch_block(batch)))],
            tag=f"profile_user/{user_id}",
        )
        try:
            doc = gateway.complete_structured(request, "profile_doc")
        except gw.MalformedOutput:
            continue  # keep the profile from the last successful turn
        parsed = parse_profile(doc, subject_kind="user", subject_id=user_id)
        if polarity == "liked":
            # dislikes may only come from low-rated batches
            parsed.dislikes = list(profile.dislikes) if profile is not None else []
        if not parsed.overview:
            parsed.overview = profile.overview if profile is not None else "Still forming tastes."
        profile = parsed
    if profile is None:
        return minimal_user_profile(user_id, n_seeds=len(seed_items))
    return profile


def integrated_user_text(seed_items: list[tuple[ItemMeta, int]]) -> str:
    """Schema-free user text for the integrated embedding variant."""
    likes = [render_integrated_text(p) for p, r in seed_items if r >= 4]
    dislikes = [render_integrated_text(p) for p, r in seed_items if r <= 2]
    parts = []
    if likes:
        parts.append("likes: " + " | ".join(likes))
    if dislikes:
        parts.append("dislikes: " + " | ".join(dislikes))
    return " ".join(parts) or "no rated items"


_PROFILE_FILE_RE = re.compile(r"^(item|user)_(\d+)\.md$")


def save_profiles(directory: str | Path, profiles: list[Profile]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for p in profiles:
        (directory / f"{p.subject_kind}_{p.subject_id}.md").write_text(
            render_profile(p), encoding="utf-8")


def load_profiles(directory: str | Path) -> dict[tuple[str, int], Profile]:
    directory = Path(directory)
    out: dict[tuple[str, int], Profile] = {}
    for fp in sorted(directory.glob("*.md")):
        m = _PROFILE_FILE_RE.match(fp.name)
        if not m:
            continue
        kind, ident = m.group(1), int(m.group(2))
        out[(kind, ident)] = parse_profile(fp.read_text(encoding="utf-8"),
                                           subject_kind=kind, subject_id=ident)
    return out
