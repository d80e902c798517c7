"""LLM post-processing of the GAT candidate pool: four reranking strategies,
80:20 score fusion, and explanation generation.

Every strategy consumes one PromptContext (user profile plus candidate
profile blocks, serialized once and reused by the explanation call) and
returns a full permutation of its pool with an llm score per item. Gateway
failures never surface: each strategy degrades to GAT-derived ordering for
the failed portion and flags ``fallback_used``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import gateway as gw
from .profiles.schema import Profile, render_profile

BATCH = 5
BATCH_STRIDE = 3
RELEVANCY_ROUNDS = 3


class RerankError(Exception):
    pass


class PoolTooSmall(RerankError):
    pass


@dataclass
class CandidatePool:
    user: int
    items: list[tuple[int, float]]           # (item_id, gat_score), best first

    def __post_init__(self):
        self.items = sorted(self.items, key=lambda p: (-p[1], p[0]))

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.items]

    def gat_rank(self, item_id: int) -> int:
        """1-based position in the GAT ordering."""
        return self.ids.index(item_id) + 1

    def gat_norm(self) -> dict[int, float]:
        """Min-max normalized GAT scores; all-equal pools map to 0.5."""
        scores = [s for _, s in self.items]
        lo, hi = min(scores), max(scores)
        if hi == lo:
            return {i: 0.5 for i, _ in self.items}
        return {i: (s - lo) / (hi - lo) for i, s in self.items}


@dataclass
class RerankResult:
    strategy: str
    order: list[int]                          # permutation of the pool ids
    llm_scores: dict[int, float]
    fallback_used: bool = False


@dataclass
class Explanation:
    item_id: int
    text: str
    cited_tags: list[str] = field(default_factory=list)


@dataclass
class PromptContext:
    """Serialized prompt blocks shared by a strategy and its explanation call."""

    user_block: str
    item_blocks: dict[int, str]
    user_profile: Profile
    item_profiles: dict[int, Profile]

    @classmethod
    def build(cls, user_profile: Profile, item_profiles: dict[int, Profile]) -> "PromptContext":
        blocks = {i: f"[candidate {i}]\n{render_profile(p).rstrip()}\n[/candidate {i}]"
                  for i, p in item_profiles.items()}
        return cls(
            user_block=render_profile(user_profile).rstrip(),
            item_blocks=blocks,
            user_profile=user_profile,
            item_profiles=item_profiles,
        )

    def candidates_block(self, ids: list[int]) -> str:
        header = "candidates: " + ", ".join(str(i) for i in ids)
        return "\n\n".join([header] + [self.item_blocks[i] for i in ids])


def select_pool(scored: list[tuple[int, float]], size: int, user: int = 0) -> CandidatePool:
    """Top ``size`` items by GAT score (ties to the lower item id)."""
    if len(scored) < size:
        raise PoolTooSmall(f"need {size} scored items, have {len(scored)}")
    ordered = sorted(scored, key=lambda p: (-p[1], p[0]))
    return CandidatePool(user=user, items=ordered[:size])


def _rank_scores(order: list[int]) -> dict[int, float]:
    n = len(order)
    return {item: (n - r) / n for r, item in enumerate(order)}


def _request(template_name: str, ctx: PromptContext, ids: list[int], tag: str) -> gw.ChatRequest:
    body = gw.fill_template(gw.load_template(template_name),
                            user_profile=ctx.user_block,
                            candidates_block=ctx.candidates_block(ids))
    return gw.ChatRequest(system_prompt="You rank recommendations for one viewer.",
                          turns=[("user", body)], tag=tag)


def rerank_prompt_level(pool: CandidatePool, ctx: PromptContext,
                        gateway: gw.Gateway) -> RerankResult:
    """One structured call reranks the whole pool at once."""
    ids = pool.ids
    try:
        order = gateway.complete_structured(
            _request("rerank_list", ctx, ids, f"rerank_list/{pool.user}"),
            "ranked_id_list")
        fallback = False
    except gw.GatewayError:
        order, fallback = list(ids), True
    return RerankResult("prompt_level", order, _rank_scores(order), fallback)


def rerank_pairwise_bst(pool: CandidatePool, ctx: PromptContext,
                        gateway: gw.Gateway) -> RerankResult:
    """Ordered-insertion reranking with an LLM pair comparator.

    Items enter in GAT order; each insertion binary-searches the
    balanced ordered sequence (the comparison pattern of a balanced BST,
    at most ceil(log2(n+1)) calls per insert). Comparator answers are
    memoized per unordered pair, ties and failures fall back to the GAT
    comparison, and the in-order sequence (best first) is the result.
    """
    ids = pool.ids
    gat_pos = {item: r for r, item in enumerate(ids)}
    memo: dict[tuple[int, int], int] = {}
    state = {"fallback": False}

    def better(incumbent: int, challenger: int) -> int:
        key = (min(incumbent, challenger), max(incumbent, challenger))
        if key not in memo:
            pair = [incumbent, challenger]
            try:
                memo[key] = gateway.complete_structured(
                    _request("rerank_pair", ctx, pair, f"rerank_pair/{pool.user}"),
                    "pair_choice")
            except gw.GatewayError:
                state["fallback"] = True
                memo[key] = min(pair, key=lambda i: gat_pos[i])
        return memo[key]

    ordered: list[int] = []
    for item in ids:
        lo, hi = 0, len(ordered)
        while lo < hi:
            mid = (lo + hi) // 2
            if better(ordered[mid], item) == item:
                hi = mid
            else:
                lo = mid + 1
        ordered.insert(lo, item)
    return RerankResult("pairwise_bst", ordered, _rank_scores(ordered), state["fallback"])


def _overlap_batches(n: int) -> list[tuple[int, int]]:
    """Window starts for stride-3 batches of 5, final window right-aligned."""
    starts = list(range(0, n - BATCH + 1, BATCH_STRIDE))
    if starts[-1] != n - BATCH:
        starts.append(n - BATCH)
    return [(s, s + BATCH) for s in starts]


def rerank_batch_overlap(pool: CandidatePool, ctx: PromptContext,
                         gateway: gw.Gateway) -> RerankResult:
    """Overlapping batches of five over the GAT order, merged by mean position score.

    A failed batch contributes each member's pool-wide normalized GAT
    position instead, so an all-failed run reproduces the GAT order exactly.
    """
    ids = pool.ids
    n = len(ids)
    if n < BATCH:
        raise PoolTooSmall(f"batch reranking needs at least {BATCH} items, have {n}")
    global_pos = {item: (n - r) / n for r, item in enumerate(ids)}
    collected: dict[int, list[float]] = {i: [] for i in ids}
    fallback = False
    for lo, hi in _overlap_batches(n):
        batch = ids[lo:hi]
        try:
            order = gateway.complete_structured(
                _request("rerank_batch", ctx, batch, f"rerank_batch/{pool.user}"),
                "ranked_id_list")
            for r, item in enumerate(order):
                collected[item].append((BATCH - r) / BATCH)
        except gw.GatewayError:
            fallback = True
            for item in batch:
                collected[item].append(global_pos[item])
    llm = {i: float(np.mean(v)) for i, v in collected.items()}
    gat_pos = {item: r for r, item in enumerate(ids)}
    order = sorted(ids, key=lambda i: (-llm[i], gat_pos[i]))
    return RerankResult("batch_overlap", order, llm, fallback)


def rerank_relevancy(pool: CandidatePool, ctx: PromptContext, gateway: gw.Gateway,
                     seed: int = 0,
                     extra: list[tuple[int, float]] | None = None) -> RerankResult:
    """Three seeded shuffles, each split into batches of five scored 0-100;
    an item's llm score is the mean of its (up to) three scores / 100.

    The pool is padded to a multiple of five from ``extra`` (further GAT
    candidates) when needed; padded items ride along in the result order.
    Items that end up with no score at all take their normalized GAT score.
    """
    items = list(pool.items)
    if len(items) % BATCH:
        extra = list(extra or [])
        while len(items) % BATCH:
            if not extra:
                raise PoolTooSmall(
                    f"pool of {len(pool.items)} needs padding to a multiple of {BATCH} "
                    "and no extra candidates were supplied")
            items.append(extra.pop(0))
    padded = CandidatePool(user=pool.user, items=items)
    ids = padded.ids
    if not set(pool.ids) <= set(ids):
        raise RerankError("padding corrupted the pool")
    missing_ctx = [i for i in ids if i not in ctx.item_blocks]
    if missing_ctx:
        raise RerankError(f"prompt context lacks profiles for padded items {missing_ctx}")

    collected: dict[int, list[int]] = {i: [] for i in ids}
    fallback = False
    for round_no in range(RELEVANCY_ROUNDS):
        rng = np.random.default_rng([seed, pool.user, round_no])
        shuffled = [ids[int(j)] for j in rng.permutation(len(ids))]
        for lo in range(0, len(shuffled), BATCH):
            batch = shuffled[lo:lo + BATCH]
            try:
                scores = gateway.complete_structured(
                    _request("rerank_score", ctx, batch, f"rerank_score/{pool.user}"),
                    "id_score_list")
                for item, sc in scores.items():
                    collected[item].append(int(sc))
            except gw.GatewayError:
                fallback = True
    gat_norm = padded.gat_norm()
    gat_pos = {item: r for r, item in enumerate(ids)}
    llm: dict[int, float] = {}
    for i in ids:
        if collected[i]:
            llm[i] = float(np.mean(collected[i])) / 100.0
        else:
            llm[i] = gat_norm[i]
    order = sorted(ids, key=lambda i: (-llm[i], gat_pos[i]))
    return RerankResult("relevancy", order, llm, fallback)


def fuse(pool: CandidatePool, rr: RerankResult, w: float = 0.8) -> list[tuple[int, float]]:
    """Weighted blend of llm score and min-max-normalized GAT score,
    descending, ties broken by the GAT order."""
    if not (0.0 <= w <= 1.0):
        raise ValueError(f"fusion weight must be in [0,1], got {w}")
    gat_norm = pool.gat_norm()
    pos = {item: r for r, item in enumerate(pool.ids)}
    ids = list(rr.order)
    fused = {i: w * rr.llm_scores[i] + (1.0 - w) * gat_norm.get(i, 0.5) for i in ids}
    ordered = sorted(ids, key=lambda i: (-fused[i], pos.get(i, len(pos))))
    return [(i, fused[i]) for i in ordered]


def explain(top_items: list[int], ctx: PromptContext,
            gateway: gw.Gateway) -> list[Explanation]:
    """One structured call produces short per-item rationales; cited tags are
    validated against the two profiles and a gateway failure yields an empty
    list rather than interrupting the pipeline."""
    if not top_items:
        return []
    try:
        parsed = gateway.complete_structured(
            _request("explain", ctx, top_items, "explain"),
            "explanation_map")
    except gw.GatewayError:
        return []
    user_tags = set(ctx.user_profile.attributes) | set(ctx.user_profile.dislikes)
    out = []
    for item in top_items:
        entry = parsed[item]
        allowed = user_tags | set(ctx.item_profiles[item].attributes)
        tags = []
        for t in entry["tags"]:
            t = t.strip().lower()
            if t in allowed:
                tags.append(t)
            else:
                warnings.warn(f"explanation for item {item} cited unknown tag {t!r}; dropped",
                              stacklevel=2)
        out.append(Explanation(item_id=item, text=entry["text"], cited_tags=tags))
    return out
