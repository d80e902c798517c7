"""Bipartite user-item interaction graph and BPR triple sampling.

Positive edges come from ratings of 4-5, explicitly disliked items (1-2) are
kept per user as hard-negative candidates, and 3s contribute nothing. The
graph is immutable after construction; samplers take caller-owned RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .ingest import NEGATIVE, POSITIVE, RatingRecord, polarity


class GraphError(Exception):
    pass


class NoNegativeAvailable(GraphError):
    pass


class TrainTriple(NamedTuple):
    user: int
    pos_item: int
    neg_item: int


@dataclass
class BipartiteGraph:
    n_users: int
    n_items: int
    pos_adj_user: list[list[int]]        # per user, sorted item indices
    pos_adj_item: list[list[int]]        # per item, sorted user indices
    neg_pairs: list[list[int]]           # per user, sorted disliked item indices
    user_id_of: list[int]                # dense index -> external id
    item_id_of: list[int]
    user_index: dict[int, int] = field(default_factory=dict)   # external id -> dense
    item_index: dict[int, int] = field(default_factory=dict)

    @property
    def n_pos_edges(self) -> int:
        return sum(len(a) for a in self.pos_adj_user)

    def pos_edge_array(self) -> np.ndarray:
        """All positive (user, item) index pairs, sorted by (user, item)."""
        pairs = [(u, i) for u in range(self.n_users) for i in self.pos_adj_user[u]]
        return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def build_graph(train: Sequence[RatingRecord],
                user_ids: Sequence[int] | None = None,
                item_ids: Sequence[int] | None = None) -> BipartiteGraph:
    """Build the interaction graph from train ratings.

    ``user_ids``/``item_ids`` fix the node universe (so users or items that
    only appear in test still get nodes and input embeddings); by default the
    universe is whatever occurs in ``train``.
    """
    users = sorted(set(user_ids)) if user_ids is not None else sorted({r.user_id for r in train})
    items = sorted(set(item_ids)) if item_ids is not None else sorted({r.item_id for r in train})
    uix = {u: k for k, u in enumerate(users)}
    iix = {i: k for k, i in enumerate(items)}

    pos_u: list[set[int]] = [set() for _ in users]
    pos_i: list[set[int]] = [set() for _ in items]
    neg_u: list[set[int]] = [set() for _ in users]
    for r in train:
        if r.user_id not in uix or r.item_id not in iix:
            continue
        pol = polarity(r.rating)
        u, i = uix[r.user_id], iix[r.item_id]
        if pol == POSITIVE:
            pos_u[u].add(i)
            pos_i[i].add(u)
        elif pol == NEGATIVE:
            neg_u[u].add(i)
    # a pair rated both ways cannot happen (duplicates collapse upstream), but
    # keep pos/neg disjoint defensively
    for u in range(len(users)):
        neg_u[u] -= pos_u[u]
    return BipartiteGraph(
        n_users=len(users),
        n_items=len(items),
        pos_adj_user=[sorted(s) for s in pos_u],
        pos_adj_item=[sorted(s) for s in pos_i],
        neg_pairs=[sorted(s) for s in neg_u],
        user_id_of=users,
        item_id_of=items,
        user_index=uix,
        item_index=iix,
    )


def subgraph_dropping_edges(graph: BipartiteGraph, drop: set[tuple[int, int]]) -> BipartiteGraph:
    """Copy of the graph without the given positive (user_idx, item_idx) edges.

    Negative pairs and the node universe are unchanged; used to hold
    validation edges out of message passing.
    """
    pos_u = [[i for i in adj if (u, i) not in drop] for u, adj in enumerate(graph.pos_adj_user)]
    pos_i: list[list[int]] = [[] for _ in range(graph.n_items)]
    for u, adj in enumerate(pos_u):
        for i in adj:
            pos_i[i].append(u)
    return BipartiteGraph(
        n_users=graph.n_users,
        n_items=graph.n_items,
        pos_adj_user=pos_u,
        pos_adj_item=[sorted(a) for a in pos_i],
        neg_pairs=[list(a) for a in graph.neg_pairs],
        user_id_of=list(graph.user_id_of),
        item_id_of=list(graph.item_id_of),
        user_index=dict(graph.user_index),
        item_index=dict(graph.item_index),
    )


def sample_negative(graph: BipartiteGraph, user: int, rng: np.random.Generator,
                    hard_prob: float = 0.5) -> int:
    """Draw one negative item for a user.

    With probability ``hard_prob`` (and when the user has explicit dislikes)
    returns a uniformly chosen disliked item; otherwise rejection-samples a
    uniform item outside the user's positive set.
    """
    pos = graph.pos_adj_user[user]
    if len(pos) >= graph.n_items:
        raise NoNegativeAvailable(f"user {user} has positive edges to every item")
    hard = graph.neg_pairs[user]
    if hard and rng.random() < hard_prob:
        return int(hard[int(rng.integers(0, len(hard)))])
    pos_set = set(pos)
    while True:
        cand = int(rng.integers(0, graph.n_items))
        if cand not in pos_set:
            return cand


def make_training_batch(graph: BipartiteGraph, batch_size: int,
                        rng: np.random.Generator, hard_prob: float = 0.5) -> list[TrainTriple]:
    """Sample BPR triples: (user, pos) uniform over positive edges, neg from sample_negative."""
    if batch_size <= 0:
        return []
    if graph.n_pos_edges == 0:
        raise GraphError("graph has no positive edges")
    edges = graph.pos_edge_array()
    picks = rng.integers(0, len(edges), size=batch_size)
    out = []
    for e in picks:
        u, i = int(edges[e, 0]), int(edges[e, 1])
        j = sample_negative(graph, u, rng, hard_prob=hard_prob)
        out.append(TrainTriple(u, i, j))
    return out
