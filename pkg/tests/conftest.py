import numpy as np
import pytest

from semrec.embed import EmbeddingStore, mock_embed
from semrec.gateway import Gateway, ProviderConfig
from semrec.graph import build_graph
from semrec.ingest import RatingRecord


@pytest.fixture
def mock_gateway():
    return Gateway(ProviderConfig(kind="mock", seed=3))


def failing_transport(url, payload, headers):
    """Remote transport that always answers with fence-less garbage, driving
    every structured call to MalformedOutput."""
    return {"choices": [{"message": {"content": "no fenced block here"}}]}


@pytest.fixture
def failing_gateway():
    return Gateway(ProviderConfig(kind="remote", endpoint="http://test.invalid",
                                  model_name="junk", max_retries=2),
                   transport=failing_transport, sleep=lambda _t: None)


def tiny_ratings(seed=42, n_users=5, n_items=8, density=0.6):
    rng = np.random.default_rng(seed)
    out = []
    for u in range(1, n_users + 1):
        for i in range(1, n_items + 1):
            r = int(rng.integers(1, 6))
            if rng.random() < density:
                out.append(RatingRecord(u, i, r, 1_000 + u * 10 + i))
    return out


@pytest.fixture
def tiny_graph_store():
    ratings = tiny_ratings(seed=7)
    graph = build_graph(ratings, user_ids=range(1, 6), item_ids=range(1, 9))
    store = EmbeddingStore(provenance="mock")
    for u in range(1, 6):
        store.user_vectors[u] = mock_embed(f"user {u} likes thoughtful {u % 3} cinema", seed=7)
    for i in range(1, 9):
        store.item_vectors[i] = mock_embed(f"item {i} genre {i % 4} story arc", seed=7)
    return graph, store
