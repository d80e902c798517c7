import numpy as np
import pytest

from semrec.embed import (DIM, CorruptStore, EmbedderConfig, EmbedderUnavailable,
                          EmbeddingStore, EmptyText, embed_text, mock_embed, store_load,
                          store_save)


class TestMockEmbed:
    def test_unit_norm(self):
        v = mock_embed("alien horror in deep space", seed=0)
        assert v.shape == (DIM,)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_order_insensitive_bag(self):
        assert np.array_equal(mock_embed("alien horror", seed=1),
                              mock_embed("horror alien", seed=1))

    def test_self_cosine_one(self):
        v = mock_embed("some text here", seed=2)
        assert abs(float(v @ v) - 1.0) < 1e-9

    def test_empty_text(self):
        with pytest.raises(EmptyText):
            mock_embed("   ", seed=0)

    def test_seed_changes_vector(self):
        assert not np.array_equal(mock_embed("same text", seed=1),
                                  mock_embed("same text", seed=2))

    def test_disjoint_tokens_near_zero_cosine(self):
        # frozen sampling of 100 disjoint 10-token pairs; |cos| < 0.3 for all
        rng = np.random.default_rng(2024)
        vocab = [f"tok{j}" for j in range(4000)]
        worst = 0.0
        for _ in range(100):
            picks = rng.choice(len(vocab), size=20, replace=False)
            a = " ".join(vocab[int(j)] for j in picks[:10])
            b = " ".join(vocab[int(j)] for j in picks[10:])
            cos = float(mock_embed(a, seed=7) @ mock_embed(b, seed=7))
            worst = max(worst, abs(cos))
        assert worst < 0.3

    def test_overlap_monotonicity_in_expectation(self):
        # over 100 seeds, cosine grows with shared-token count at fixed length
        rng = np.random.default_rng(99)
        vocab = [f"w{j}" for j in range(1000)]
        means = []
        for shared in (0, 3, 6, 9):
            vals = []
            for seed in range(100):
                picks = rng.choice(len(vocab), size=20 - shared, replace=False)
                common = [vocab[int(j)] for j in picks[:shared]]
                a = common + [vocab[int(j)] for j in picks[shared:10]]
                b = common + [vocab[int(j)] for j in picks[10:20 - shared]]
                vals.append(float(mock_embed(" ".join(a), seed=seed)
                                  @ mock_embed(" ".join(b), seed=seed)))
            means.append(np.mean(vals))
        assert means == sorted(means)
        assert means[-1] > means[0] + 0.5


class TestEmbedText:
    def test_mock_kind_normalized(self):
        v = embed_text("hello world", EmbedderConfig(kind="mock", seed=3))
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_identical_text_identical_vector(self):
        c = EmbedderConfig(kind="mock", seed=3)
        assert np.array_equal(embed_text("same", c), embed_text("same", c))

    def test_empty_errors(self):
        with pytest.raises(EmptyText):
            embed_text("", EmbedderConfig(kind="mock"))

    def test_remote_normalizes_and_retries(self):
        calls = []

        def transport(url, payload, headers):
            calls.append(1)
            if len(calls) == 1:
                raise ConnectionError("flaky")
            return {"data": [{"embedding": [2.0] + [0.0] * (DIM - 1)}]}

        v = embed_text("x", EmbedderConfig(kind="remote", endpoint="http://e", max_retries=3),
                       transport=transport, sleep=lambda _t: None)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-9
        assert v[0] == 1.0

    def test_remote_unavailable(self):
        def transport(url, payload, headers):
            raise ConnectionError("down")

        with pytest.raises(EmbedderUnavailable):
            embed_text("x", EmbedderConfig(kind="remote", endpoint="http://e", max_retries=2),
                       transport=transport, sleep=lambda _t: None)


def random_store(rng, n_users=5, n_items=7) -> EmbeddingStore:
    store = EmbeddingStore(provenance="mock")
    for u in range(1, n_users + 1):
        v = rng.standard_normal(DIM)
        store.user_vectors[u] = (v / np.linalg.norm(v)).astype("<f4")
    for i in range(1, n_items + 1):
        v = rng.standard_normal(DIM)
        store.item_vectors[i] = (v / np.linalg.norm(v)).astype("<f4")
    return store


class TestStore:
    def test_roundtrip_bit_exact_many(self, tmp_path):
        rng = np.random.default_rng(0)
        for case in range(25):
            store = random_store(rng, n_users=1 + case % 6, n_items=1 + case % 9)
            fp = tmp_path / f"s{case}.embs"
            store_save(store, fp)
            assert store_load(fp) == store

    def test_roundtrip_bytes_stable(self, tmp_path):
        store = random_store(np.random.default_rng(1))
        a, b = tmp_path / "a.embs", tmp_path / "b.embs"
        store_save(store, a)
        store_save(store_load(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_magic(self, tmp_path):
        fp = tmp_path / "bad.embs"
        fp.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CorruptStore):
            store_load(fp)

    def test_wrong_dim_header(self, tmp_path):
        store = random_store(np.random.default_rng(2), n_users=1, n_items=1)
        fp = tmp_path / "s.embs"
        store_save(store, fp)
        raw = bytearray(fp.read_bytes())
        raw[6:10] = (128).to_bytes(4, "little")
        fp.write_bytes(bytes(raw))
        with pytest.raises(CorruptStore):
            store_load(fp)

    def test_truncated_file(self, tmp_path):
        store = random_store(np.random.default_rng(3), n_users=2, n_items=2)
        fp = tmp_path / "s.embs"
        store_save(store, fp)
        fp.write_bytes(fp.read_bytes()[:-10])
        with pytest.raises(CorruptStore):
            store_load(fp)

    def test_loaded_provenance_is_file(self, tmp_path):
        store = random_store(np.random.default_rng(4), n_users=1, n_items=1)
        fp = tmp_path / "s.embs"
        store_save(store, fp)
        assert store_load(fp).provenance == "file"
