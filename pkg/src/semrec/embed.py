"""Text embedding (pluggable remote encoder or deterministic mock) and a binary vector store.

The mock is a seeded hashed bag-of-words: each lowercase token lands in one
of 384 buckets with a hash-derived sign, and the sum is L2-normalized. It is
order-insensitive, a pure function of (text, seed), and gives related texts
a reliably higher cosine than disjoint ones, which is all the tests and the
offline pipeline need.
"""

from __future__ import annotations

import hashlib
import os
import re
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIM = 384

_MAGIC = b"EMBS"
_VERSION = 1
_KIND_USER = 0
_KIND_ITEM = 1


class EmbedError(Exception):
    pass


class EmptyText(EmbedError):
    pass


class EmbedderUnavailable(EmbedError):
    pass


class CorruptStore(EmbedError):
    pass


@dataclass
class EmbedderConfig:
    kind: str = "mock"                 # mock | remote | file
    endpoint: str = ""
    model_name: str = ""
    api_key_env: str = ""
    max_retries: int = 3
    seed: int = 0
    store_path: str = ""               # kind == file


@dataclass
class EmbeddingStore:
    user_vectors: dict[int, np.ndarray] = field(default_factory=dict)
    item_vectors: dict[int, np.ndarray] = field(default_factory=dict)
    dim: int = DIM
    provenance: str = "mock"           # real | mock | file

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        if self.dim != other.dim:
            return False
        for mine, theirs in ((self.user_vectors, other.user_vectors),
                             (self.item_vectors, other.item_vectors)):
            if mine.keys() != theirs.keys():
                return False
            for k, v in mine.items():
                if not np.array_equal(v, theirs[k]):
                    return False
        return True


def _normalize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise EmbedError("embedding contains NaN/Inf")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # degenerate text (no tokens survive hashing); pin to a fixed axis
        vec = np.zeros(len(vec))
        vec[0] = 1.0
        return vec
    return vec / norm


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def mock_embed(text: str, seed: int = 0) -> np.ndarray:
    """Deterministic hashed bag-of-words embedding (384-d, unit norm)."""
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    acc = np.zeros(DIM, dtype=np.float64)
    for tok in _TOKEN_RE.findall(text.lower()):
        digest = hashlib.blake2b(tok.encode("utf-8"), digest_size=16,
                                 key=str(seed).encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "little") % DIM
        sign = 1.0 if digest[8] & 1 else -1.0
        acc[bucket] += sign
    return _normalize(acc)


def embed_text(text: str, config: EmbedderConfig, transport=None, sleep=time.sleep) -> np.ndarray:
    """Embed one text via the configured encoder; result is always unit-norm."""
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    if config.kind == "mock":
        return mock_embed(text, seed=config.seed)
    if config.kind != "remote":
        raise ValueError(f"embed_text cannot serve kind {config.kind!r}")

    import requests

    headers = {"Content-Type": "application/json"}
    key = os.environ.get(config.api_key_env or "", "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    payload = {"model": config.model_name, "input": [text]}
    last = None
    for attempt in range(max(1, config.max_retries)):
        try:
            if transport is not None:
                doc = transport(config.endpoint, payload, headers)
            else:
                resp = requests.post(config.endpoint, json=payload, headers=headers, timeout=60)
                resp.raise_for_status()
                doc = resp.json()
            vec = np.asarray(doc["data"][0]["embedding"], dtype=np.float64)
            if vec.shape != (DIM,):
                raise EmbedError(f"encoder returned dim {vec.shape}, expected ({DIM},)")
            return _normalize(vec)
        except EmbedError:
            raise
        except Exception as exc:
            last = exc
            if attempt + 1 < max(1, config.max_retries):
                sleep(min(0.25 * (2 ** attempt), 2.0))
    raise EmbedderUnavailable(f"embedder failed after {config.max_retries} attempts: {last}")


def store_save(store: EmbeddingStore, path: str | Path) -> None:
    """Write the store in the binary EMBS layout (f32 little-endian records)."""
    records = []
    for uid in sorted(store.user_vectors):
        records.append((_KIND_USER, uid, store.user_vectors[uid]))
    for iid in sorted(store.item_vectors):
        records.append((_KIND_ITEM, iid, store.item_vectors[iid]))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HII", _VERSION, store.dim, len(records)))
        for kind, ident, vec in records:
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (store.dim,):
                raise EmbedError(f"vector for id {ident} has shape {vec.shape}")
            fh.write(struct.pack("<BQ", kind, ident))
            fh.write(vec.tobytes())


def store_load(path: str | Path) -> EmbeddingStore:
    """Read an EMBS file; raises CorruptStore on bad magic, version, or dim."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 10 or raw[:4] != _MAGIC:
        raise CorruptStore(f"{path}: not an EMBS store")
    version, dim, count = struct.unpack_from("<HII", raw, 4)
    if version != _VERSION:
        raise CorruptStore(f"{path}: unsupported version {version}")
    if dim != DIM:
        raise CorruptStore(f"{path}: dim {dim} != expected {DIM}")
    store = EmbeddingStore(dim=dim, provenance="file")
    off = 14
    rec = 1 + 8 + 4 * dim
    if len(raw) != off + count * rec:
        raise CorruptStore(f"{path}: truncated ({len(raw)} bytes for {count} records)")
    for _ in range(count):
        kind, ident = struct.unpack_from("<BQ", raw, off)
        off += 9
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
        if kind == _KIND_USER:
            store.user_vectors[ident] = vec
        elif kind == _KIND_ITEM:
            store.item_vectors[ident] = vec
        else:
            raise CorruptStore(f"{path}: unknown record kind {kind}")
    return store


def store_header(path: str | Path) -> tuple[int, int, int]:
    """(version, dim, count) from an EMBS file header, for `inspect`."""
    with open(path, "rb") as fh:
        head = fh.read(14)
    if len(head) < 14 or head[:4] != _MAGIC:
        raise CorruptStore(f"{path}: not an EMBS store")
    return struct.unpack("<HII", head[4:])
