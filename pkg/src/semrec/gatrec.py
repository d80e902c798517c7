"""Graph attention network over the bipartite graph: forward, loss, exact
gradients, training loop, scoring.

Everything is plain numpy in double precision. Users and items live in one
state matrix (users first), every node carries a self-loop, and both
partitions update from the same previous-layer states. Each of the three
layers runs four attention heads of width hidden/4, concatenates them,
adds the layer input back, layer-normalizes, and (on layers 1-2) applies a
LeakyReLU. Training blends BPR over sampled triples with a cosine pull
between users and their positive items, optimized by decoupled-weight-decay
Adam with early stopping on a held-out edge sample.

The backward pass is hand-derived reverse mode and is verified against
central finite differences in the test suite.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from ._kernels import edge_dot, softmax_backward
from .embed import EmbeddingStore
from .graph import BipartiteGraph, TrainTriple, sample_negative, subgraph_dropping_edges

_LN_EPS = 1e-5
_CKPT_MAGIC = b"GATC"
_CKPT_VERSION = 1


class GatError(Exception):
    pass


class MissingEmbedding(GatError):
    def __init__(self, kind: str, ident: int):
        super().__init__(f"embedding store lacks a vector for {kind} {ident}")


class NonFinite(GatError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite values appeared at layer {layer}")
        self.layer = layer


class Diverged(GatError):
    pass


class IndexOutOfRange(GatError):
    pass


class CorruptCheckpoint(GatError):
    pass


@dataclass
class GatConfig:
    input_dim: int = 384
    hidden_dim: int = 64
    heads: int = 4
    layers: int = 3
    dropout: float = 0.1
    leaky_slope: float = 0.2
    lambda_cos: float = 0.5
    lr: float = 1e-3
    weight_decay: float = 1e-5
    max_epochs: int = 300
    patience: int = 10
    batch_size: int = 1024
    seed: int = 0
    hard_neg_prob: float = 0.5

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ValueError("hidden_dim must be divisible by heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads


@dataclass
class GatParams:
    w_in: np.ndarray                       # (hidden, input_dim)
    b_in: np.ndarray                       # (hidden,)
    attn_w: list[list[np.ndarray]]         # [layer][head] (head_dim, hidden)
    attn_a: list[list[np.ndarray]]         # [layer][head] (2*head_dim,)
    ln_scale: list[np.ndarray]             # [layer] (hidden,)
    ln_shift: list[np.ndarray]             # [layer] (hidden,)

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("input_proj.w", self.w_in), ("input_proj.b", self.b_in)]
        for l in range(len(self.attn_w)):
            for h in range(len(self.attn_w[l])):
                out.append((f"layer{l + 1}.head{h + 1}.w", self.attn_w[l][h]))
                out.append((f"layer{l + 1}.head{h + 1}.a", self.attn_a[l][h]))
            out.append((f"layer{l + 1}.ln.scale", self.ln_scale[l]))
            out.append((f"layer{l + 1}.ln.shift", self.ln_shift[l]))
        return out

    def copy(self) -> "GatParams":
        return copy.deepcopy(self)

    def zeros_like(self) -> "GatParams":
        return GatParams(
            w_in=np.zeros_like(self.w_in),
            b_in=np.zeros_like(self.b_in),
            attn_w=[[np.zeros_like(w) for w in layer] for layer in self.attn_w],
            attn_a=[[np.zeros_like(a) for a in layer] for layer in self.attn_a],
            ln_scale=[np.zeros_like(s) for s in self.ln_scale],
            ln_shift=[np.zeros_like(s) for s in self.ln_shift],
        )

    def n_parameters(self) -> int:
        return sum(t.size for _, t in self.named_tensors())


@dataclass
class NodeStates:
    user_states: np.ndarray
    item_states: np.ndarray


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    validation_loss: list[float] = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False
    best_epoch: int = 0


class Workspace:
    """Pre-extracted features and edge structure for one (graph, store) pair.

    Edges are stored twice, sorted by destination and by source, so segment
    reductions on either side are contiguous ``reduceat`` calls. Every node
    has a self-loop, so no segment is empty.
    """

    def __init__(self, graph: BipartiteGraph, store: EmbeddingStore):
        self.graph = graph
        self.n_users = graph.n_users
        self.n_items = graph.n_items
        self.n = graph.n_users + graph.n_items

        dim = store.dim
        x = np.empty((self.n, dim), dtype=np.float64)
        for idx, ext in enumerate(graph.user_id_of):
            vec = store.user_vectors.get(ext)
            if vec is None:
                raise MissingEmbedding("user", ext)
            x[idx] = np.asarray(vec, dtype=np.float64)
        for idx, ext in enumerate(graph.item_id_of):
            vec = store.item_vectors.get(ext)
            if vec is None:
                raise MissingEmbedding("item", ext)
            x[self.n_users + idx] = np.asarray(vec, dtype=np.float64)
        self.x = x

        src_chunks = []
        counts = np.empty(self.n, dtype=np.int64)
        for v in range(self.n):
            if v < self.n_users:
                nb = [self.n_users + i for i in graph.pos_adj_user[v]]
            else:
                nb = list(graph.pos_adj_item[v - self.n_users])
            nb.append(v)
            nb.sort()
            src_chunks.append(np.asarray(nb, dtype=np.int64))
            counts[v] = len(nb)
        self.src = np.concatenate(src_chunks)
        self.dst = np.repeat(np.arange(self.n, dtype=np.int64), counts)
        self.counts = counts
        cum = np.cumsum(counts)
        self.offsets = np.concatenate(([0], cum))[:-1].astype(np.int64)
        self.n_edges = int(self.src.size)

        self.indptr = np.concatenate(([0], cum)).astype(np.int64)

        self.perm_src = np.argsort(self.src, kind="stable")
        src_counts = np.bincount(self.src, minlength=self.n)
        src_cum = np.cumsum(src_counts)
        self.src_offsets = np.concatenate(([0], src_cum))[:-1].astype(np.int64)

        # fixed CSR structure for edge-weighted aggregation; only .data is
        # swapped per head, so each matmul is one deterministic C pass
        full_indptr = np.concatenate(([0], cum)).astype(np.int32)
        self._agg = sparse.csr_matrix(
            (np.ones(self.n_edges), self.src.astype(np.int32), full_indptr),
            shape=(self.n, self.n))
        full_src_indptr = np.concatenate(([0], src_cum)).astype(np.int32)
        self._agg_t = sparse.csr_matrix(
            (np.ones(self.n_edges), self.dst[self.perm_src].astype(np.int32),
             full_src_indptr),
            shape=(self.n, self.n))

    def seg_sum_dst(self, per_edge: np.ndarray) -> np.ndarray:
        return np.add.reduceat(per_edge, self.offsets, axis=0)

    def seg_max_dst(self, per_edge: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(per_edge, self.offsets, axis=0)

    def seg_sum_src(self, per_edge: np.ndarray) -> np.ndarray:
        return np.add.reduceat(per_edge[self.perm_src], self.src_offsets, axis=0)

    def weighted_gather_dst(self, edge_weights: np.ndarray, node_values: np.ndarray) -> np.ndarray:
        """Per dst node: sum over its edges of weight * node_values[src]."""
        self._agg.data = edge_weights
        return self._agg @ node_values

    def weighted_gather_src(self, edge_weights: np.ndarray, node_values: np.ndarray) -> np.ndarray:
        """Per src node: sum over its edges of weight * node_values[dst]."""
        self._agg_t.data = edge_weights[self.perm_src]
        return self._agg_t @ node_values


def init_params(config: GatConfig, graph: BipartiteGraph, store: EmbeddingStore,
                rng: np.random.Generator) -> GatParams:
    """Symmetric-uniform (Glorot) weights, unit/zero layer norms; seeded and
    deterministic. Raises MissingEmbedding if the store does not cover the graph."""
    Workspace(graph, store)  # coverage check
    dh = config.head_dim

    def glorot(fan_in: int, fan_out: int, shape) -> np.ndarray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    w_in = glorot(config.input_dim, config.hidden_dim, (config.hidden_dim, config.input_dim))
    b_in = np.zeros(config.hidden_dim)
    attn_w, attn_a, ln_scale, ln_shift = [], [], [], []
    for _ in range(config.layers):
        ws, aa = [], []
        for _ in range(config.heads):
            ws.append(glorot(config.hidden_dim, dh, (dh, config.hidden_dim)))
            aa.append(glorot(2 * dh, 1, (2 * dh,)))
        attn_w.append(ws)
        attn_a.append(aa)
        ln_scale.append(np.ones(config.hidden_dim))
        ln_shift.append(np.zeros(config.hidden_dim))
    return GatParams(w_in, b_in, attn_w, attn_a, ln_scale, ln_shift)


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _sample_dropout_masks(config: GatConfig, ws: Workspace,
                          rng: np.random.Generator) -> list[dict]:
    p = config.dropout
    masks = []
    for _ in range(config.layers):
        masks.append({
            "input": (rng.random((ws.n, config.hidden_dim)) >= p).astype(np.float64),
            "att": [(rng.random(ws.n_edges) >= p).astype(np.float64)
                    for _ in range(config.heads)],
        })
    return masks


def _forward_cached(ws: Workspace, params: GatParams, config: GatConfig,
                    masks: list[dict] | None = None) -> dict:
    """Full forward pass keeping every intermediate needed for backward."""
    slope = config.leaky_slope
    dh = config.head_dim
    keep = 1.0 - config.dropout
    h = ws.x @ params.w_in.T + params.b_in
    if not np.all(np.isfinite(h)):
        raise NonFinite(0)
    cache = {"h0": h, "layers": []}
    for l in range(config.layers):
        lc: dict = {"p": h}
        if masks is not None:
            pd = h * masks[l]["input"] / keep
        else:
            pd = h
        lc["pd"] = pd
        heads_out = np.empty((ws.n, config.hidden_dim))
        lc["heads"] = []
        for hd in range(config.heads):
            z = pd @ params.attn_w[l][hd].T                       # (N, dh)
            a_dst = params.attn_a[l][hd][:dh]
            a_src = params.attn_a[l][hd][dh:]
            s = z @ a_dst
            t = z @ a_src
            pre = s[ws.dst] + t[ws.src]
            q = _leaky(pre, slope)
            m = ws.seg_max_dst(q)
            e = np.exp(q - m[ws.dst])
            denom = ws.seg_sum_dst(e)
            alpha = e / denom[ws.dst]
            if masks is not None:
                alpha_d = alpha * masks[l]["att"][hd] / keep
            else:
                alpha_d = alpha
            heads_out[:, hd * dh:(hd + 1) * dh] = ws.weighted_gather_dst(alpha_d, z)
            lc["heads"].append({"z": z, "pre": pre, "alpha": alpha, "alpha_d": alpha_d})
        r = h + heads_out
        mu = r.mean(axis=1, keepdims=True)
        var = r.var(axis=1)
        inv = 1.0 / np.sqrt(var + _LN_EPS)
        xhat = (r - mu) * inv[:, None]
        y = xhat * params.ln_scale[l] + params.ln_shift[l]
        lc.update(xhat=xhat, inv=inv, y=y)
        h = _leaky(y, slope) if l < config.layers - 1 else y
        if not np.all(np.isfinite(h)):
            raise NonFinite(l + 1)
        lc["out"] = h
        cache["layers"].append(lc)
    cache["h"] = h
    return cache


def forward(graph: BipartiteGraph, params: GatParams, store: EmbeddingStore,
            mode: str = "eval", config: GatConfig | None = None,
            rng: np.random.Generator | None = None,
            workspace: Workspace | None = None) -> NodeStates:
    """Run the network; ``train`` mode applies dropout from ``rng``."""
    config = config or GatConfig()
    ws = workspace if workspace is not None else Workspace(graph, store)
    masks = None
    if mode == "train" and config.dropout > 0.0:
        if rng is None:
            raise ValueError("train-mode forward needs an rng for dropout")
        masks = _sample_dropout_masks(config, ws, rng)
    elif mode not in ("train", "eval"):
        raise ValueError(f"unknown forward mode {mode!r}")
    cache = _forward_cached(ws, params, config, masks)
    h = cache["h"]
    return NodeStates(user_states=h[:ws.n_users].copy(), item_states=h[ws.n_users:].copy())


def score(states: NodeStates, user: int, item: int) -> float:
    if not (0 <= user < len(states.user_states)) or not (0 <= item < len(states.item_states)):
        raise IndexOutOfRange(f"user {user} or item {item} out of range")
    return float(states.user_states[user] @ states.item_states[item])


def _softplus(x: np.ndarray) -> np.ndarray:
    # ln(1 + e^x), stable on both tails
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _loss_on_h(h: np.ndarray, n_users: int, triples: np.ndarray,
               lambda_cos: float, want_grad: bool = True):
    """Hybrid loss on the stacked state matrix.

    Returns (total, bpr_mean, cos_mean, dh) where dh is None unless asked.
    """
    u = triples[:, 0]
    i = triples[:, 1] + n_users
    j = triples[:, 2] + n_users
    hu, hi, hj = h[u], h[i], h[j]
    s_pos = np.einsum("nd,nd->n", hu, hi)
    s_neg = np.einsum("nd,nd->n", hu, hj)
    diff = s_pos - s_neg
    bpr_each = _softplus(-diff)

    nu = np.linalg.norm(hu, axis=1)
    ni = np.linalg.norm(hi, axis=1)
    denom = np.maximum(nu * ni, 1e-300)
    cosv = s_pos / denom
    cos_each = 1.0 - cosv

    b = len(triples)
    bpr_mean = float(bpr_each.mean())
    cos_mean = float(cos_each.mean())
    total = bpr_mean + lambda_cos * cos_mean
    if not want_grad:
        return total, bpr_mean, cos_mean, None

    dh = np.zeros_like(h)
    g = _sigmoid(-diff) / b                              # d(mean bpr)/d(diff) = -g
    np.add.at(dh, u, g[:, None] * (hj - hi))
    np.add.at(dh, i, -g[:, None] * hu)
    np.add.at(dh, j, g[:, None] * hu)
    if lambda_cos != 0.0:
        lam = lambda_cos / b
        du = lam * (cosv[:, None] * hu / np.maximum(nu, 1e-300)[:, None] ** 2
                    - hi / denom[:, None])
        di = lam * (cosv[:, None] * hi / np.maximum(ni, 1e-300)[:, None] ** 2
                    - hu / denom[:, None])
        np.add.at(dh, u, du)
        np.add.at(dh, i, di)
    return total, bpr_mean, cos_mean, dh


def _as_triple_array(triples) -> np.ndarray:
    arr = np.asarray([(t.user, t.pos_item, t.neg_item) if isinstance(t, TrainTriple) else tuple(t)
                      for t in triples], dtype=np.int64)
    return arr.reshape(-1, 3)


def hybrid_loss(states: NodeStates, triples, lambda_cos: float = 0.5) -> float:
    """Mean BPR term plus ``lambda_cos`` times the mean (1 - cos(user, pos item))."""
    arr = _as_triple_array(triples)
    if arr.size == 0:
        raise ValueError("hybrid_loss needs at least one triple")
    h = np.concatenate([states.user_states, states.item_states], axis=0)
    total, _, _, _ = _loss_on_h(h, len(states.user_states), arr, lambda_cos, want_grad=False)
    return total


def _backward_from_cache(ws: Workspace, params: GatParams, config: GatConfig,
                         cache: dict, dh: np.ndarray,
                         masks: list[dict] | None = None) -> GatParams:
    slope = config.leaky_slope
    dh_cur = dh
    grads = params.zeros_like()
    keep = 1.0 - config.dropout
    dhd = config.head_dim
    for l in reversed(range(config.layers)):
        lc = cache["layers"][l]
        if l < config.layers - 1:
            dy = dh_cur * np.where(lc["y"] > 0, 1.0, slope)
        else:
            dy = dh_cur
        # layer norm backward
        gvec = dy * params.ln_scale[l]
        grads.ln_scale[l] += (dy * lc["xhat"]).sum(axis=0)
        grads.ln_shift[l] += dy.sum(axis=0)
        gm = gvec.mean(axis=1, keepdims=True)
        gxm = (gvec * lc["xhat"]).mean(axis=1, keepdims=True)
        dr = lc["inv"][:, None] * (gvec - gm - lc["xhat"] * gxm)

        dp = dr.copy()                       # residual path
        dpd = np.zeros_like(dp)
        pd = lc["pd"]
        for hd in range(config.heads):
            hc = lc["heads"][hd]
            z, pre, alpha, alpha_d = hc["z"], hc["pre"], hc["alpha"], hc["alpha_d"]
            do = dr[:, hd * dhd:(hd + 1) * dhd]
            # head output was weighted_gather_dst(alpha_d, z)
            dalpha_d = edge_dot(ws.indptr, ws.src, ws.dst, z, do)
            dz = ws.weighted_gather_src(alpha_d, do)
            if masks is not None:
                dalpha = dalpha_d * masks[l]["att"][hd] / keep
            else:
                dalpha = dalpha_d
            dq = softmax_backward(ws.indptr, ws.dst, alpha, dalpha)
            dpre = dq * np.where(pre > 0, 1.0, slope)
            ds = ws.seg_sum_dst(dpre)        # (N,) grad wrt s at each dst node
            dt = ws.seg_sum_src(dpre)        # (N,) grad wrt t at each src node
            a_dst = params.attn_a[l][hd][:dhd]
            a_src = params.attn_a[l][hd][dhd:]
            grads.attn_a[l][hd][:dhd] += z.T @ ds
            grads.attn_a[l][hd][dhd:] += z.T @ dt
            dz += ds[:, None] * a_dst + dt[:, None] * a_src
            grads.attn_w[l][hd] += dz.T @ pd
            dpd += dz @ params.attn_w[l][hd]
        if masks is not None:
            dp += dpd * masks[l]["input"] / keep
        else:
            dp += dpd
        dh_cur = dp
    grads.w_in += dh_cur.T @ ws.x
    grads.b_in += dh_cur.sum(axis=0)
    return grads


def backward(graph: BipartiteGraph, params: GatParams, store: EmbeddingStore,
             triples, config: GatConfig,
             workspace: Workspace | None = None) -> GatParams:
    """Exact reverse-mode gradients of hybrid_loss w.r.t. every parameter
    tensor, with dropout disabled (gradient-check mode)."""
    ws = workspace if workspace is not None else Workspace(graph, store)
    arr = _as_triple_array(triples)
    cache = _forward_cached(ws, params, config, masks=None)
    _, _, _, dh = _loss_on_h(cache["h"], ws.n_users, arr, config.lambda_cos)
    return _backward_from_cache(ws, params, config, cache, dh, masks=None)


def loss_components(graph: BipartiteGraph, params: GatParams, store: EmbeddingStore,
                    triples, config: GatConfig,
                    workspace: Workspace | None = None) -> tuple[float, float]:
    """(bpr_mean, cos_mean) at the eval-mode forward; one call serves any
    lambda_cos since the hybrid loss is affine in it."""
    ws = workspace if workspace is not None else Workspace(graph, store)
    arr = _as_triple_array(triples)
    cache = _forward_cached(ws, params, config, masks=None)
    _, bpr, cosm, _ = _loss_on_h(cache["h"], ws.n_users, arr, 0.0, want_grad=False)
    return bpr, cosm


class _Adam:
    """Decoupled-weight-decay adaptive-moment step over named tensors."""

    def __init__(self, params: GatParams, lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.wd = lr, weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(tensor) for name, tensor in params.named_tensors()}
        self.v = {name: np.zeros_like(tensor) for name, tensor in params.named_tensors()}

    def step(self, params: GatParams, grads: GatParams) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for (name, theta), (_, g) in zip(params.named_tensors(), grads.named_tensors()):
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            theta -= self.lr * update + self.lr * self.wd * theta


def train(graph: BipartiteGraph, store: EmbeddingStore,
          config: GatConfig) -> tuple[GatParams, TrainLog]:
    """Full training loop; deterministic for a fixed config seed.

    A seeded 10% of positive edges is held out of message passing and BPR
    sampling and scored (with fixed sampled negatives) as the validation
    loss; training stops once validation fails to improve by 1e-5 for
    ``patience`` consecutive epochs (at least one), returning the
    best-validation parameters.
    """
    if graph.n_pos_edges == 0:
        raise GatError("training needs at least one positive edge")
    rng = np.random.default_rng(config.seed)
    edges = graph.pos_edge_array()
    n_edges = len(edges)
    n_val = min(max(1, n_edges // 10), n_edges - 1) if n_edges >= 2 else 0

    if n_val > 0:
        val_pick = np.sort(rng.choice(n_edges, size=n_val, replace=False))
        val_edges = edges[val_pick]
        train_graph = subgraph_dropping_edges(
            graph, {(int(u), int(i)) for u, i in val_edges})
    else:
        val_edges = edges
        train_graph = graph
    val_triples = np.empty((len(val_edges), 3), dtype=np.int64)
    for k, (u, i) in enumerate(val_edges):
        # negatives drawn against the full positive sets so a held-out
        # positive is never its own negative
        val_triples[k] = (u, i, sample_negative(graph, int(u), rng,
                                                hard_prob=config.hard_neg_prob))

    ws = Workspace(train_graph, store)
    params = init_params(config, train_graph, store, rng)
    optimizer = _Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    train_edges = train_graph.pos_edge_array()
    if len(train_edges) == 0:
        raise GatError("validation holdout consumed every positive edge")
    steps = max(1, int(np.ceil(len(train_edges) / config.batch_size)))

    log = TrainLog()
    best_val = np.inf
    best_params = params.copy()
    bad_streak = 0
    stop_after = max(1, config.patience)
    for epoch in range(1, config.max_epochs + 1):
        epoch_losses = []
        for _ in range(steps):
            picks = rng.integers(0, len(train_edges), size=config.batch_size)
            batch = np.empty((config.batch_size, 3), dtype=np.int64)
            for k, e in enumerate(picks):
                u, i = int(train_edges[e, 0]), int(train_edges[e, 1])
                batch[k] = (u, i, sample_negative(graph, u, rng,
                                                  hard_prob=config.hard_neg_prob))
            masks = (_sample_dropout_masks(config, ws, rng)
                     if config.dropout > 0.0 else None)
            try:
                cache = _forward_cached(ws, params, config, masks)
                total, _, _, dh = _loss_on_h(cache["h"], ws.n_users, batch, config.lambda_cos)
            except NonFinite as exc:
                raise Diverged(f"training diverged at epoch {epoch}: {exc}") from exc
            if not np.isfinite(total):
                raise Diverged(f"training loss became non-finite at epoch {epoch}")
            grads = _backward_from_cache(ws, params, config, cache, dh, masks)
            optimizer.step(params, grads)
            epoch_losses.append(total)
        log.train_loss.append(float(np.mean(epoch_losses)))

        cache = _forward_cached(ws, params, config, masks=None)
        val, _, _, _ = _loss_on_h(cache["h"], ws.n_users, val_triples,
                                  config.lambda_cos, want_grad=False)
        log.validation_loss.append(float(val))
        log.epochs_run = epoch
        if val < best_val - 1e-5:
            best_val = val
            best_params = params.copy()
            log.best_epoch = epoch
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak >= stop_after:
                log.stopped_early = True
                break
    if log.best_epoch == 0:
        log.best_epoch = log.epochs_run
        best_params = params.copy()
    return best_params, log


def full_scores(states: NodeStates, graph: BipartiteGraph, user: int) -> list[tuple[int, float]]:
    """Dot-product scores for every item the user has no positive train edge
    to, best first (ties by ascending item index). Items are dense indices."""
    if not (0 <= user < graph.n_users):
        raise IndexOutOfRange(f"user {user} out of range")
    scores = states.item_states @ states.user_states[user]
    exclude = set(graph.pos_adj_user[user])
    order = np.lexsort((np.arange(graph.n_items), -scores))
    return [(int(i), float(scores[i])) for i in order if int(i) not in exclude]


def save_checkpoint(params: GatParams, config: GatConfig, path: str | Path) -> None:
    """GATC binary layout: magic, version, config JSON, tensors as f64 LE."""
    cfg_json = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<HI", _CKPT_VERSION, len(cfg_json)))
        fh.write(cfg_json)
        tensors = params.named_tensors()
        fh.write(struct.pack("<I", len(tensors)))
        for _, tensor in tensors:
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[GatParams, GatConfig]:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != _CKPT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a GAT checkpoint")
    version, cfg_len = struct.unpack_from("<HI", raw, 4)
    if version != _CKPT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    off = 10
    try:
        config = GatConfig(**json.loads(raw[off:off + cfg_len].decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: bad config block: {exc}") from None
    off += cfg_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    dh = config.head_dim
    shapes = [("input_proj.w", (config.hidden_dim, config.input_dim)),
              ("input_proj.b", (config.hidden_dim,))]
    for l in range(config.layers):
        for h in range(config.heads):
            shapes.append((f"layer{l + 1}.head{h + 1}.w", (dh, config.hidden_dim)))
            shapes.append((f"layer{l + 1}.head{h + 1}.a", (2 * dh,)))
        shapes.append((f"layer{l + 1}.ln.scale", (config.hidden_dim,)))
        shapes.append((f"layer{l + 1}.ln.shift", (config.hidden_dim,)))
    if count != len(shapes):
        raise CorruptCheckpoint(f"{path}: {count} tensors, expected {len(shapes)}")
    arrays = {}
    for name, shape in shapes:
        n = int(np.prod(shape))
        need = 8 * n
        if off + need > len(raw):
            raise CorruptCheckpoint(f"{path}: truncated tensor {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += need
    if off != len(raw):
        raise CorruptCheckpoint(f"{path}: trailing bytes after tensors")
    params = GatParams(
        w_in=arrays["input_proj.w"],
        b_in=arrays["input_proj.b"],
        attn_w=[[arrays[f"layer{l + 1}.head{h + 1}.w"] for h in range(config.heads)]
                for l in range(config.layers)],
        attn_a=[[arrays[f"layer{l + 1}.head{h + 1}.a"] for h in range(config.heads)]
                for l in range(config.layers)],
        ln_scale=[arrays[f"layer{l + 1}.ln.scale"] for l in range(config.layers)],
        ln_shift=[arrays[f"layer{l + 1}.ln.shift"] for l in range(config.layers)],
    )
    return params, config
