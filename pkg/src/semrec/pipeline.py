"""Pipeline orchestration: one declarative config drives
ingest -> profile -> embed -> train -> rerank -> evaluate with per-stage
artifact caching and derived per-stage seeds (global seed + stage index).

A stage is skipped when its recorded input digest (upstream artifact bytes
plus the owning config section plus the stage seed) and its output digest
both still match; anything stale, missing, or corrupted is recomputed.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import gatrec
from .embed import EmbedderConfig, EmbeddingStore, embed_text, mock_embed, store_load, store_save
from .evalrec import (SLICE_ALL, FoldEval, MetricsReport, emit_report, evaluate_run,
                      relevance_sets)
from .gateway import Gateway, MalformedOutput, ProviderConfig
from .graph import build_graph
from .ingest import (Dataset, FoldSplit, load_dataset, load_item_metadata, make_cold_start_slice,
                     make_folds, parse_movielens, save_dataset)
from .profiles import (generate_item_profile, generate_user_profile, integrated_user_text,
                       minimal_item_profile, load_profiles, render_integrated_text,
                       render_profile, save_profiles, select_profile_seeds)
from .rerank import (CandidatePool, PromptContext, RerankResult, explain, fuse,
                     rerank_batch_overlap, rerank_pairwise_bst, rerank_prompt_level,
                     rerank_relevancy, select_pool)

STAGES = ("ingest", "profile", "embed", "train", "rerank", "evaluate")
STRATEGIES = ("prompt", "bst", "batch", "relevancy", "none")

_FORMAT_ALIASES = {"100k": "tab100k", "1m": "colon1m",
                   "tab100k": "tab100k", "colon1m": "colon1m"}


class PipelineError(Exception):
    pass


class StageFailed(PipelineError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class UnknownArtifact(PipelineError):
    pass


@dataclass
class RunConfig:
    ratings_path: str = ""
    ratings_format: str = "tab100k"
    fixtures_dir: str = ""
    metadata_source: str = "fixture_dir"
    url_template: str = ""
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    variant: str = "unified"              # unified | integrated
    gat: gatrec.GatConfig = field(default_factory=gatrec.GatConfig)
    strategy: str = "relevancy"
    fusion_weight: float = 0.8
    pool_prompt: int = 20
    pool_batch: int = 30
    k: int = 10
    n_folds: int = 5
    fold: str = "0"                       # index or "all"
    cold_start_fraction: float = 0.1
    seed: int = 0
    artifacts_dir: str = "artifacts"

    def __post_init__(self):
        self.ratings_format = _FORMAT_ALIASES.get(self.ratings_format, self.ratings_format)
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.variant not in ("unified", "integrated"):
            raise ValueError("variant must be unified or integrated")

    def stage_seed(self, stage: str) -> int:
        return self.seed + STAGES.index(stage)

    def fold_indices(self) -> list[int]:
        if self.fold == "all":
            return list(range(self.n_folds))
        return [int(self.fold)]

    def section_dict(self, name: str) -> dict:
        if name == "data":
            return {"ratings_path": self.ratings_path, "ratings_format": self.ratings_format,
                    "fixtures_dir": self.fixtures_dir, "metadata_source": self.metadata_source,
                    "url_template": self.url_template, "n_folds": self.n_folds,
                    "cold_start_fraction": self.cold_start_fraction}
        if name == "provider":
            return asdict(self.provider)
        if name == "embedder":
            return asdict(self.embedder)
        if name == "profiles":
            return {"variant": self.variant}
        if name == "gat":
            return asdict(self.gat)
        if name == "rerank":
            return {"strategy": self.strategy, "fusion_weight": self.fusion_weight,
                    "pool_prompt": self.pool_prompt, "pool_batch": self.pool_batch}
        if name == "eval":
            return {"k": self.k}
        raise KeyError(name)


def _coerce(value: str, target_type):
    if target_type is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    return target_type(value)


def _fill_dataclass(cls, section) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in section:
            target = type(getattr(cls(), f.name))
            out[f.name] = _coerce(section[f.name], target)
    return out


def load_run_config(path: str | Path) -> RunConfig:
    """Parse the INI-style run config (see configs/example.cfg)."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise PipelineError(f"config file not found: {path}")
    cfg = RunConfig()
    if parser.has_section("data"):
        d = parser["data"]
        cfg.ratings_path = d.get("ratings", cfg.ratings_path)
        cfg.ratings_format = _FORMAT_ALIASES.get(d.get("format", cfg.ratings_format),
                                                 d.get("format", cfg.ratings_format))
        cfg.fixtures_dir = d.get("fixtures", cfg.fixtures_dir)
        cfg.metadata_source = d.get("metadata_source", cfg.metadata_source)
        cfg.url_template = d.get("url_template", cfg.url_template)
    if parser.has_section("provider"):
        cfg.provider = ProviderConfig(**_fill_dataclass(ProviderConfig, parser["provider"]))
    if parser.has_section("embedder"):
        cfg.embedder = EmbedderConfig(**_fill_dataclass(EmbedderConfig, parser["embedder"]))
    if parser.has_section("profiles"):
        cfg.variant = parser["profiles"].get("variant", cfg.variant)
    if parser.has_section("gat"):
        cfg.gat = gatrec.GatConfig(**_fill_dataclass(gatrec.GatConfig, parser["gat"]))
    if parser.has_section("rerank"):
        r = parser["rerank"]
        cfg.strategy = r.get("strategy", cfg.strategy)
        cfg.fusion_weight = r.getfloat("weight", cfg.fusion_weight)
        cfg.pool_prompt = r.getint("pool_prompt", cfg.pool_prompt)
        cfg.pool_batch = r.getint("pool_batch", cfg.pool_batch)
    if parser.has_section("eval"):
        e = parser["eval"]
        cfg.k = e.getint("k", cfg.k)
        cfg.n_folds = e.getint("folds", cfg.n_folds)
        cfg.fold = e.get("fold", cfg.fold)
        cfg.cold_start_fraction = e.getfloat("cold_start_fraction", cfg.cold_start_fraction)
    if parser.has_section("run"):
        r = parser["run"]
        cfg.seed = r.getint("seed", cfg.seed)
        cfg.artifacts_dir = r.get("artifacts_dir", cfg.artifacts_dir)
    return RunConfig(**asdict_shallow(cfg))


def asdict_shallow(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        out[f.name] = getattr(cfg, f.name)
    return out


# ---------------------------------------------------------------- caching

def _digest(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(len(c).to_bytes(8, "little"))
        h.update(c)
    return h.hexdigest()


def _hash_path(path: Path) -> bytes:
    if path.is_dir():
        h = hashlib.sha256()
        for fp in sorted(path.rglob("*")):
            if fp.is_file():
                h.update(str(fp.relative_to(path)).encode())
                h.update(fp.read_bytes())
        return h.digest()
    if path.is_file():
        return hashlib.sha256(path.read_bytes()).digest()
    return b"<missing>"


def _section_bytes(cfg: RunConfig, *names: str) -> bytes:
    doc = {n: cfg.section_dict(n) for n in names}
    return json.dumps(doc, sort_keys=True).encode()


class _Stamps:
    def __init__(self, artifacts_dir: Path):
        self.dir = artifacts_dir / ".stamps"
        self.dir.mkdir(parents=True, exist_ok=True)

    def fresh(self, name: str, input_digest: str, outputs: list[Path]) -> bool:
        fp = self.dir / f"{name}.json"
        if not fp.exists() or not all(p.exists() for p in outputs):
            return False
        try:
            doc = json.loads(fp.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            return False
        if doc.get("inputs") != input_digest:
            return False
        return doc.get("output") == _digest(*(_hash_path(p) for p in outputs))

    def record(self, name: str, input_digest: str, outputs: list[Path]) -> None:
        doc = {"inputs": input_digest,
               "output": _digest(*(_hash_path(p) for p in outputs))}
        (self.dir / f"{name}.json").write_text(json.dumps(doc), encoding="utf-8")


# ---------------------------------------------------------------- stages

def stage_ingest(cfg: RunConfig, force: bool = False) -> Path:
    art = Path(cfg.artifacts_dir)
    art.mkdir(parents=True, exist_ok=True)
    out = art / "dataset.json"
    stamps = _Stamps(art)
    input_digest = _digest(_hash_path(Path(cfg.ratings_path)),
                           _hash_path(Path(cfg.fixtures_dir)) if cfg.fixtures_dir else b"",
                           _section_bytes(cfg, "data"),
                           str(cfg.stage_seed("ingest")).encode())
    if not force and stamps.fresh("ingest", input_digest, [out]):
        return out
    dataset = parse_movielens(cfg.ratings_path, cfg.ratings_format)
    if cfg.fixtures_dir or cfg.metadata_source == "live_api":
        dataset.catalog = load_item_metadata(
            dataset.item_ids, source=cfg.metadata_source,
            fixture_dir=cfg.fixtures_dir or "fixtures",
            url_template=cfg.url_template,
            api_key_env=cfg.provider.api_key_env)
    else:
        dataset.catalog = load_item_metadata(dataset.item_ids, source="fixture_dir",
                                             fixture_dir="/nonexistent")
    save_dataset(dataset, out)
    stamps.record("ingest", input_digest, [out])
    return out


def dataset_folds(cfg: RunConfig, dataset: Dataset) -> list[FoldSplit]:
    folds = make_folds(dataset, k=cfg.n_folds, seed=cfg.stage_seed("ingest"))
    if cfg.cold_start_fraction > 0.0:
        folds = [make_cold_start_slice(f, cfg.cold_start_fraction,
                                       seed=cfg.stage_seed("ingest")) for f in folds]
    return folds


def _profile_gateway(cfg: RunConfig, stage: str) -> Gateway:
    pconf = replace(cfg.provider, seed=cfg.stage_seed(stage))
    return Gateway(pconf)


def _compute_profiles(cfg: RunConfig, dataset: Dataset, fold: FoldSplit, out: Path) -> Path:
    gateway = _profile_gateway(cfg, "profile")

    item_profiles = {}
    for item_id in sorted(dataset.catalog):
        meta = dataset.catalog[item_id]
        try:
            item_profiles[item_id] = generate_item_profile(meta, gateway)
        except MalformedOutput:
            item_profiles[item_id] = minimal_item_profile(meta)

    by_user: dict[int, list] = {}
    for r in fold.train:
        by_user.setdefault(r.user_id, []).append(r)
    user_profiles = {}
    for user_id in sorted(by_user):
        liked, disliked = select_profile_seeds(by_user[user_id])
        seeds = [(item_profiles.get(r.item_id) or minimal_item_profile(
            dataset.catalog[r.item_id]), r.rating) for r in liked + disliked]
        user_profiles[user_id] = generate_user_profile(seeds, gateway, user_id=user_id)

    if out.exists():
        for stale in out.glob("*"):
            stale.unlink()
    save_profiles(out, list(item_profiles.values()) + list(user_profiles.values()))

    if cfg.variant == "integrated":
        # reranking still consumes the unified documents; the .txt files are
        # the schema-free embedding inputs
        for item_id, meta in dataset.catalog.items():
            (out / f"item_{item_id}.txt").write_text(
                render_integrated_text(meta), encoding="utf-8")
        for user_id in sorted(by_user):
            liked, disliked = select_profile_seeds(by_user[user_id])
            seeds = [(dataset.catalog[r.item_id], r.rating) for r in liked + disliked]
            (out / f"user_{user_id}.txt").write_text(
                integrated_user_text(seeds), encoding="utf-8")
    return out


def stage_profile(cfg: RunConfig, dataset: Dataset, fold: FoldSplit,
                  fold_dir: Path, dataset_path: Path, force: bool = False) -> Path:
    out = fold_dir / "profiles"
    stamps = _Stamps(Path(cfg.artifacts_dir))
    name = f"profile_fold{fold.fold_index}"
    input_digest = _digest(_hash_path(dataset_path),
                           _section_bytes(cfg, "data", "provider", "profiles"),
                           str(cfg.stage_seed("profile")).encode())
    if not force and stamps.fresh(name, input_digest, [out]):
        return out
    _compute_profiles(cfg, dataset, fold, out)
    stamps.record(name, input_digest, [out])
    return out


def _embed_one(text: str, cfg: RunConfig) -> np.ndarray:
    ec = replace(cfg.embedder, seed=cfg.stage_seed("embed"))
    if ec.kind == "mock":
        return mock_embed(text, seed=ec.seed)
    return embed_text(text, ec)


def _compute_embeddings(cfg: RunConfig, profiles_dir: Path, out: Path) -> Path:
    if cfg.embedder.kind == "file":
        store = store_load(cfg.embedder.store_path)
        store_save(store, out)
        return out

    profs = load_profiles(profiles_dir)

    def text_for(kind: str, ident: int) -> str:
        if cfg.variant == "integrated":
            fp = profiles_dir / f"{kind}_{ident}.txt"
            if fp.exists():
                return fp.read_text(encoding="utf-8")
        return render_profile(profs[(kind, ident)])

    store = EmbeddingStore(provenance="mock" if cfg.embedder.kind == "mock" else "real")
    for (kind, ident) in sorted(profs):
        vec = _embed_one(text_for(kind, ident), cfg)
        if kind == "user":
            store.user_vectors[ident] = vec
        else:
            store.item_vectors[ident] = vec
    store_save(store, out)
    return out


def stage_embed(cfg: RunConfig, fold_dir: Path, force: bool = False) -> Path:
    profiles_dir = fold_dir / "profiles"
    out = fold_dir / "embeddings.embs"
    stamps = _Stamps(Path(cfg.artifacts_dir))
    name = f"embed_{fold_dir.name}"
    input_digest = _digest(_hash_path(profiles_dir),
                           _section_bytes(cfg, "embedder", "profiles"),
                           str(cfg.stage_seed("embed")).encode())
    if not force and stamps.fresh(name, input_digest, [out]):
        return out
    _compute_embeddings(cfg, profiles_dir, out)
    stamps.record(name, input_digest, [out])
    return out


def stage_train(cfg: RunConfig, dataset: Dataset, fold: FoldSplit,
                fold_dir: Path, force: bool = False) -> Path:
    store_path = fold_dir / "embeddings.embs"
    out = fold_dir / "gat.ckpt"
    log_path = fold_dir / "train_log.json"
    stamps = _Stamps(Path(cfg.artifacts_dir))
    name = f"train_fold{fold.fold_index}"
    input_digest = _digest(_hash_path(store_path), _section_bytes(cfg, "gat"),
                           str(cfg.stage_seed("train")).encode())
    if not force and stamps.fresh(name, input_digest, [out, log_path]):
        return out
    store = store_load(store_path)
    graph = build_graph(fold.train, user_ids=dataset.user_ids, item_ids=dataset.item_ids)
    gat_cfg = replace(cfg.gat, seed=cfg.stage_seed("train"))
    params, log = gatrec.train(graph, store, gat_cfg)
    gatrec.save_checkpoint(params, gat_cfg, out)
    log_path.write_text(json.dumps(asdict(log), sort_keys=True), encoding="utf-8")
    stamps.record(name, input_digest, [out, log_path])
    return out


def _escape_text(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _pool_size_for(cfg: RunConfig, available: int) -> int:
    if cfg.strategy in ("batch", "relevancy"):
        size = min(cfg.pool_batch, available)
        size -= size % 5
        return size
    return min(cfg.pool_prompt, available)


def _run_strategy(cfg: RunConfig, pool: CandidatePool, ctx: PromptContext,
                  gateway: Gateway, user_id: int) -> RerankResult | None:
    if cfg.strategy == "prompt":
        return rerank_prompt_level(pool, ctx, gateway)
    if cfg.strategy == "bst":
        return rerank_pairwise_bst(pool, ctx, gateway)
    if cfg.strategy == "batch":
        return rerank_batch_overlap(pool, ctx, gateway)
    if cfg.strategy == "relevancy":
        return rerank_relevancy(pool, ctx, gateway, seed=cfg.stage_seed("rerank"))
    return None


def _compute_rerank(cfg: RunConfig, dataset: Dataset, fold: FoldSplit,
                    ckpt_path: Path, store_path: Path, profiles_dir: Path,
                    out: Path) -> Path:
    params, gat_cfg = gatrec.load_checkpoint(ckpt_path)
    store = store_load(store_path)
    graph = build_graph(fold.train, user_ids=dataset.user_ids, item_ids=dataset.item_ids)
    states = gatrec.forward(graph, params, store, "eval", gat_cfg)
    profs = load_profiles(profiles_dir)
    gateway = _profile_gateway(cfg, "rerank")

    test_users = sorted({r.user_id for r in fold.test})
    rows = []
    for user_id in test_users:
        uix = graph.user_index.get(user_id)
        uprof = profs.get(("user", user_id))
        if uix is None or uprof is None:
            continue
        scored = [(graph.item_id_of[i], s) for i, s in gatrec.full_scores(states, graph, uix)]
        size = _pool_size_for(cfg, len(scored))
        if size < 1 or (cfg.strategy in ("batch", "relevancy") and size < 5):
            warnings.warn(f"user {user_id}: only {len(scored)} candidates; skipped")
            continue
        pool = select_pool(scored, size, user=user_id)
        gat_raw = dict(pool.items)

        if cfg.strategy == "none":
            norm = pool.gat_norm()
            ordered = [(i, norm[i]) for i in pool.ids]
            llm_of = {}
            fallback = False
            explanations = {}
        else:
            item_profiles = {i: profs[("item", i)] for i in pool.ids if ("item", i) in profs}
            if len(item_profiles) < len(pool.ids):
                warnings.warn(f"user {user_id}: missing item profiles; skipped")
                continue
            ctx = PromptContext.build(uprof, item_profiles)
            rr = _run_strategy(cfg, pool, ctx, gateway, user_id)
            ordered = fuse(pool, rr, w=cfg.fusion_weight)
            llm_of = rr.llm_scores
            fallback = rr.fallback_used
            top = [i for i, _ in ordered[:cfg.k]]
            explanations = {e.item_id: e.text
                            for e in explain(top, ctx, gateway)}

        for rank, (item_id, fused_score) in enumerate(ordered, start=1):
            llm_s = llm_of.get(item_id)
            rows.append("\t".join([
                str(user_id), cfg.strategy, str(rank), str(item_id),
                f"{fused_score:.6f}",
                "" if llm_s is None else f"{llm_s:.6f}",
                f"{gat_raw.get(item_id, 0.0):.6f}",
                "1" if fallback else "0",
                _escape_text(explanations.get(item_id, "")),
            ]))
    header = "user_id\tstrategy\trank\titem_id\tfused_score\tllm_score\tgat_score\tfallback_used\texplanation"
    out.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return out


def stage_rerank(cfg: RunConfig, dataset: Dataset, fold: FoldSplit,
                 fold_dir: Path, force: bool = False) -> Path:
    ckpt_path = fold_dir / "gat.ckpt"
    store_path = fold_dir / "embeddings.embs"
    profiles_dir = fold_dir / "profiles"
    out = fold_dir / "recs.tsv"
    stamps = _Stamps(Path(cfg.artifacts_dir))
    name = f"rerank_fold{fold.fold_index}"
    input_digest = _digest(_hash_path(ckpt_path), _hash_path(store_path),
                           _hash_path(profiles_dir),
                           _section_bytes(cfg, "rerank", "provider", "eval"),
                           str(cfg.stage_seed("rerank")).encode())
    if not force and stamps.fresh(name, input_digest, [out]):
        return out
    _compute_rerank(cfg, dataset, fold, ckpt_path, store_path, profiles_dir, out)
    stamps.record(name, input_digest, [out])
    return out


# standalone entry points for the per-stage CLI subcommands (no stamp cache)

def stage_profile_standalone(cfg: RunConfig, dataset: Dataset, fold: FoldSplit,
                             out_dir: Path, dataset_path: Path) -> Path:
    return _compute_profiles(cfg, dataset, fold, out_dir)


def stage_embed_standalone(cfg: RunConfig, profiles_dir: Path, out: Path) -> Path:
    return _compute_embeddings(cfg, profiles_dir, out)


def stage_rerank_standalone(cfg: RunConfig, dataset: Dataset, fold: FoldSplit,
                            ckpt: Path, store_path: Path, profiles_dir: Path,
                            out: Path) -> Path:
    return _compute_rerank(cfg, dataset, fold, ckpt, store_path, profiles_dir, out)


def read_recs(path: str | Path) -> dict[int, list[int]]:
    """user -> item ids ordered by rank, from a recommendations TSV."""
    rankings: dict[int, list[tuple[int, int]]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        idx = {name: i for i, name in enumerate(header)}
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 4:
                continue
            user = int(parts[idx["user_id"]])
            rankings.setdefault(user, []).append(
                (int(parts[idx["rank"]]), int(parts[idx["item_id"]])))
    return {u: [item for _, item in sorted(pairs)] for u, pairs in rankings.items()}


def stage_evaluate(cfg: RunConfig, dataset: Dataset, fold: FoldSplit,
                   fold_dir: Path) -> FoldEval:
    rankings = read_recs(fold_dir / "recs.tsv")
    relevance = relevance_sets(fold.test)
    return evaluate_run(rankings, relevance, cfg.k,
                        cold_start_users=fold.cold_start_users,
                        fold_index=fold.fold_index)


# ---------------------------------------------------------------- drivers

def run_pipeline_on_dataset(dataset: Dataset, cfg: RunConfig, force: bool = False,
                            dataset_path: Path | None = None) -> list[MetricsReport]:
    art = Path(cfg.artifacts_dir)
    art.mkdir(parents=True, exist_ok=True)
    if dataset_path is None:
        dataset_path = art / "dataset.json"
        if not dataset_path.exists():
            save_dataset(dataset, dataset_path)
    folds = dataset_folds(cfg, dataset)
    report = MetricsReport(k=cfg.k, strategy=cfg.strategy)
    for fold_index in cfg.fold_indices():
        fold = folds[fold_index]
        fold_dir = art / f"fold{fold_index}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        for stage_name, fn in (
            ("profile", lambda: stage_profile(cfg, dataset, fold, fold_dir,
                                              dataset_path, force)),
            ("embed", lambda: stage_embed(cfg, fold_dir, force)),
            ("train", lambda: stage_train(cfg, dataset, fold, fold_dir, force)),
            ("rerank", lambda: stage_rerank(cfg, dataset, fold, fold_dir, force)),
        ):
            try:
                fn()
            except Exception as exc:
                raise StageFailed(f"{stage_name}[fold {fold_index}]", exc) from exc
        try:
            report.folds.append(stage_evaluate(cfg, dataset, fold, fold_dir))
        except Exception as exc:
            raise StageFailed(f"evaluate[fold {fold_index}]", exc) from exc
    emit_report([report], art / "report")
    return [report]


def run_pipeline(cfg: RunConfig, force: bool = False) -> list[MetricsReport]:
    """Execute every stage per the config; cached stages are skipped unless
    forced or invalidated."""
    try:
        dataset_path = stage_ingest(cfg, force)
    except Exception as exc:
        raise StageFailed("ingest", exc) from exc
    dataset = load_dataset(dataset_path)
    return run_pipeline_on_dataset(dataset, cfg, force, dataset_path=dataset_path)


def inspect(path: str | Path) -> str:
    """One human-readable line describing a pipeline artifact."""
    path = Path(path)
    if not path.exists():
        raise UnknownArtifact(f"{path}: no such artifact")
    if path.is_dir():
        n_md = len(list(path.glob("*.md")))
        if n_md:
            return f"profile directory: {n_md} profile documents"
        raise UnknownArtifact(f"{path}: directory is not a known artifact")
    head = path.open("rb").read(64)
    if head[:4] == b"EMBS":
        from .embed import store_header

        version, dim, count = store_header(path)
        return f"EMBS v{version}, dim {dim}, {count} vectors"
    if head[:4] == b"GATC":
        params, config = gatrec.load_checkpoint(path)
        return (f"GATC v1, layers={config.layers} heads={config.heads} "
                f"hidden={config.hidden_dim} input={config.input_dim}, "
                f"{params.n_parameters()} parameters")
    text_head = head.decode("utf-8", errors="replace")
    if text_head.startswith("user_id\tstrategy"):
        recs = read_recs(path)
        n_rows = sum(len(v) for v in recs.values())
        return f"recommendations TSV: {len(recs)} users, {n_rows} rows"
    if text_head.startswith("fold,slice,strategy"):
        from .evalrec import parse_report_csv

        rows = parse_report_csv(path)
        return f"metrics report CSV: {len(rows)} rows"
    if text_head.lstrip().startswith("{"):
        try:
            ds = load_dataset(path)
            return (f"dataset: {len(ds.ratings)} ratings, {len(ds.user_ids)} users, "
                    f"{len(ds.item_ids)} items, catalog {len(ds.catalog)}")
        except Exception:
            pass
    raise UnknownArtifact(f"{path}: unrecognized artifact format")
