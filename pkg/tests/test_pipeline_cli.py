import json
from pathlib import Path

import numpy as np
import pytest

from semrec import cli, pipeline
from semrec.evalrec import SLICE_ALL
from semrec.gateway import ProviderConfig
from semrec.ingest import load_dataset
from semrec.pipeline import RunConfig, StageFailed, UnknownArtifact, inspect, load_run_config, run_pipeline
from semrec.synthetic import clustered_dataset, write_fixtures, write_ratings_file


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    ds = clustered_dataset(n_users=40, n_items=60, n_ratings=1400, n_clusters=4, seed=3)
    write_ratings_file(ds, root / "u.data", "tab100k")
    write_fixtures(ds, root / "fixtures")
    return root


def smoke_config(data_root: Path, artifacts: Path, strategy="relevancy", seed=1) -> RunConfig:
    cfg = RunConfig(
        ratings_path=str(data_root / "u.data"),
        ratings_format="tab100k",
        fixtures_dir=str(data_root / "fixtures"),
        provider=ProviderConfig(kind="mock"),
        strategy=strategy,
        pool_prompt=8,
        pool_batch=10,
        k=5,
        n_folds=5,
        fold="0",
        cold_start_fraction=0.1,
        seed=seed,
        artifacts_dir=str(artifacts),
    )
    cfg.gat.max_epochs = 6
    cfg.gat.patience = 3
    cfg.gat.batch_size = 512
    return cfg


def config_ini(data_root: Path, artifacts: Path, path: Path, strategy="relevancy") -> Path:
    path.write_text(f"""
[data]
ratings = {data_root / 'u.data'}
format = 100k
fixtures = {data_root / 'fixtures'}

[provider]
kind = mock

[embedder]
kind = mock

[gat]
max_epochs = 6
patience = 3
batch_size = 512

[rerank]
strategy = {strategy}
pool_prompt = 8
pool_batch = 10

[eval]
k = 5
folds = 5
fold = 0

[run]
seed = 1
artifacts_dir = {artifacts}
""", encoding="utf-8")
    return path


class TestRunPipeline:
    def test_smoke_completes_and_emits(self, small_data, tmp_path):
        cfg = smoke_config(small_data, tmp_path / "art")
        reports = run_pipeline(cfg)
        assert len(reports) == 1
        report = reports[0]
        assert report.folds and SLICE_ALL in report.folds[0].slices
        art = tmp_path / "art"
        assert (art / "dataset.json").exists()
        assert (art / "fold0" / "recs.tsv").exists()
        assert (art / "report" / "report.csv").exists()
        assert (art / "report" / "report.md").exists()
        assert (art / "report" / "metrics_all.png").exists()
        recs = pipeline.read_recs(art / "fold0" / "recs.tsv")
        assert recs
        for user, items in recs.items():
            assert len(items) == len(set(items))

    def test_second_run_skips_via_cache(self, small_data, tmp_path):
        cfg = smoke_config(small_data, tmp_path / "art")
        run_pipeline(cfg)
        ckpt = tmp_path / "art" / "fold0" / "gat.ckpt"
        before = ckpt.stat().st_mtime_ns
        run_pipeline(cfg)
        assert ckpt.stat().st_mtime_ns == before

    def test_corrupt_checkpoint_triggers_retrain(self, small_data, tmp_path):
        cfg = smoke_config(small_data, tmp_path / "art")
        run_pipeline(cfg)
        ckpt = tmp_path / "art" / "fold0" / "gat.ckpt"
        good = ckpt.read_bytes()
        ckpt.write_bytes(good[:100] + b"corruption" + good[110:])
        run_pipeline(cfg)
        assert ckpt.read_bytes() == good

    def test_force_recomputes(self, small_data, tmp_path):
        cfg = smoke_config(small_data, tmp_path / "art")
        run_pipeline(cfg)
        ckpt = tmp_path / "art" / "fold0" / "gat.ckpt"
        before = ckpt.stat().st_mtime_ns
        run_pipeline(cfg, force=True)
        assert ckpt.stat().st_mtime_ns > before

    def test_determinism_byte_identical(self, small_data, tmp_path):
        cfg_a = smoke_config(small_data, tmp_path / "a")
        cfg_b = smoke_config(small_data, tmp_path / "b")
        run_pipeline(cfg_a)
        run_pipeline(cfg_b)
        for rel in ("fold0/recs.tsv", "report/report.csv", "report/report.md",
                    "report/metrics_all.png"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_missing_ratings_fails_as_ingest(self, tmp_path):
        cfg = smoke_config(tmp_path, tmp_path / "art")
        with pytest.raises(StageFailed) as err:
            run_pipeline(cfg)
        assert err.value.stage == "ingest"


class TestStrategiesThroughPipeline:
    @pytest.mark.parametrize("strategy", ["none", "prompt", "bst", "batch"])
    def test_each_strategy_emits_full_rankings(self, small_data, tmp_path, strategy):
        cfg = smoke_config(small_data, tmp_path / strategy, strategy=strategy)
        reports = run_pipeline(cfg)
        recs = pipeline.read_recs(tmp_path / strategy / "fold0" / "recs.tsv")
        assert recs
        assert reports[0].strategy == strategy


class TestConfigParsing:
    def test_ini_round_trip(self, small_data, tmp_path):
        ini = config_ini(small_data, tmp_path / "art", tmp_path / "run.cfg")
        cfg = load_run_config(ini)
        assert cfg.strategy == "relevancy"
        assert cfg.gat.max_epochs == 6
        assert cfg.pool_batch == 10
        assert cfg.k == 5
        assert cfg.seed == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(pipeline.PipelineError):
            load_run_config(tmp_path / "nope.cfg")

    def test_stage_seeds_derive_from_global(self):
        cfg = RunConfig(seed=40)
        assert cfg.stage_seed("ingest") == 40
        assert cfg.stage_seed("profile") == 41
        assert cfg.stage_seed("evaluate") == 45

    def test_bad_strategy_rejected(self):
        with pytest.raises(ValueError):
            RunConfig(strategy="nonsense")


class TestInspect:
    def test_artifacts(self, small_data, tmp_path):
        cfg = smoke_config(small_data, tmp_path / "art")
        run_pipeline(cfg)
        art = tmp_path / "art"
        assert "vectors" in inspect(art / "fold0" / "embeddings.embs")
        assert "parameters" in inspect(art / "fold0" / "gat.ckpt")
        assert "users" in inspect(art / "fold0" / "recs.tsv")
        assert "ratings" in inspect(art / "dataset.json")
        assert "profile" in inspect(art / "fold0" / "profiles")
        assert "rows" in inspect(art / "report" / "report.csv")

    def test_unknown(self, tmp_path):
        junk = tmp_path / "junk.bin"
        junk.write_bytes(b"\x00\x01\x02\x03 garbage")
        with pytest.raises(UnknownArtifact):
            inspect(junk)
        with pytest.raises(UnknownArtifact):
            inspect(tmp_path / "missing.bin")


class TestCli:
    def test_stagewise_commands(self, small_data, tmp_path, capsys):
        out = tmp_path
        assert cli.main(["ingest", "--ratings", str(small_data / "u.data"),
                         "--format", "100k", "--fixtures", str(small_data / "fixtures"),
                         "--out", str(out / "ds.json")]) == 0
        assert cli.main(["profile", "--dataset", str(out / "ds.json"),
                         "--provider", "mock", "--out", str(out / "profiles"),
                         "--fold", "0"]) == 0
        assert cli.main(["embed", "--profiles", str(out / "profiles"),
                         "--embedder", "mock", "--out", str(out / "vec.embs")]) == 0
        assert cli.main(["train", "--dataset", str(out / "ds.json"), "--fold", "0",
                         "--store", str(out / "vec.embs"),
                         "--out", str(out / "gat.ckpt")]) == 0
        assert cli.main(["rerank", "--dataset", str(out / "ds.json"), "--fold", "0",
                         "--checkpoint", str(out / "gat.ckpt"),
                         "--store", str(out / "vec.embs"),
                         "--profiles", str(out / "profiles"),
                         "--strategy", "bst", "--w", "0.8", "--provider", "mock",
                         "--out", str(out / "recs.tsv")]) == 0
        assert cli.main(["evaluate", "--recs", str(out / "recs.tsv"),
                         "--dataset", str(out / "ds.json"), "--fold", "0",
                         "--k", "5", "--out", str(out / "report")]) == 0
        captured = capsys.readouterr().out
        assert "all:" in captured
        assert (out / "report" / "report.csv").exists()

    def test_run_and_inspect_commands(self, small_data, tmp_path, capsys):
        ini = config_ini(small_data, tmp_path / "art", tmp_path / "run.cfg", strategy="prompt")
        assert cli.main(["run", "--config", str(ini)]) == 0
        captured = capsys.readouterr().out
        assert "[prompt] all:" in captured
        assert cli.main(["inspect", str(tmp_path / "art" / "fold0" / "gat.ckpt")]) == 0

    def test_error_exit_code(self, tmp_path, capsys):
        assert cli.main(["inspect", str(tmp_path / "missing")]) == 1
        assert "error:" in capsys.readouterr().err


class TestRecsFormat:
    def test_explanation_escaping_roundtrip(self, tmp_path):
        from semrec.pipeline import _escape_text

        nasty = "line one\nline\ttwo \\ end"
        escaped = _escape_text(nasty)
        assert "\n" not in escaped and "\t" not in escaped
        assert escaped.replace("\\\\", "\0").replace("\\n", "\n").replace(
            "\\t", "\t").replace("\0", "\\") == nasty

    def test_recs_schema(self, small_data, tmp_path):
        cfg = smoke_config(small_data, tmp_path / "art", strategy="prompt")
        run_pipeline(cfg)
        lines = (tmp_path / "art" / "fold0" / "recs.tsv").read_text().splitlines()
        header = lines[0].split("\t")
        assert header == ["user_id", "strategy", "rank", "item_id", "fused_score",
                          "llm_score", "gat_score", "fallback_used", "explanation"]
        row = lines[1].split("\t")
        assert len(row) == 9
        assert row[1] == "prompt"
        assert row[7] in ("0", "1")
        float(row[4]); float(row[6])
