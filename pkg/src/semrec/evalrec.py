"""Ranking metrics at k, per-fold evaluation with cold-start slicing,
cross-fold aggregation, and report emission (CSV + Markdown + figures).

Relevance is binary: a test rating of 4 or 5 makes the item relevant for its
user, mirroring the train-side edge polarity. AP normalizes by min(k, number
of relevant items) so every metric stays within [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import BipartiteGraph
from .ingest import Dataset, FoldSplit, RatingRecord

SLICE_ALL = "all"
SLICE_COLD = "cold_start"


class EvalError(Exception):
    pass


class EmptyRelevant(EvalError):
    pass


class IoError(EvalError):
    pass


def relevance_sets(test: Iterable[RatingRecord]) -> dict[int, set[int]]:
    """Per-user relevant items: test ratings of 4-5."""
    rel: dict[int, set[int]] = {}
    for r in test:
        if r.rating >= 4:
            rel.setdefault(r.user_id, set()).add(r.item_id)
    return rel


def metrics_at_k(ranking: Sequence[int], relevant: set[int], k: int,
                 ) -> tuple[float, float, float, float]:
    """(precision, recall, ndcg, average precision) of one ranking at k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise EmptyRelevant("relevance set is empty")
    top = list(ranking[:k])
    hits = sum(1 for item in top if item in relevant)
    precision = hits / k
    recall = hits / len(relevant)

    dcg = 0.0
    running_hits = 0
    ap_sum = 0.0
    for rank, item in enumerate(top, start=1):
        if item in relevant:
            running_hits += 1
            dcg += 1.0 / math.log2(rank + 1)
            ap_sum += running_hits / rank
    ideal = min(k, len(relevant))
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, ideal + 1))
    ndcg = dcg / idcg if idcg > 0 else 0.0
    ap = ap_sum / ideal
    return precision, recall, ndcg, ap


@dataclass
class SliceMetrics:
    precision: float
    recall: float
    ndcg: float
    map: float
    n_users: int


@dataclass
class FoldEval:
    fold_index: int
    slices: dict[str, SliceMetrics] = field(default_factory=dict)


@dataclass
class MetricsReport:
    k: int
    strategy: str
    folds: list[FoldEval] = field(default_factory=list)

    def aggregate(self) -> dict[str, dict[str, tuple[float, float]]]:
        """Per slice, per metric: (mean, sample std) across folds that have
        the slice."""
        out: dict[str, dict[str, tuple[float, float]]] = {}
        for slice_name in (SLICE_ALL, SLICE_COLD):
            values: dict[str, list[float]] = {m: [] for m in ("precision", "recall", "ndcg", "map")}
            for fold in self.folds:
                sm = fold.slices.get(slice_name)
                if sm is None:
                    continue
                for m in values:
                    values[m].append(getattr(sm, m))
            if not values["precision"]:
                continue
            out[slice_name] = {
                m: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
                for m, v in values.items()
            }
        return out


def evaluate_run(rankings: dict[int, Sequence[int]], relevance: dict[int, set[int]],
                 k: int, cold_start_users: set[int] | None = None,
                 fold_index: int = 0) -> FoldEval:
    """Average metrics over eligible users (those with a ranking and at least
    one relevant test item); the cold slice is reported only when it has
    eligible users."""
    cold_start_users = cold_start_users or set()
    eligible = sorted(u for u in rankings if relevance.get(u))
    fold = FoldEval(fold_index=fold_index)

    def slice_of(users: list[int]) -> SliceMetrics | None:
        if not users:
            return None
        rows = [metrics_at_k(rankings[u], relevance[u], k) for u in users]
        arr = np.asarray(rows)
        return SliceMetrics(
            precision=float(arr[:, 0].mean()),
            recall=float(arr[:, 1].mean()),
            ndcg=float(arr[:, 2].mean()),
            map=float(arr[:, 3].mean()),
            n_users=len(users),
        )

    all_slice = slice_of(eligible)
    if all_slice is not None:
        fold.slices[SLICE_ALL] = all_slice
    cold_slice = slice_of([u for u in eligible if u in cold_start_users])
    if cold_slice is not None:
        fold.slices[SLICE_COLD] = cold_slice
    return fold


def popularity_ranking(graph: BipartiteGraph, user: int) -> list[int]:
    """Items by descending train positive count (ties to the lower index),
    excluding the user's train positives; dense item indices."""
    counts = np.asarray([len(a) for a in graph.pos_adj_item])
    order = np.lexsort((np.arange(graph.n_items), -counts))
    exclude = set(graph.pos_adj_user[user])
    return [int(i) for i in order if int(i) not in exclude]


def cross_validate(dataset: Dataset, run_config) -> list[MetricsReport]:
    """Run the full pipeline on every fold and aggregate; delegates to the
    pipeline orchestrator (imported lazily to keep module layering acyclic)."""
    from . import pipeline

    return pipeline.run_pipeline_on_dataset(dataset, run_config)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def emit_report(reports: list[MetricsReport] | MetricsReport, out_dir: str | Path,
                figures: bool = True) -> list[Path]:
    """Write report.csv (one row per fold x slice x strategy), report.md
    (Table-style mean +/- std summary), and one PNG figure per slice."""
    if isinstance(reports, MetricsReport):
        reports = [reports]
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []

        csv_path = out_dir / "report.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fold", "slice", "strategy", "k",
                             "precision", "recall", "ndcg", "map", "n_users"])
            for report in reports:
                for fold in report.folds:
                    for slice_name in (SLICE_ALL, SLICE_COLD):
                        sm = fold.slices.get(slice_name)
                        if sm is None:
                            continue
                        writer.writerow([fold.fold_index, slice_name, report.strategy,
                                         report.k, _fmt(sm.precision), _fmt(sm.recall),
                                         _fmt(sm.ndcg), _fmt(sm.map), sm.n_users])
        written.append(csv_path)

        md_path = out_dir / "report.md"
        lines = ["# Evaluation summary", ""]
        for report in reports:
            agg = report.aggregate()
            lines.append(f"## Strategy `{report.strategy}` (k={report.k}, "
                         f"{len(report.folds)} folds)")
            lines.append("")
            lines.append("| Slice | Precision | Recall | NDCG | MAP |")
            lines.append("|---|---|---|---|---|")
            for slice_name in (SLICE_ALL, SLICE_COLD):
                if slice_name not in agg:
                    if slice_name == SLICE_COLD:
                        lines.append(f"| {slice_name} | (no eligible users) | | | |")
                    continue
                row = agg[slice_name]
                cells = " | ".join(
                    f"{row[m][0]:.3f} ± {row[m][1]:.3f}"
                    for m in ("precision", "recall", "ndcg", "map"))
                lines.append(f"| {slice_name} | {cells} |")
            lines.append("")
        md_path.write_text("\n".join(lines), encoding="utf-8")
        written.append(md_path)

        if figures:
            from .figures import render_metric_figures

            written.extend(render_metric_figures(reports, out_dir))
        return written
    except OSError as exc:
        raise IoError(f"cannot write report to {out_dir}: {exc}") from exc


def parse_report_csv(path: str | Path) -> list[dict]:
    with Path(path).open("r", encoding="utf-8") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def build_fold_relevance(fold: FoldSplit) -> dict[int, set[int]]:
    return relevance_sets(fold.test)
