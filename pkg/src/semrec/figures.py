"""Metric figures rendered next to the delimited report output.

One PNG per slice: grouped bars of the four metrics per strategy, mean
across folds with a sample-std error bar. Output bytes are deterministic
(fixed layout, no embedded software/date metadata) so repeated runs of the
same evaluation produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

_METRICS = ("precision", "recall", "ndcg", "map")


def render_metric_figures(reports, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    slices = []
    for report in reports:
        for name in report.aggregate():
            if name not in slices:
                slices.append(name)
    written = []
    for slice_name in slices:
        fig, ax = plt.subplots(figsize=(7.0, 4.0), dpi=120)
        width = 0.8 / max(1, len(reports))
        base = range(len(_METRICS))
        plotted = False
        for s, report in enumerate(reports):
            agg = report.aggregate().get(slice_name)
            if agg is None:
                continue
            means = [agg[m][0] for m in _METRICS]
            stds = [agg[m][1] for m in _METRICS]
            xs = [b + s * width for b in base]
            ax.bar(xs, means, width=width, yerr=stds, capsize=3,
                   label=report.strategy)
            plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_xticks([b + 0.4 - width / 2 for b in base])
        ax.set_xticklabels([m.upper() if m in ("ndcg", "map") else m.capitalize()
                            for m in _METRICS])
        ax.set_ylim(0.0, 1.0)
        ax.set_ylabel(f"mean over folds @k={reports[0].k}")
        ax.set_title(f"Ranking quality, {slice_name} slice")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"metrics_{slice_name}.png"
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written
