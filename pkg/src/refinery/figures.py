"""Render bench report figures to PNG files next to the delimited output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _level_axis(rows: list[dict]) -> list[str]:
    return [str(r["level"]) for r in rows]


def _line_figure(rows, key, title, ylabel, out, logy=False, extra_line=None):
    xs = _level_axis(rows)
    ys = [r.get(key) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    pts = [(x, y) for x, y in zip(xs, ys) if y is not None]
    if pts:
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
    if extra_line is not None:
        ax.axhline(extra_line, color="gray", linestyle="--", linewidth=0.8)
    if logy and pts and all(p[1] > 0 for p in pts):
        ax.set_yscale("log")
    ax.set_xlabel("refinement level")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_report_figures(report, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = report.levels
    written = []
    written.append(_line_figure(
        rows, "rct", "Computation time vs base", "cumulative time ratio",
        out_dir / "rct.png", logy=True, extra_line=1.0))
    written.append(_line_figure(
        rows, "rnr", "Results shown vs base", "result count ratio",
        out_dir / "rnr.png", logy=True, extra_line=1.0))
    written.append(_line_figure(
        rows, "re_median", "Result error (median)", "relative error",
        out_dir / "result_error.png"))
    written.append(_line_figure(
        rows, "af", "Anomalous fraction", "fraction of results",
        out_dir / "anomalous.png"))
    written.append(_line_figure(
        rows, "rec", "Relative entropy change vs full resolution", "REC",
        out_dir / "rec.png"))
    written.append(_line_figure(
        rows, "sparsity", "Table sparsity", "rows / possible rows",
        out_dir / "sparsity.png", logy=True))

    # ranking variants side by side
    xs = _level_axis(rows)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    for key, label in (("spearman_ad", "deviance only"),
                       ("spearman_igp", "gain potential only"),
                       ("spearman_avg_rank", "average rank")):
        pts = [(x, r.get(key)) for x, r in zip(xs, rows) if r.get(key) is not None]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=label)
    ax.set_xlabel("refinement level")
    ax.set_ylabel("rank correlation with true importance")
    ax.set_title("Ranking effectiveness")
    ax.legend(fontsize=8)
    fig.tight_layout()
    ranking = out_dir / "ranking.png"
    fig.savefig(ranking, dpi=120)
    plt.close(fig)
    written.append(ranking)

    if report.speedup:
        xs = [str(r["level"]) for r in report.speedup]
        ys = [r["speedup"] for r in report.speedup]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.bar(xs, ys)
        ax.axhline(1.0, color="gray", linestyle="--", linewidth=0.8)
        ax.set_xlabel("refinement level")
        ax.set_ylabel("serial / parallel time")
        ax.set_title("Shard fan-out speedup")
        fig.tight_layout()
        speedup = out_dir / "speedup.png"
        fig.savefig(speedup, dpi=120)
        plt.close(fig)
        written.append(speedup)
    return written
