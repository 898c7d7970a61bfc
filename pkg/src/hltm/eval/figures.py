"""PNG figures for benchmark reports (headless matplotlib)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

QUALITY = ("token_f1", "bleu1", "f1")


def _quality_figure(report: dict, path: Path) -> None:
    systems = list(report["systems"])
    kinds = sorted({k for s in systems for k in report["systems"][s]["by_kind"]})
    fig, axes = plt.subplots(1, len(kinds), figsize=(4.5 * len(kinds), 3.6), squeeze=False)
    width = 0.8 / max(1, len(systems))
    for ax, kind in zip(axes[0], kinds):
        for i, s in enumerate(systems):
            stats = report["systems"][s]["by_kind"].get(kind)
            if stats is None:
                continue
            xs = [j + i * width for j in range(len(QUALITY))]
            means = [stats[m]["mean"] for m in QUALITY]
            ses = [stats[m]["se"] for m in QUALITY]
            ax.bar(xs, [math.nan if v is None else v for v in means], width,
                   yerr=[math.nan if v is None else v for v in ses], capsize=3, label=s)
        ax.set_xticks([j + width * (len(systems) - 1) / 2 for j in range(len(QUALITY))])
        ax.set_xticklabels(QUALITY)
        ax.set_ylim(0, 1.05)
        ax.set_title(f"{kind} queries")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _latency_figure(report: dict, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for s, sub in report["systems"].items():
        lat = [r["latency_ms"] for r in sub["records"]]
        if lat:
            ax.hist(lat, bins=30, alpha=0.6, label=s)
    ax.set_xlabel("latency per query (ms)")
    ax.set_ylabel("queries")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _cost_leakage_figure(report: dict, path: Path) -> None:
    systems = list(report["systems"])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.6))
    calls = [report["systems"][s]["overall"]["llm_calls"] for s in systems]
    ax1.bar(systems, [c["mean"] for c in calls], yerr=[c["se"] for c in calls], capsize=3)
    ax1.set_ylabel("LLM calls per query")
    xs = range(len(systems))
    qw = [report["systems"][s]["leakage"]["query_wise"] for s in systems]
    ew = [report["systems"][s]["leakage"]["entity_wise"] for s in systems]
    ax2.bar([x - 0.2 for x in xs], qw, 0.4, label="query-wise")
    ax2.bar([x + 0.2 for x in xs], ew, 0.4, label="entity-wise")
    ax2.set_xticks(list(xs))
    ax2.set_xticklabels(systems)
    ax2.set_ylim(0, 1.05)
    ax2.set_ylabel("leakage")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_figures(report: dict, out_dir, stem: str) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {"fig_quality": out_dir / f"{stem}_quality.png",
             "fig_latency": out_dir / f"{stem}_latency.png",
             "fig_cost_leakage": out_dir / f"{stem}_cost_leakage.png"}
    _quality_figure(report, paths["fig_quality"])
    _latency_figure(report, paths["fig_latency"])
    _cost_leakage_figure(report, paths["fig_cost_leakage"])
    return paths
