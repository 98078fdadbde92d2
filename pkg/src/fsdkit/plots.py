"""Figure rendering for benchmark and metrics reports.

Everything here writes image files; no interactive backend is ever needed,
so the Agg backend is forced before pyplot loads.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .bench import METHOD_ORDER, BenchmarkReport

_METRIC_KEYS = ("iou25", "iou50", "deg5cm5", "deg5cm10", "deg10cm5", "deg10cm10")


def save_bench_figure(report: BenchmarkReport, path) -> str:
    """Bar chart of per-method median times with min/max whiskers."""
    names = [n for n in METHOD_ORDER if n in report.methods]
    medians = [report.methods[n].median_s for n in names]
    lows = [report.methods[n].median_s - report.methods[n].min_s for n in names]
    highs = [report.methods[n].max_s - report.methods[n].median_s for n in names]

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    bars = ax.bar(names, medians, yerr=[lows, highs], capsize=4, color="#4878cf")
    ax.set_ylabel("wall time per run (s)")
    threads = report.environment.get("threads", "?")
    ax.set_title(f"surface extraction time ({threads} thread(s))")
    ax.bar_label(bars, fmt="%.4f", padding=2)
    speedup = report.speedups.get("dense_over_batched")
    if speedup is not None and len(names) == len(METHOD_ORDER):
        ax.text(0.98, 0.95, f"batched is {speedup:.1f}x faster than dense",
                transform=ax.transAxes, ha="right", va="top")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def save_metrics_figure(report: dict, path) -> str:
    """Bar chart of the AP suite (values in [0, 1])."""
    keys = [k for k in _METRIC_KEYS if k in report]
    if not keys:
        keys = [k for k, v in report.items() if isinstance(v, (int, float))]
    values = [float(report[k]) for k in keys]

    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    bars = ax.bar(keys, values, color="#6acc64")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("average precision")
    ax.set_title("detection and pose AP")
    ax.bar_label(bars, fmt="%.3f", padding=2)
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
