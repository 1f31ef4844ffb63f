"""Figures for workload reports, written straight to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .workload import WorkloadReport  # noqa: E402


def plot_latency(report: WorkloadReport, path: str | Path) -> Path:
    summary = report.summary()
    templates = sorted(summary)
    configs = report.config_names()
    width = 0.8 / max(1, len(configs))
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(templates) * max(1, len(configs)) / 2), 4))
    x = np.arange(len(templates))
    for i, c in enumerate(configs):
        vals = [summary[t].get(c, {}).get("trimmed_mean_ms", np.nan) for t in templates]
        ax.bar(x + i * width, vals, width, label=c)
    ax.set_xticks(x + width * (len(configs) - 1) / 2)
    ax.set_xticklabels(templates)
    ax.set_ylabel("trimmed-mean latency (ms)")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_q_error(report: WorkloadReport, path: str | Path) -> Path:
    configs = report.config_names()
    data = [[r["q_error"] for r in report.select(config=c)] for c in configs]
    fig, ax = plt.subplots(figsize=(max(5, 1.3 * len(configs)), 4))
    ax.boxplot(data, showfliers=True)
    ax.set_xticks(range(1, len(configs) + 1))
    ax.set_xticklabels(configs, rotation=20, ha="right", fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("Q-error")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_trajectory(trace: list[dict], path: str | Path, title: str = "") -> Path:
    idx = [t["query_index"] for t in trace]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.step(idx, [t["sample_size"] for t in trace], where="post", label="sample size")
    ax.set_xlabel("query")
    ax.set_ylabel("sample size (rows)")
    ax2 = ax.twinx()
    ax2.plot(idx, [t["q_error"] for t in trace], ".", ms=2, alpha=0.4, color="tab:red", label="Q-error")
    ax2.set_ylabel("Q-error")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
