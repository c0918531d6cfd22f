"""Figures and tab-separated tables for evaluation and training runs."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import BINS, MetricsReport  # noqa: E402


def write_tsv(rows: Sequence[dict], path) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    keys = list(rows[0])
    lines = ["\t".join(keys)]
    for r in rows:
        lines.append("\t".join("" if r[k] is None else str(r[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def metric_rows(report: MetricsReport) -> list[dict]:
    rows = []
    for level in ("node", "edge"):
        for k in ("precision", "recall", "f1"):
            rows.append({"metric": f"{level}_{k}", "value": getattr(report, level)[k]})
    rows.append({"metric": "graph_accuracy", "value": report.graph_accuracy})
    rows.append({"metric": "count", "value": report.count})
    return rows


def plot_metrics(report: MetricsReport, path, title: str = "") -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    ax = axes[0]
    names = ("precision", "recall", "f1")
    x = range(len(names))
    w = 0.38
    ax.bar([i - w / 2 for i in x], [report.node[k] for k in names], w, label="node")
    ax.bar([i + w / 2 for i in x], [report.edge[k] for k in names], w, label="edge")
    ax.set_xticks(list(x))
    ax.set_xticklabels(["P", "R", "F1"])
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    ax.set_title("matching scores")

    ax = axes[1]
    present = [b for b in BINS if b in report.bins]
    if present:
        accs = [report.bins[b]["graph_accuracy"] for b in present]
        vals = [a if a is not None else report.bins[b]["node_f1"] for a, b in zip(accs, present)]
        ax.bar(present, vals, color="0.4")
        ax.set_ylabel("graph accuracy" if accs[0] is not None else "node F1")
        ax.set_xlabel("operations")
    elif report.graph_accuracy is not None:
        ax.bar(["all"], [report.graph_accuracy], color="0.4")
        ax.set_ylabel("graph accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("by edit count")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history: Sequence[dict], path) -> None:
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, [h["loss_node"] for h in history], label="node NLL")
    ax.plot(epochs, [h["loss_edge"] for h in history], label="edge NLL")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss per instance")
    ax2 = ax.twinx()
    ax2.plot(epochs, [h["dev_graph_accuracy"] for h in history], color="k", ls="--", label="dev accuracy")
    ax2.set_ylim(0, 1)
    ax2.set_ylabel("dev graph accuracy")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], frameon=False, loc="center right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_report(report: MetricsReport, out_dir, name: str = "eval") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{name}.json", out / f"{name}.tsv", out / f"{name}_bins.tsv", out / f"{name}.png"]
    paths[0].write_text(report.to_json() + "\n", encoding="utf-8")
    write_tsv(metric_rows(report), paths[1])
    write_tsv([{"bin": b, **report.bins[b]} for b in BINS if b in report.bins], paths[2])
    plot_metrics(report, paths[3], name)
    return paths


def write_training_report(history: Sequence[dict], out_dir, name: str = "train") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{name}.jsonl", out / f"{name}.tsv", out / f"{name}.png"]
    paths[0].write_text("".join(json.dumps(h, sort_keys=True) + "\n" for h in history), encoding="utf-8")
    write_tsv(history, paths[1])
    plot_history(history, paths[2])
    return paths
