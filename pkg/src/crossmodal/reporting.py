"""Report writers: JSON payloads, aligned text tables, CSV, and figures.

Every report path gets the same content four ways so it can be diffed,
parsed, pasted, or glanced at. Figures render with the Agg backend and
never require a display.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .evaluation import RECALL_LEVELS  # noqa: E402

METRIC_COLUMNS = [f"R@{k}" for k in RECALL_LEVELS] + ["MdR", "MnR"]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def format_metrics_table(rows: dict[str, dict[str, float]],
                         stds: dict[str, dict[str, float]] | None = None) -> str:
    """Aligned text table; one row per direction/label, one column per metric."""
    label_w = max(len("direction"), max(len(k) for k in rows))
    header = "direction".ljust(label_w) + "".join(f"{c:>14}" for c in METRIC_COLUMNS)
    lines = [header]
    for label, metrics in rows.items():
        cells = []
        for col in METRIC_COLUMNS:
            if stds is not None:
                cells.append(f"{metrics[col]:7.2f}±{stds[label][col]:<5.2f}")
            else:
                cells.append(f"{metrics[col]:14.2f}")
        lines.append(label.ljust(label_w) + "".join(f"{c:>14}" for c in cells))
    return "\n".join(lines) + "\n"


def _write_metrics_csv(path: Path, rows: dict[str, dict[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["direction"] + METRIC_COLUMNS)
        for label, metrics in rows.items():
            writer.writerow([label] + [f"{metrics[c]:.6g}" for c in METRIC_COLUMNS])


def _recall_figure(path: Path, rows: dict[str, dict[str, float]]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(RECALL_LEVELS))
    width = 0.8 / max(len(rows), 1)
    for i, (label, metrics) in enumerate(rows.items()):
        vals = [metrics[f"R@{k}"] for k in RECALL_LEVELS]
        ax.bar(x + i * width, vals, width, label=label)
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels([f"R@{k}" for k in RECALL_LEVELS])
    ax.set_ylabel("recall (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _rank_figure(path: Path, ranks: dict[str, np.ndarray]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    top = max(int(np.max(r)) for r in ranks.values())
    bins = np.arange(1, top + 2) - 0.5
    for label, r in ranks.items():
        ax.hist(r, bins=bins, alpha=0.6, label=label)
    ax.set_xlabel("rank of true item")
    ax.set_ylabel("queries")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_report(out_dir: str | Path, report: dict[str, dict[str, float]],
                      meta: dict, ranks: dict[str, np.ndarray] | None = None) -> dict:
    """Emit report.{json,txt,csv} and figures for one evaluation."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"metrics": report, "meta": meta}
    _write_json(out_dir / "report.json", payload)
    (out_dir / "report.txt").write_text(format_metrics_table(report))
    _write_metrics_csv(out_dir / "report.csv", report)
    paths = {
        "json": out_dir / "report.json",
        "txt": out_dir / "report.txt",
        "csv": out_dir / "report.csv",
        "recall_png": out_dir / "recall.png",
    }
    _recall_figure(paths["recall_png"], report)
    if ranks:
        paths["ranks_png"] = out_dir / "ranks.png"
        _rank_figure(paths["ranks_png"], ranks)
    return paths


def write_aggregate_report(out_dir: str | Path,
                           per_seed: dict[int, dict[str, dict[str, float]]],
                           meta: dict) -> dict:
    """Mean/std over seeds, flattened per direction, plus per-seed payloads."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    directions = list(next(iter(per_seed.values())))
    means: dict[str, dict[str, float]] = {}
    stds: dict[str, dict[str, float]] = {}
    for d in directions:
        runs = [per_seed[s][d] for s in per_seed]
        means[d] = {c: float(np.mean([r[c] for r in runs])) for c in METRIC_COLUMNS}
        stds[d] = {c: float(np.std([r[c] for r in runs])) for c in METRIC_COLUMNS}
    payload = {
        "per_seed": {str(s): per_seed[s] for s in per_seed},
        "mean": means,
        "std": stds,
        "meta": meta,
    }
    _write_json(out_dir / "aggregate.json", payload)
    (out_dir / "aggregate.txt").write_text(format_metrics_table(means, stds))
    _write_metrics_csv(out_dir / "aggregate.csv", means)
    return {
        "json": out_dir / "aggregate.json",
        "txt": out_dir / "aggregate.txt",
        "csv": out_dir / "aggregate.csv",
    }


def write_train_report(out_dir: str | Path, traces: dict[int, list[dict]],
                       val_traces: dict[int, list[dict]], meta: dict) -> dict:
    """Loss trace JSON/CSV plus a loss-curve figure, one series per seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "traces": {str(s): t for s, t in traces.items()},
        "val_traces": {str(s): t for s, t in val_traces.items()},
        "meta": meta,
    }
    _write_json(out_dir / "train_trace.json", payload)
    with open(out_dir / "train_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "step", "loss", "lr"])
        for seed, trace in traces.items():
            for row in trace:
                writer.writerow([seed, row["step"], f"{row['loss']:.9g}",
                                 f"{row['lr']:.9g}"])
    fig, ax = plt.subplots(figsize=(6, 4))
    for seed, trace in traces.items():
        ax.plot([r["step"] for r in trace], [r["loss"] for r in trace],
                label=f"seed {seed}", linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("ranking loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "loss.png", dpi=120)
    plt.close(fig)
    return {
        "json": out_dir / "train_trace.json",
        "csv": out_dir / "train_trace.csv",
        "loss_png": out_dir / "loss.png",
    }
