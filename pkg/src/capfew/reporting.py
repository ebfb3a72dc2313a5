"""Report rendering: delimited tables for machines, figures for humans.

Every report path writes both: csv/jsonl alongside a matplotlib png.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _ensure(out_dir) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_train_history(history: list[dict], out_dir) -> list[Path]:
    out = _ensure(out_dir)
    log_path = out / "train_log.jsonl"
    with log_path.open("w") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    fig_path = out / "loss_curve.png"
    steps = [e["step"] for e in history]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(steps, [e["loss"] for e in history], color="tab:blue", lw=1)
    ax1.set_xlabel("training episode")
    ax1.set_ylabel("loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(steps, [e["running_acc"] for e in history], color="tab:orange", lw=1)
    ax2.set_ylabel("running accuracy", color="tab:orange")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [log_path, fig_path]


def write_eval_report(report, out_dir) -> list[Path]:
    out = _ensure(out_dir)
    paths = []

    json_path = out / "report.json"
    payload = {"results": report.results_dict(), "timing": {"wall_time_s": report.wall_time}}
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    paths.append(json_path)

    txt_path = out / "report.txt"
    lines = [
        f"{report.way}-way {report.shot}-shot, {report.episodes} episodes, "
        f"metric={report.metric}, fusion={report.fusion_mode}",
        f"accuracy: {report.mean_accuracy:.4f} +- {report.ci95:.4f} (95% ci)",
        f"wall time: {report.wall_time:.2f}s",
    ]
    txt_path.write_text("\n".join(lines) + "\n")
    paths.append(txt_path)

    csv_path = out / "confusion.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_slot"] + [f"pred_{j}" for j in range(report.way)])
        for i, row in enumerate(report.confusion):
            writer.writerow([i] + [int(x) for x in row])
    paths.append(csv_path)

    fig_path = out / "confusion.png"
    fig, ax = plt.subplots(figsize=(5, 4.2))
    total = report.confusion.sum(axis=1, keepdims=True)
    rates = report.confusion / np.maximum(total, 1)
    im = ax.imshow(rates, cmap="viridis", vmin=0, vmax=1)
    ax.set_xlabel("predicted slot")
    ax.set_ylabel("true slot")
    ax.set_title(f"accuracy {report.mean_accuracy:.3f} +- {report.ci95:.3f}")
    fig.colorbar(im, ax=ax, label="row rate")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    paths.append(fig_path)
    return paths


def write_sweep_report(result, out_dir) -> list[Path]:
    out = _ensure(out_dir)
    paths = []
    rows = result.rows

    csv_path = out / "sweep.csv"
    fields = ["axis", "value", "mean_accuracy", "ci95", "metric", "fusion_mode", "way"]
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    paths.append(csv_path)

    json_path = out / "sweep.json"
    json_path.write_text(json.dumps({"axis": result.axis, "rows": rows}, sort_keys=True, indent=2) + "\n")
    paths.append(json_path)

    txt_path = out / "sweep.txt"
    width = max(len(str(r["value"])) for r in rows)
    lines = [f"{result.axis:<{max(width, len(result.axis))}}  accuracy  ci95"]
    for r in rows:
        lines.append(
            f"{str(r['value']):<{max(width, len(result.axis))}}  "
            f"{r['mean_accuracy']:.4f}    {r['ci95']:.4f}"
        )
    txt_path.write_text("\n".join(lines) + "\n")
    paths.append(txt_path)

    fig_path = out / "sweep.png"
    fig, ax = plt.subplots(figsize=(6.5, 4))
    xs = np.arange(len(rows))
    accs = [r["mean_accuracy"] for r in rows]
    cis = [r["ci95"] for r in rows]
    numeric_axis = all(isinstance(r["value"], (int, float)) and not isinstance(r["value"], bool) for r in rows)
    if numeric_axis:
        xs = [r["value"] for r in rows]
        ax.errorbar(xs, accs, yerr=cis, marker="o", capsize=3)
    else:
        ax.bar(xs, accs, yerr=cis, capsize=3, color="tab:blue")
        ax.set_xticks(xs)
        ax.set_xticklabels([str(r["value"]) for r in rows], rotation=20, ha="right")
    ax.set_xlabel(result.axis)
    ax.set_ylabel("mean accuracy")
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    paths.append(fig_path)
    return paths
