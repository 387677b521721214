"""Figure emission for evaluation reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def read_car_pairs_csv(csv_path: str | Path) -> tuple[list[float], list[float]]:
    gt, pred = [], []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "gt_depth_m" not in reader.fieldnames:
            raise ValueError(f"{csv_path}: not a per-car depth CSV")
        for row in reader:
            gt.append(float(row["gt_depth_m"]))
            pred.append(float(row["pred_depth_m"]))
    if not gt:
        raise ValueError(f"{csv_path}: no data rows")
    return gt, pred


def emit_scatter(csv_path: str | Path, out_path: str | Path) -> Path:
    """Ground-truth vs predicted depth per car, with the identity line."""
    gt, pred = read_car_pairs_csv(csv_path)
    top = max(max(gt), max(pred)) * 1.05

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, top], [0, top], color="gray", linewidth=1, zorder=1,
            label="perfect prediction")
    ax.scatter(gt, pred, s=12, alpha=0.6, zorder=2)
    ax.set_xlim(0, top)
    ax.set_ylim(0, top)
    ax.set_xlabel("ground-truth depth [m]")
    ax.set_ylabel("predicted depth [m]")
    ax.set_title(f"per-car depth ({len(gt)} instances)")
    ax.legend(loc="upper left")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
