"""Rendering of evaluation reports: per-image CSV and summary figures."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport

_CSV_COLUMNS = ["kind", "pred", "gt", "n_pred", "n_gt", "mean_matched_iou", "max_f", "mae"]


def write_csv(report: EvalReport, path: str) -> None:
    """One row per evaluated pair; blank cells where a metric does not apply."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
        writer.writeheader()
        for rec in report.per_image:
            row = {k: rec.get(k, "") for k in _CSV_COLUMNS}
            ious = rec.get("matched_ious")
            if ious:
                row["mean_matched_iou"] = round(sum(ious) / len(ious), 6)
            writer.writerow(row)


def render_figures(report: EvalReport, outdir: str) -> list[str]:
    """Write summary PNGs for whichever sections the report carries."""
    os.makedirs(outdir, exist_ok=True)
    written = []

    if report.ap_r:
        taus = sorted(report.ap_r)
        values = [report.ap_r[t] for t in taus]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(taus, values, marker="o")
        ax.set_xlabel("IoU threshold")
        ax.set_ylabel("AP$^r$")
        ax.set_ylim(0, 1.05)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(outdir, "ap_vs_iou.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    ious = [v for rec in report.per_image for v in rec.get("matched_ious", [])]
    if ious:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.hist(ious, bins=20, range=(0, 1), color="#4878a8", edgecolor="white")
        ax.set_xlabel("matched instance IoU")
        ax.set_ylabel("count")
        fig.tight_layout()
        path = os.path.join(outdir, "matched_iou_hist.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    sal = [rec for rec in report.per_image if rec.get("kind") == "saliency"]
    if sal:
        idx = range(len(sal))
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 4.5), sharex=True)
        ax1.bar(idx, [r["max_f"] for r in sal], color="#559955")
        ax1.set_ylabel("maxF")
        ax1.set_ylim(0, 1.05)
        ax2.bar(idx, [r["mae"] for r in sal], color="#aa5555")
        ax2.set_ylabel("MAE")
        ax2.set_xlabel("image index")
        fig.tight_layout()
        path = os.path.join(outdir, "saliency_per_image.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
