"""Evaluation report rendering: JSON, delimited summary, and figures.

The report path writes three artifacts next to each other: the metrics as
JSON (machine-readable, round-trippable), a one-row CSV summary, and PNG
figures (bird's-eye-view trajectories and the recall sweep curve).
"""

from __future__ import annotations

import csv
import io
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .dataio import atomic_write_text
from .metrics import MotReport

_CSV_FIELDS = ("mota", "motp", "recall", "precision", "id_switches",
               "false_positives", "misses", "amota", "amotp",
               "gt_count", "true_positives")


def report_json(report: MotReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def load_report(path) -> MotReport:
    with open(path, "r", encoding="utf-8") as fh:
        return MotReport.from_dict(json.load(fh))


def report_csv(report: MotReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerow({k: report.to_dict()[k] for k in _CSV_FIELDS})
    return buf.getvalue()


def _figure_bev(gt_sequences, track_sequences, path):
    fig, ax = plt.subplots(figsize=(7, 7))
    seen_gt = False
    for frames in gt_sequences:
        trails = {}
        for f in frames:
            for g in f.gts:
                trails.setdefault(g.label, []).append((g.box.cx, g.box.cy))
        for pts in trails.values():
            xs, ys = zip(*pts)
            ax.plot(xs, ys, color="0.7", linewidth=3.0, zorder=1,
                    label=None if seen_gt else "ground truth")
            seen_gt = True
    cmap = plt.get_cmap("tab20")
    for frames in track_sequences:
        trails = {}
        for f in frames:
            for t in f.tracks:
                trails.setdefault(t.label, []).append((t.box.cx, t.box.cy))
        for label in sorted(trails):
            xs, ys = zip(*trails[label])
            ax.plot(xs, ys, color=cmap(label % 20), linewidth=1.0, zorder=2)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("Bird's-eye-view trajectories")
    ax.set_aspect("equal")
    if seen_gt:
        ax.legend(loc="upper right")
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def _figure_sweep(sweep, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    if sweep:
        ax.plot([row["recall"] for row in sweep],
                [row["motar"] for row in sweep],
                marker="o", markersize=3)
    ax.set_xlabel("recall")
    ax.set_ylabel("recall-normalized accuracy")
    ax.set_title("Score-threshold sweep")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def write_report(out_path, report: MotReport, sweep=None,
                 gt_sequences=None, track_sequences=None, figures=True) -> list:
    """Write the JSON report plus CSV and figures alongside it.

    Returns the list of written paths. ``out_path`` names the JSON file;
    the CSV and PNGs take its stem.
    """
    out_path = str(out_path)
    stem, _ = os.path.splitext(out_path)
    written = []
    atomic_write_text(out_path, report_json(report))
    written.append(out_path)
    csv_path = stem + ".csv"
    atomic_write_text(csv_path, report_csv(report))
    written.append(csv_path)
    if figures:
        if gt_sequences is not None and track_sequences is not None:
            bev_path = stem + "_bev.png"
            _figure_bev(gt_sequences, track_sequences, bev_path)
            written.append(bev_path)
        sweep_path = stem + "_sweep.png"
        _figure_sweep(sweep or [], sweep_path)
        written.append(sweep_path)
    return written
