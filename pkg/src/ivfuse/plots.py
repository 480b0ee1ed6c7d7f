"""Per-metric comparison charts and averaged tables.

Input is a mapping from method label to that method's per-pair reports; each
of the six metrics gets one chart with one series per method, plus a CSV and
a formatted text table of the per-method averages.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import EmptyReport
from .metrics import CSV_COLUMNS, MetricReport, aggregate

METRIC_NAMES = CSV_COLUMNS[1:]  # en, sd, sf, vif, qabf, mi


def emit_plots(
    reports: dict[str, list[tuple[str, MetricReport]]], out_dir: str | Path
) -> list[Path]:
    """Write one chart per metric plus the averaged table (CSV + text)."""
    if not reports or all(len(rows) == 0 for rows in reports.values()):
        raise EmptyReport("no reports to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written: list[Path] = []
    for metric in METRIC_NAMES:
        fig, ax = plt.subplots(figsize=(7, 4))
        for label, rows in reports.items():
            if not rows:
                continue
            xs = range(1, len(rows) + 1)
            ys = [rep.values()[metric] for _, rep in rows]
            ax.plot(xs, ys, marker="o", label=label)
        ax.set_xlabel("pair")
        ax.set_ylabel(metric.upper())
        ax.set_title(f"{metric.upper()} per pair")
        ax.legend()
        ax.grid(True, alpha=0.3)
        path = out_dir / f"{metric}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    means = {
        label: aggregate([rep for _, rep in rows])
        for label, rows in reports.items()
        if rows
    }
    csv_path = out_dir / "averages.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("method",) + METRIC_NAMES)
        for label, rep in means.items():
            writer.writerow([label] + [f"{rep.values()[m]:.6f}" for m in METRIC_NAMES])
    written.append(csv_path)

    txt_path = out_dir / "averages.txt"
    with open(txt_path, "w") as fh:
        header = f"{'method':<16}" + "".join(f"{m.upper():>10}" for m in METRIC_NAMES)
        fh.write(header + "\n")
        fh.write("-" * len(header) + "\n")
        for label, rep in means.items():
            fh.write(
                f"{label:<16}"
                + "".join(f"{rep.values()[m]:>10.4f}" for m in METRIC_NAMES)
                + "\n"
            )
    written.append(txt_path)
    return written
