"""Inference and the random-sampling evaluation protocol.

``fuse_directory`` turns an ``ir/`` + ``vis/`` tree into fused 8-bit images
with a JSON manifest. ``run_trials`` implements the repeated-trial protocol:
per trial, systematically sample a fixed number of pairs, fuse, score all six
metrics, average; the overall report is the mean of the per-trial means.
``evaluate_fused_directory`` scores externally produced fused images so other
methods can be compared with the same metric code.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from . import metrics
from .checkpoint import load_checkpoint
from .config import TrialSpec
from .dataio import ImagePair, denormalize_to_uint8, load_image_pair, sample_test_pairs
from .errors import DecodeError, InsufficientPairs
from .fusion_net import MultiScaleFusionNet
from .metrics import MetricReport, aggregate


def load_fusion_net(checkpoint_path: str | Path) -> MultiScaleFusionNet:
    net, _, _ = load_checkpoint(checkpoint_path)
    net.eval()
    return net


def fuse_pair(net: MultiScaleFusionNet, pair: ImagePair) -> np.ndarray:
    """Fuse one registered pair; returns the [0, 1] fused image."""
    net.eval()
    with torch.no_grad():
        ir = torch.from_numpy(pair.infrared.pixels).float()
        vis = torch.from_numpy(pair.visible.pixels).float()
        fused = net(ir, vis)
    return ((fused.squeeze(0).squeeze(0).numpy() + 1.0) * 0.5).clip(0.0, 1.0)


def fuse_directory(
    checkpoint_path: str | Path, input_dir: str | Path, output_dir: str | Path
) -> dict:
    """Fuse every matched pair under ``input_dir/{ir,vis}``; returns the manifest.

    Unmatched files are skipped and recorded. Inputs may be any size; the
    network is fully convolutional.
    """
    net = load_fusion_net(checkpoint_path)
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ir_dir, vis_dir = input_dir / "ir", input_dir / "vis"
    if not ir_dir.is_dir() or not vis_dir.is_dir():
        raise DecodeError(f"expected 'ir' and 'vis' subdirectories under {input_dir}")

    manifest = {
        "checkpoint": str(checkpoint_path),
        "input_dir": str(input_dir),
        "output_dir": str(output_dir),
        "pairs": [],
        "skipped": [],
    }
    start_all = time.perf_counter()
    for ir_path in sorted(ir_dir.iterdir()):
        vis_path = vis_dir / ir_path.name
        if not vis_path.exists():
            manifest["skipped"].append(
                {"ir": str(ir_path), "reason": "missing visible counterpart"}
            )
            continue
        t0 = time.perf_counter()
        pair = load_image_pair(ir_path, vis_path)
        fused = fuse_pair(net, pair)
        out_path = output_dir / ir_path.name
        cv2.imwrite(str(out_path), denormalize_to_uint8(fused, value_range="unit"))
        manifest["pairs"].append(
            {
                "id": pair.identifier,
                "ir": str(ir_path),
                "vis": str(vis_path),
                "output": str(out_path),
                "seconds": time.perf_counter() - t0,
            }
        )
    manifest["total_seconds"] = time.perf_counter() - start_all
    with open(output_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


@dataclass
class TrialTable:
    """Per-trial mean reports plus their overall mean."""

    trial_means: list[MetricReport] = field(default_factory=list)
    per_pair: list[list[tuple[str, MetricReport]]] = field(default_factory=list)
    overall: MetricReport | None = None


def run_trials(
    dataset: list[ImagePair],
    net: MultiScaleFusionNet,
    spec: TrialSpec | None = None,
    csv_path: str | Path | None = None,
) -> TrialTable:
    """Repeated systematic-sampling evaluation; deterministic in base_seed."""
    spec = spec or TrialSpec()
    if len(dataset) < spec.pairs_per_trial:
        raise InsufficientPairs(
            f"dataset has {len(dataset)} pairs, trials need {spec.pairs_per_trial}"
        )
    table = TrialTable()
    for trial in range(spec.n_trials):
        pairs = sample_test_pairs(
            dataset, n=spec.pairs_per_trial, trial_seed=spec.base_seed + trial
        )
        rows = []
        for pair in pairs:
            fused = fuse_pair(net, pair)
            report = metrics.evaluate(
                fused, pair.infrared.to_unit(), pair.visible.to_unit()
            )
            rows.append((pair.identifier, report))
        table.per_pair.append(rows)
        table.trial_means.append(aggregate([r for _, r in rows]))
    table.overall = aggregate(table.trial_means)

    if csv_path is not None:
        _write_trial_csv(csv_path, table)
    return table


def _write_trial_csv(path: str | Path, table: TrialTable) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(("trial",) + metrics.CSV_COLUMNS[1:])
        for i, rep in enumerate(table.trial_means):
            writer.writerow(
                [i] + [f"{rep.values()[c]:.6f}" for c in metrics.CSV_COLUMNS[1:]]
            )
        writer.writerow(
            ["overall"]
            + [f"{table.overall.values()[c]:.6f}" for c in metrics.CSV_COLUMNS[1:]]
        )


def evaluate_fused_directory(
    fused_dir: str | Path,
    ir_dir: str | Path,
    vis_dir: str | Path,
    csv_path: str | Path | None = None,
) -> list[tuple[str, MetricReport]]:
    """Score already-fused images (any method) against their source pairs."""
    fused_dir, ir_dir, vis_dir = Path(fused_dir), Path(ir_dir), Path(vis_dir)
    rows: list[tuple[str, MetricReport]] = []
    for fused_path in sorted(fused_dir.iterdir()):
        if fused_path.name == "manifest.json":
            continue
        ir_path = ir_dir / fused_path.name
        vis_path = vis_dir / fused_path.name
        if not ir_path.exists() or not vis_path.exists():
            continue
        fused = cv2.imread(str(fused_path), cv2.IMREAD_GRAYSCALE)
        if fused is None:
            raise DecodeError(f"cannot decode fused image {fused_path}")
        pair = load_image_pair(ir_path, vis_path)
        report = metrics.evaluate(
            fused.astype(np.float64) / 255.0,
            pair.infrared.to_unit(),
            pair.visible.to_unit(),
        )
        rows.append((fused_path.stem, report))
    if not rows:
        raise InsufficientPairs("no scoreable fused/ir/vis triples found")
    if csv_path is not None:
        metrics.write_report_csv(csv_path, rows)
    return rows
