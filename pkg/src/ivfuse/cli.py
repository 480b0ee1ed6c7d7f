"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import TrialSpec, load_train_config
from .errors import ConfigError, DataError, IvfuseError, NumericError, OutOfRange


@click.group()
def cli():
    """Infrared/visible image fusion: training, inference, and evaluation."""


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML config file; fields can be overridden via IVFUSE_* env vars.")
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None,
              help="Directory with ir/ and vis/ subdirectories (overrides config).")
def train_cmd(config_path, data_dir):
    """Train the fusion network on sliding-window patches."""
    from .dataio import extract_patches, load_pair_directory
    from .errors import EmptyDataset
    from .training import train

    config = load_train_config(config_path)
    root = data_dir or config.data_dir
    if root is None:
        raise ConfigError("no data directory: set --data or data_dir in the config")
    pairs = load_pair_directory(root)
    if not pairs:
        raise EmptyDataset(f"no matched pairs under {root}")
    patches = extract_patches(pairs, config.patch_size, config.patch_stride)
    result = train(config, patches)
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"best:       {result.best_checkpoint_path}")
    click.echo(f"log:        {result.log_path}")


@cli.command("fuse")
@click.option("--ckpt", "checkpoint", type=click.Path(exists=True), required=True)
@click.option("--in", "input_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "output_dir", type=click.Path(), required=True)
def fuse_cmd(checkpoint, input_dir, output_dir):
    """Fuse every matched pair under INPUT_DIR/{ir,vis}."""
    from .evaluate import fuse_directory

    manifest = fuse_directory(checkpoint, input_dir, output_dir)
    click.echo(
        f"fused {len(manifest['pairs'])} pairs "
        f"({len(manifest['skipped'])} skipped) -> {output_dir}"
    )


@cli.command("mask")
@click.option("--in", "input_dir", type=click.Path(exists=True), required=True,
              help="Directory of infrared images.")
@click.option("--out", "output_dir", type=click.Path(), required=True)
@click.option("--method", type=click.Choice(["quantile", "otsu"]), default="quantile")
@click.option("--quantile", "q", type=float, default=0.75, show_default=True)
def mask_cmd(input_dir, output_dir, method, q):
    """Write salient-object masks (0/255 PNGs) for a directory of IR images."""
    import cv2
    import numpy as np

    from .dataio import load_image, normalize_uint8
    from .saliency import MaskParams, generate_mask

    in_dir, out_dir = Path(input_dir), Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for path in sorted(in_dir.iterdir()):
        if not path.is_file():
            continue
        mask = generate_mask(
            normalize_uint8(load_image(path)), method=method, params=MaskParams(quantile=q)
        )
        cv2.imwrite(
            str(out_dir / (path.stem + ".png")),
            (mask.mask * 255).astype(np.uint8),
        )
        count += 1
    click.echo(f"wrote {count} masks -> {out_dir}")


@cli.command("evaluate")
@click.option("--fused", type=click.Path(exists=True), required=True)
@click.option("--ir", type=click.Path(exists=True), required=True)
@click.option("--vis", type=click.Path(exists=True), required=True)
@click.option("--csv", "csv_path", type=click.Path(), required=True)
def evaluate_cmd(fused, ir, vis, csv_path):
    """Score fused images (from any method) against their source pairs."""
    from .evaluate import evaluate_fused_directory

    rows = evaluate_fused_directory(fused, ir, vis, csv_path=csv_path)
    click.echo(f"scored {len(rows)} images -> {csv_path}")


@cli.command("trials")
@click.option("--ckpt", "checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--n", "n_trials", type=int, default=5, show_default=True)
@click.option("--pairs", "pairs_per_trial", type=int, default=10, show_default=True)
@click.option("--seed", "base_seed", type=int, default=0, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def trials_cmd(checkpoint, data_dir, n_trials, pairs_per_trial, base_seed, csv_path):
    """Run the repeated random-sampling evaluation protocol."""
    from .dataio import load_pair_directory
    from .evaluate import load_fusion_net, run_trials

    net = load_fusion_net(checkpoint)
    dataset = load_pair_directory(data_dir)
    spec = TrialSpec(
        n_trials=n_trials, pairs_per_trial=pairs_per_trial, base_seed=base_seed
    )
    table = run_trials(dataset, net, spec, csv_path=csv_path)
    overall = table.overall.values()
    click.echo(
        "overall: " + "  ".join(f"{k}={v:.4f}" for k, v in overall.items())
    )


@cli.command("sweep")
@click.option("--alpha", "alphas", type=str, default="4,7,10,13,16", show_default=True)
@click.option("--gamma", "gammas", type=str, default="1.0,1.5,2.0,2.5,3.0", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--epochs", "sweep_epochs", type=int, default=10, show_default=True)
def sweep_cmd(alphas, gammas, config_path, data_dir, out_dir, sweep_epochs):
    """Train a model per (alpha, gamma) grid point with beta fixed at 1."""
    from .dataio import extract_patches, load_pair_directory
    from .training import sweep

    config = load_train_config(config_path)
    try:
        alpha_values = [float(v) for v in alphas.split(",") if v.strip()]
        gamma_values = [float(v) for v in gammas.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep grid: {exc}") from exc
    pairs = load_pair_directory(data_dir)
    patches = extract_patches(pairs, config.patch_size, config.patch_stride)
    cells = sweep(alpha_values, gamma_values, config, patches, out_dir,
                  sweep_epochs=sweep_epochs)
    click.echo(f"trained {len(cells)} grid cells -> {out_dir}")


@cli.command("plot")
@click.option("--csv", "csv_paths", type=click.Path(exists=True), multiple=True,
              required=True, help="Per-method report CSVs; label = file stem.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def plot_cmd(csv_paths, out_dir):
    """Emit per-metric comparison charts from report CSVs."""
    from .metrics import read_report_csv
    from .plots import emit_plots

    reports = {Path(p).stem: read_report_csv(p) for p in csv_paths}
    written = emit_plots(reports, out_dir)
    click.echo(f"wrote {len(written)} files -> {out_dir}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.Abort:
        return 2
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 2
    except (DataError, OutOfRange) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 3
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 4
    except IvfuseError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
