"""Shared fixtures: synthetic scenes and a module-scoped smoke training run."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from ivfuse.dataio import ImagePair, NormalizedImage, extract_patches


def make_scene(rng: np.random.Generator, h: int, w: int):
    """(ir, vis) in [-1, 1]: IR = dark smooth background + bright flat-top
    blobs, VIS = strong slightly-dark texture with no blobs."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    ir = -0.75 + 0.08 * (yy / h) + 0.02 * rng.standard_normal((h, w)).astype(np.float32)
    for _ in range(int(rng.integers(3, 6))):
        cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
        sigma = rng.uniform(0.09, 0.16) * min(h, w)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        ir = np.maximum(ir, np.minimum(2.2 * blob, 0.92).astype(np.float32))
    ir = np.clip(ir, -1.0, 1.0)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(0.15, 0.45)
    grating = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) * 2 * np.pi / 4)
    blocks = rng.standard_normal((h // 8 + 1, w // 8 + 1)).repeat(8, 0).repeat(8, 1)[:h, :w]
    vis = 0.5 * grating + 0.3 * np.tanh(blocks) - 0.15 + 0.04 * rng.standard_normal((h, w))
    vis = np.clip(vis, -1.0, 1.0).astype(np.float32)
    return ir.astype(np.float32), vis


def make_pair(seed: int, h: int = 64, w: int = 64, identifier: str = "pair") -> ImagePair:
    ir, vis = make_scene(np.random.default_rng(seed), h, w)
    return ImagePair(NormalizedImage(ir), NormalizedImage(vis), identifier)


def make_blob_corpus(n_patches: int = 500, patch_size: int = 16, seed: int = 7):
    """Sliding-window patch set over synthetic scenes, trimmed to n_patches."""
    rng = np.random.default_rng(seed)
    pairs = [
        ImagePair(
            NormalizedImage(a), NormalizedImage(b), f"scene{i}"
        )
        for i, (a, b) in enumerate(make_scene(rng, 96, 96) for _ in range(7))
    ]
    patches = extract_patches(pairs, patch_size=patch_size, stride=10)
    assert len(patches) >= n_patches
    patches.patches = patches.patches[:n_patches]
    return patches


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def smoke_training(tmp_path_factory):
    """One 500-patch / 5-epoch / batch-32 training run shared by the
    acceptance tests (paper loss weights; small patches and a working
    learning rate keep it inside the CPU budget)."""
    from ivfuse.config import TrainConfig
    from ivfuse.training import train

    torch.set_num_threads(max(1, torch.get_num_threads()))
    ckpt_dir = tmp_path_factory.mktemp("smoke_ckpt")
    patches = make_blob_corpus(n_patches=500, patch_size=16)
    config = TrainConfig(
        epochs=5,
        batch_size=32,
        seed=0,
        lr_initial=2e-4,
        lr_final=2e-4,
        checkpoint_dir=str(ckpt_dir),
        patch_size=16,
        patch_stride=10,
    )
    result = train(config, patches)
    return config, patches, result
