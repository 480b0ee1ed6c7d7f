"""Versioned checkpoint archive for both networks.

One file holds every weight array keyed by a stable hierarchical name:
fusion-network arrays under ``msfm.*`` (e.g. ``msfm.trunk_ir.conv1.conv.weight``)
and feature-extractor arrays under ``gfem.*``, plus both configs and their rng
seeds. The archive starts with a magic string and an integer format version;
loading anything else raises CheckpointVersionMismatch. Writes are atomic
(temp file + rename).
"""

from __future__ import annotations

import os
from dataclasses import asdict
from pathlib import Path

import torch

from .errors import CheckpointVersionMismatch
from .fusion_net import FusionNetConfig, MultiScaleFusionNet, build_fusion_net
from .global_features import (
    FeatureExtractorConfig,
    GlobalFeatureExtractor,
    build_feature_extractor,
)

MAGIC = "ivfuse-checkpoint"
VERSION = 1


def save_checkpoint(
    path: str | Path,
    fusion_net: MultiScaleFusionNet,
    feature_extractor: GlobalFeatureExtractor,
    extra: dict | None = None,
) -> None:
    weights = {f"msfm.{k}": v for k, v in fusion_net.state_dict().items()}
    weights.update(
        {f"gfem.{k}": v for k, v in feature_extractor.state_dict().items()}
    )
    payload = {
        "magic": MAGIC,
        "version": VERSION,
        "msfm_config": asdict(fusion_net.config),
        "gfem_config": asdict(feature_extractor.config),
        "weights": weights,
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(
    path: str | Path,
) -> tuple[MultiScaleFusionNet, GlobalFeatureExtractor, dict]:
    """Rebuild both networks from the archive; returns (fusion, extractor, extra)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointVersionMismatch(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise CheckpointVersionMismatch(f"{path} is not an ivfuse checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointVersionMismatch(
            f"checkpoint version {payload.get('version')} != supported {VERSION}"
        )

    msfm_cfg = FusionNetConfig(**_tupled(payload["msfm_config"], ("trunk_plan",)))
    gfem_cfg = FeatureExtractorConfig(
        **_tupled(payload["gfem_config"], ("depths", "num_heads"))
    )
    fusion_net = build_fusion_net(msfm_cfg)
    extractor = build_feature_extractor(gfem_cfg)

    weights = payload["weights"]
    fusion_net.load_state_dict(
        {k[len("msfm.") :]: v for k, v in weights.items() if k.startswith("msfm.")}
    )
    extractor.load_state_dict(
        {k[len("gfem.") :]: v for k, v in weights.items() if k.startswith("gfem.")}
    )
    if gfem_cfg.frozen:
        extractor.requires_grad_(False)
        extractor.eval()
    return fusion_net, extractor, payload.get("extra", {})


def _tupled(config: dict, keys: tuple[str, ...]) -> dict:
    out = dict(config)
    for key in keys:
        if key in out and isinstance(out[key], list):
            out[key] = tuple(
                tuple(v) if isinstance(v, list) else v for v in out[key]
            )
    return out


def state_checksum(module: torch.nn.Module) -> float:
    """Order-stable scalar fingerprint of all parameters and buffers."""
    total = 0.0
    for key in sorted(module.state_dict()):
        tensor = module.state_dict()[key]
        if tensor.dtype.is_floating_point:
            total += float(tensor.double().abs().sum())
        else:
            total += float(tensor.sum())
    return total
