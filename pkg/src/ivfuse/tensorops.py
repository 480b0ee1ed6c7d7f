"""Small shared tensor helpers."""

from __future__ import annotations

import torch

from .errors import ShapeError


def as_batch(x) -> torch.Tensor:
    """Coerce (H, W), (C, H, W), or (B, C, H, W) input to a 4-D tensor."""
    if not torch.is_tensor(x):
        x = torch.as_tensor(x, dtype=torch.float32)
    if x.dim() == 2:
        return x.unsqueeze(0).unsqueeze(0)
    if x.dim() == 3:
        return x.unsqueeze(0)
    if x.dim() == 4:
        return x
    raise ShapeError(f"expected 2-4 dims, got shape {tuple(x.shape)}")
