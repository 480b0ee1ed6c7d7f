"""Frozen windowed-attention feature extractor for the global loss.

A four-stage hierarchical transformer in the Swin style: 4x4 patch embedding,
then per stage an even number of attention blocks alternating plain windowed
attention with its cyclically-shifted variant, joined by 2x2 patch-merging
downsamples. Stage s yields a token grid of (H/4 / 2^(s-1)) x (W/4 / 2^(s-1))
positions with embed_dim * 2^(s-1) channels.

The weights are randomly initialized once and frozen: the extractor acts as a
fixed multi-scale projection whose features the training loss compares, never
as a trainable backbone. Externally pretrained weights can be loaded into the
same structure through the checkpoint module.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tensorops import as_batch


@dataclass
class FeatureExtractorConfig:
    patch_size: int = 4
    in_channels: int = 3
    embed_dim: int = 96
    depths: tuple = (2, 2, 6, 2)
    num_heads: tuple = (3, 6, 12, 24)
    window_size: int = 4
    mlp_ratio: float = 4.0
    rng_seed: int = 0
    frozen: bool = True

    def __post_init__(self):
        if any(d % 2 for d in self.depths):
            raise ValueError("stage depths must be even (W-MSA/SW-MSA pairs)")


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * H/ws * W/ws, ws*ws, C); H, W divisible by ws."""
    B, H, W, C = x.shape
    x = x.view(B, H // ws, ws, W // ws, ws, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, C)


def window_reverse(windows: torch.Tensor, ws: int, H: int, W: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    B = windows.shape[0] // (H // ws * W // ws)
    x = windows.view(B, H // ws, W // ws, ws, ws, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(B, H, W, -1)


def shift_attention_mask(Hp: int, Wp: int, ws: int, shift: int, device=None) -> torch.Tensor:
    """Additive mask (-100 on cross-region pairs) for shifted windows."""
    region = torch.zeros((Hp, Wp), device=device)
    slices = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    cnt = 0
    for hs in slices:
        for wsl in slices:
            region[hs, wsl] = cnt
            cnt += 1
    regions = window_partition(region.unsqueeze(0).unsqueeze(-1), ws).squeeze(-1)
    mask = regions.unsqueeze(1) - regions.unsqueeze(2)
    return torch.where(mask == 0, 0.0, -100.0)


class WindowAttention(nn.Module):
    """Multi-head self-attention within ws x ws windows, relative-position biased."""

    def __init__(self, dim: int, window_size: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by heads {num_heads}")
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        n = (2 * window_size - 1) ** 2
        self.relative_bias_table = nn.Parameter(torch.zeros(n, num_heads))

        coords = torch.stack(
            torch.meshgrid(
                torch.arange(window_size), torch.arange(window_size), indexing="ij"
            )
        ).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :]
        rel = rel.permute(1, 2, 0) + (window_size - 1)
        index = rel[..., 0] * (2 * window_size - 1) + rel[..., 1]
        self.register_buffer("relative_index", index, persistent=False)

    def forward(self, x, mask=None, return_attn: bool = False):
        B_, N, C = x.shape
        qkv = self.qkv(x).reshape(B_, N, 3, self.num_heads, C // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.relative_bias_table[self.relative_index.view(-1)]
        bias = bias.view(N, N, -1).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nW = mask.shape[0]
            attn = attn.view(B_ // nW, nW, self.num_heads, N, N) + mask.unsqueeze(1)
            attn = attn.view(B_, self.num_heads, N, N)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B_, N, C)
        out = self.proj(out)
        if return_attn:
            return out, attn
        return out


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class AttentionBlock(nn.Module):
    """Pre-norm windowed attention + MLP, both with residual connections.

    ``shifted=True`` displaces the window grid by half a window via a cyclic
    roll with cross-region masking; on grids no larger than one window the
    shift is a no-op and is skipped so shifted and unshifted blocks agree.
    """

    def __init__(self, dim: int, num_heads: int, window_size: int, shifted: bool,
                 mlp_ratio: float = 4.0):
        super().__init__()
        self.window_size = window_size
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, grid: torch.Tensor, return_attn: bool = False):
        B, H, W, C = grid.shape
        ws = self.window_size
        shift = ws // 2 if (self.shifted and min(H, W) > ws) else 0

        x = self.norm1(grid)
        pad_b = (ws - H % ws) % ws
        pad_r = (ws - W % ws) % ws
        x = F.pad(x, (0, 0, 0, pad_r, 0, pad_b))
        Hp, Wp = x.shape[1], x.shape[2]

        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
            mask = shift_attention_mask(Hp, Wp, ws, shift, device=x.device).to(x.dtype)
        else:
            mask = None

        windows = window_partition(x, ws)
        attn_result = self.attn(windows, mask=mask, return_attn=return_attn)
        if return_attn:
            windows, attn = attn_result
        else:
            windows = attn_result
        x = window_reverse(windows, ws, Hp, Wp)

        if shift:
            x = torch.roll(x, shifts=(shift, shift), dims=(1, 2))
        x = x[:, :H, :W, :]

        x = grid + x
        x = x + self.mlp(self.norm2(x))
        if return_attn:
            return x, attn
        return x


class PatchMerging(nn.Module):
    """Concatenate 2x2 token neighborhoods, layer-norm, project 4d -> 2d."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        B, H, W, C = grid.shape
        if H % 2 or W % 2:
            grid = F.pad(grid, (0, 0, 0, W % 2, 0, H % 2))
        x = torch.cat(
            [grid[:, 0::2, 0::2], grid[:, 1::2, 0::2],
             grid[:, 0::2, 1::2], grid[:, 1::2, 1::2]],
            dim=-1,
        )
        return self.reduction(self.norm(x))


class PatchEmbedding(nn.Module):
    """Replicate to 3 channels, reflect-pad to a multiple of the patch size,
    project each non-overlapping 4x4x3 patch to an embed_dim token."""

    def __init__(self, config: FeatureExtractorConfig):
        super().__init__()
        self.patch_size = config.patch_size
        self.in_channels = config.in_channels
        self.proj = nn.Conv2d(
            config.in_channels, config.embed_dim,
            kernel_size=config.patch_size, stride=config.patch_size,
        )
        self.norm = nn.LayerNorm(config.embed_dim)

    def forward(self, image) -> torch.Tensor:
        x = as_batch(image)
        if x.shape[1] == 1:
            x = x.expand(-1, self.in_channels, -1, -1)
        p = self.patch_size
        pad_b = (p - x.shape[2] % p) % p
        pad_r = (p - x.shape[3] % p) % p
        if pad_b or pad_r:
            x = F.pad(x, (0, pad_r, 0, pad_b), mode="reflect")
        x = self.proj(x)  # (B, embed_dim, H/p, W/p)
        x = x.permute(0, 2, 3, 1)
        return self.norm(x)


class GlobalFeatureExtractor(nn.Module):
    """Produces the four-stage token pyramid consumed by the global loss."""

    def __init__(self, config: FeatureExtractorConfig | None = None):
        super().__init__()
        self.config = config or FeatureExtractorConfig()
        cfg = self.config
        self.patch_embed = PatchEmbedding(cfg)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        dim = cfg.embed_dim
        for s, (depth, heads) in enumerate(zip(cfg.depths, cfg.num_heads)):
            blocks = nn.ModuleList(
                AttentionBlock(dim, heads, cfg.window_size, shifted=bool(i % 2),
                               mlp_ratio=cfg.mlp_ratio)
                for i in range(depth)
            )
            self.stages.append(blocks)
            if s < len(cfg.depths) - 1:
                self.merges.append(PatchMerging(dim))
                dim *= 2

    def forward(self, image) -> list[torch.Tensor]:
        """Return the 4 per-stage token grids, each (B, Hs, Ws, Cs)."""
        x = self.patch_embed(image)
        pyramid = []
        for s, blocks in enumerate(self.stages):
            for block in blocks:
                x = block(x)
            pyramid.append(x)
            if s < len(self.merges):
                x = self.merges[s](x)
        return pyramid



def build_feature_extractor(
    config: FeatureExtractorConfig | None = None,
) -> GlobalFeatureExtractor:
    """Instantiate with seed-deterministic init; freeze unless configured not to."""
    config = config or FeatureExtractorConfig()
    net = GlobalFeatureExtractor(config)
    gen = torch.Generator().manual_seed(config.rng_seed)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                # truncated normal: resample-free clamp at two sigma
                module.weight.normal_(0.0, 0.02, generator=gen).clamp_(-0.04, 0.04)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
            elif isinstance(module, WindowAttention):
                module.relative_bias_table.normal_(0.0, 0.02, generator=gen).clamp_(
                    -0.04, 0.04
                )
    if config.frozen:
        net.requires_grad_(False)
        net.eval()
    return net
