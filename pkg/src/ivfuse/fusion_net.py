"""Multi-scale fusion network: two densely-connected trunks, three branches.

Two structurally identical encoder trunks (no parameter sharing, one per
modality) extract features at four scales. The first three trunk scales are
fused across modalities by 1x1 Tanh layers and refined by branch convolutions;
the deepest trunk features of both modalities plus all branch outputs are
concatenated (1472 channels) and reduced by a final 1x1 Tanh layer to the
fused image. Every convolution is stride 1 with shape-preserving padding, so
the network is fully convolutional and the output matches the input size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import ShapeError
from .tensorops import as_batch

# (in_channels, out_channels, kernel, padding) per trunk layer; the input of
# layer k is the concatenation of all previous layer outputs (dense wiring).
TRUNK_PLAN = ((1, 64, 5, 2), (64, 128, 3, 1), (192, 256, 3, 1), (448, 512, 3, 1))

# Branch k refines the 1-channel fused map of trunk scale k with chained
# 3x3 convolutions. Scale indices are 1-based.
BRANCH_PLANS = {
    1: ((1, 64), (64, 128), (128, 256)),
    2: ((1, 64), (64, 128)),
    3: ((1, 64),),
}

FINAL_IN_CHANNELS = 512 + 512 + 256 + 128 + 64  # = 1472


@dataclass
class FusionNetConfig:
    rng_seed: int = 0
    trunk_plan: tuple = field(default=TRUNK_PLAN)
    branch_plans: dict = field(default_factory=lambda: dict(BRANCH_PLANS))


class ConvBnRelu(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, padding):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=1, padding=padding)
        self.bn = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU()

    def forward(self, x):
        return self.relu(self.bn(self.conv(x)))


class DenseTrunk(nn.Module):
    """Four-layer encoder where layer k consumes all previous outputs."""

    def __init__(self, plan=TRUNK_PLAN):
        super().__init__()
        self.conv1 = ConvBnRelu(*plan[0])
        self.conv2 = ConvBnRelu(*plan[1])
        self.conv3 = ConvBnRelu(*plan[2])
        self.conv4 = ConvBnRelu(*plan[3])

    def forward(self, x, diagnostics: bool = False):
        f1 = self.conv1(x)
        f2 = self.conv2(f1)
        cat3 = torch.cat([f1, f2], dim=1)
        f3 = self.conv3(cat3)
        cat4 = torch.cat([f1, f2, f3], dim=1)
        f4 = self.conv4(cat4)
        if diagnostics:
            assert f1.shape[1] == 64 and f2.shape[1] == 128
            assert cat3.shape[1] == 192 and f3.shape[1] == 256
            assert cat4.shape[1] == 448 and f4.shape[1] == 512
            assert f4.shape[-2:] == x.shape[-2:]
        return f1, f2, f3, f4


class ScaleFusion(nn.Module):
    """Concatenate both modalities' features, 1x1 conv to one channel, Tanh."""

    def __init__(self, feature_channels):
        super().__init__()
        self.conv = nn.Conv2d(2 * feature_channels, 1, kernel_size=1)

    def forward(self, f_ir, f_vis):
        return torch.tanh(self.conv(torch.cat([f_ir, f_vis], dim=1)))


class Branch(nn.Module):
    def __init__(self, plan):
        super().__init__()
        self.layers = nn.Sequential(
            *[ConvBnRelu(i, o, 3, 1) for i, o in plan]
        )

    def forward(self, x):
        return self.layers(x)


class MultiScaleFusionNet(nn.Module):
    """End-to-end fusion network; callable on registered [-1, 1] pairs."""

    def __init__(self, config: FusionNetConfig | None = None):
        super().__init__()
        self.config = config or FusionNetConfig()
        plan = self.config.trunk_plan
        branch_plans = self.config.branch_plans
        self.trunk_ir = DenseTrunk(plan)
        self.trunk_vis = DenseTrunk(plan)
        self.fuse1 = ScaleFusion(plan[0][1])
        self.fuse2 = ScaleFusion(plan[1][1])
        self.fuse3 = ScaleFusion(plan[2][1])
        self.branch1 = Branch(branch_plans[1])
        self.branch2 = Branch(branch_plans[2])
        self.branch3 = Branch(branch_plans[3])
        self.final_in_channels = (
            2 * plan[3][1]
            + branch_plans[1][-1][1]
            + branch_plans[2][-1][1]
            + branch_plans[3][-1][1]
        )
        self.final_fuse = nn.Conv2d(self.final_in_channels, 1, kernel_size=1)

    def trunk_forward(self, image, modality: str, diagnostics: bool = False):
        """Run one modality's trunk; returns the four per-scale feature maps."""
        x = as_batch(image)
        if x.shape[-2] < 5 or x.shape[-1] < 5:
            raise ShapeError(f"input {tuple(x.shape[-2:])} smaller than first kernel")
        if modality == "ir":
            return self.trunk_ir(x, diagnostics=diagnostics)
        if modality == "vis":
            return self.trunk_vis(x, diagnostics=diagnostics)
        raise ValueError(f"unknown modality {modality!r}")

    def scale_fuse(self, f_ir, f_vis, scale: int):
        if f_ir.shape != f_vis.shape:
            raise ShapeError(f"feature shapes differ: {f_ir.shape} vs {f_vis.shape}")
        return {1: self.fuse1, 2: self.fuse2, 3: self.fuse3}[scale](f_ir, f_vis)

    def branch_forward(self, fused, scale: int):
        if fused.shape[1] != 1:
            raise ShapeError(f"branch input must be 1-channel, got {fused.shape[1]}")
        return {1: self.branch1, 2: self.branch2, 3: self.branch3}[scale](fused)

    def forward(self, ir, vis, diagnostics: bool = False):
        ir = as_batch(ir)
        vis = as_batch(vis)
        if ir.shape != vis.shape:
            raise ShapeError(f"unregistered pair: {ir.shape} vs {vis.shape}")
        ir_feats = self.trunk_forward(ir, "ir", diagnostics=diagnostics)
        vis_feats = self.trunk_forward(vis, "vis", diagnostics=diagnostics)
        branches = [
            self.branch_forward(self.scale_fuse(ir_feats[k], vis_feats[k], k + 1), k + 1)
            for k in range(3)
        ]
        stack = torch.cat([ir_feats[3], vis_feats[3], *branches], dim=1)
        if diagnostics:
            assert stack.shape[1] == self.final_in_channels == FINAL_IN_CHANNELS
        return torch.tanh(self.final_fuse(stack))



def build_fusion_net(config: FusionNetConfig | None = None) -> MultiScaleFusionNet:
    """Instantiate the network with seed-deterministic fan-in-scaled init."""
    config = config or FusionNetConfig()
    net = MultiScaleFusionNet(config)
    gen = torch.Generator().manual_seed(config.rng_seed)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                module.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.BatchNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.running_mean.zero_()
                module.running_var.fill_(1.0)
    return net
