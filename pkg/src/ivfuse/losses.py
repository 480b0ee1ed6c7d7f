"""Training objective: mask-guided content loss, SSIM loss, global feature loss.

All functions are differentiable torch ops. Images may be (H, W), (1, H, W),
or (B, 1, H, W); scalar losses average over the batch dimension. Network-range
images live in [-1, 1]; the SSIM term rescales its inputs to [0, 1] internally
so the canonical stability constants apply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import NonBinaryMask, ShapeError
from .tensorops import as_batch

# Added under the square roots so a gradient of exactly zero stays finite in
# backward; perturbs forward values by at most 1e-10.
_EPS = 1e-20

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# 1/8-normalized Sobel: responds with exactly the slope on a linear ramp.
_SOBEL_X = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
).view(1, 1, 3, 3) / 8.0
_SOBEL_Y = _SOBEL_X.transpose(-1, -2).contiguous()


@dataclass
class LossWeights:
    """Weights of the three loss terms; defaults are the selected operating point."""

    alpha: float = 10.0
    beta: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    """Per-term values plus their exact weighted sum (tensors during training)."""

    content: torch.Tensor | float
    ssim: torch.Tensor | float
    global_: torch.Tensor | float
    total: torch.Tensor | float

    def as_floats(self) -> "LossBreakdown":
        def value(x):
            return float(x.detach()) if torch.is_tensor(x) else float(x)

        return LossBreakdown(
            content=value(self.content),
            ssim=value(self.ssim),
            global_=value(self.global_),
            total=value(self.total),
        )


def gradient_magnitude(image) -> torch.Tensor:
    """Sobel gradient magnitude sqrt(gx^2 + gy^2), reflect-padded borders."""
    x = as_batch(image)
    x = F.pad(x, (1, 1, 1, 1), mode="reflect")
    gx = F.conv2d(x, _SOBEL_X.to(x.dtype))
    gy = F.conv2d(x, _SOBEL_Y.to(x.dtype))
    return torch.sqrt(gx * gx + gy * gy + _EPS)


def _check_same_shape(*tensors):
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) > 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


def _normalized_frobenius(x: torch.Tensor) -> torch.Tensor:
    """Per-sample Frobenius norm divided by sqrt(H*W), averaged over batch.

    The sqrt(H*W) factor keeps the content loss resolution-independent so the
    selected term weights stay meaningful across patch sizes.
    """
    b = x.shape[0]
    hw = x.shape[-2] * x.shape[-1]
    sq = x.reshape(b, -1).pow(2).sum(dim=1)
    return (torch.sqrt(sq + _EPS) / math.sqrt(hw)).mean()


def content_loss(fused, ir, vis, mask) -> torch.Tensor:
    """Masked intensity fidelity to infrared + unmasked gradient fidelity to visible.

    ||m o (If - Ii)||_F + ||(1 - m) o (grad If - grad Iv)||_F, each norm
    normalized by sqrt(H*W).
    """
    fused, ir, vis, mask = map(as_batch, (fused, ir, vis, mask))
    _check_same_shape(fused, ir, vis, mask)
    if not torch.all((mask == 0) | (mask == 1)):
        raise NonBinaryMask("content loss mask must be binary")
    intensity = _normalized_frobenius(mask * (fused - ir))
    texture = _normalized_frobenius(
        (1.0 - mask) * (gradient_magnitude(fused) - gradient_magnitude(vis))
    )
    return intensity + texture


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Normalized 2-D Gaussian kernel as a (1, 1, size, size) tensor."""
    half = size // 2
    coords = torch.arange(size, dtype=torch.float64) - half
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = torch.outer(g, g)
    return (kernel / kernel.sum()).view(1, 1, size, size)


def ssim(x, y) -> torch.Tensor:
    """Mean local structural similarity on [0, 1] images, Gaussian-weighted.

    Uses the canonical 11x11 sigma-1.5 window with C1=(0.01)^2, C2=(0.03)^2
    for unit dynamic range; windows are valid (no padding).
    """
    x, y = as_batch(x), as_batch(y)
    _check_same_shape(x, y)
    if x.shape[-2] < SSIM_WINDOW or x.shape[-1] < SSIM_WINDOW:
        raise ShapeError(
            f"image {tuple(x.shape[-2:])} smaller than SSIM window {SSIM_WINDOW}"
        )
    win = gaussian_window().to(x.dtype)
    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    sigma_x = F.conv2d(x * x, win) - mu_x * mu_x
    sigma_y = F.conv2d(y * y, win) - mu_y * mu_y
    sigma_xy = F.conv2d(x * y, win) - mu_x * mu_y
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
    return (num / den).mean()


def _to_unit(x: torch.Tensor) -> torch.Tensor:
    return (x + 1.0) * 0.5


def ssim_loss(fused, ir, vis) -> torch.Tensor:
    """(1 - SSIM(fused, ir)) + (1 - SSIM(fused, vis)) on [0, 1] rescales."""
    fused, ir, vis = map(as_batch, (fused, ir, vis))
    _check_same_shape(fused, ir, vis)
    f = _to_unit(fused)
    return (1.0 - ssim(f, _to_unit(ir))) + (1.0 - ssim(f, _to_unit(vis)))


def global_loss(pyramid_fused, pyramid_ir, pyramid_vis) -> torch.Tensor:
    """Per-stage mean L1 between fused features and the elementwise max of
    the two source features, summed over the four stages."""
    if not (len(pyramid_fused) == len(pyramid_ir) == len(pyramid_vis)):
        raise ShapeError("pyramids must have the same number of stages")
    total = None
    for gf, ga, gb in zip(pyramid_fused, pyramid_ir, pyramid_vis):
        if gf.shape != ga.shape or gf.shape != gb.shape:
            raise ShapeError(
                f"stage shape mismatch: {gf.shape}, {ga.shape}, {gb.shape}"
            )
        stage = (gf - torch.maximum(ga, gb)).abs().mean()
        total = stage if total is None else total + stage
    return total


def total_loss(
    fused,
    ir,
    vis,
    mask,
    pyramids=None,
    weights: LossWeights | None = None,
    enable_content: bool = True,
    enable_ssim: bool = True,
    enable_global: bool = True,
) -> LossBreakdown:
    """Weighted sum of the enabled terms; disabled terms are not evaluated,
    so they contribute neither value nor gradient.

    ``pyramids`` is the (fused, ir, vis) triple of feature pyramids and is
    required only when the global term is enabled.
    """
    weights = weights or LossWeights()
    fused = as_batch(fused)
    zero = torch.zeros((), dtype=fused.dtype, device=fused.device)

    content = content_loss(fused, ir, vis, mask) if enable_content else zero
    ssim_term = ssim_loss(fused, ir, vis) if enable_ssim else zero
    if enable_global:
        if pyramids is None:
            raise ValueError("global term enabled but no feature pyramids given")
        global_term = global_loss(*pyramids)
    else:
        global_term = zero

    total = weights.alpha * content + weights.beta * ssim_term + weights.gamma * global_term
    return LossBreakdown(content=content, ssim=ssim_term, global_=global_term, total=total)
