"""Binary salient-object masks for infrared images.

The mask gates the content loss: inside it the fused image tracks infrared
intensity, outside it tracks visible-image gradients. Default construction
thresholds brightness at a fraction of the image's intensity range, then
cleans the result with a 3x3 morphological opening followed by closing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from .dataio import NormalizedImage
from .errors import DecodeError, DegenerateImage, DimensionMismatch, NonBinaryMask

QUANTILE = "quantile"
OTSU = "otsu"
EXTERNAL = "external"

_STRUCT_SIZE = 3


@dataclass
class MaskParams:
    quantile: float = 0.75
    external_path: str | Path | None = None


@dataclass
class SaliencyMask:
    """Binary mask aligned to its infrared source image."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float32)
        if self.mask.ndim != 2:
            raise DimensionMismatch(f"expected 2-D mask, got shape {self.mask.shape}")
        if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
            raise NonBinaryMask("mask entries must be exactly 0 or 1")

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


def _as_pixels(ir) -> np.ndarray:
    if isinstance(ir, NormalizedImage):
        return ir.pixels
    return np.asarray(ir, dtype=np.float32)


def quantile_threshold(pixels: np.ndarray, q: float) -> float:
    """Threshold at the q-th point of the intensity range [min, max].

    For a constant image the threshold equals that constant, so every pixel
    passes the >= comparison and the raw mask is all ones.
    """
    lo, hi = float(pixels.min()), float(pixels.max())
    return lo + q * (hi - lo)


def threshold_mask(pixels: np.ndarray, q: float) -> np.ndarray:
    """Raw (pre-morphology) quantile mask; monotone shrinking in q."""
    return (pixels >= quantile_threshold(pixels, q)).astype(np.float32)


def otsu_threshold(quantized: np.ndarray) -> int:
    """Otsu's threshold on the 256-bin histogram of a uint8 image.

    Returns the last bin of the background class; foreground is strictly
    greater than the returned level.
    """
    hist = np.bincount(quantized.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    probs = hist / total
    omega = np.cumsum(probs)
    mu = np.cumsum(probs * np.arange(256))
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between))


def _open_close(raw: np.ndarray) -> np.ndarray:
    # Outside the frame counts as foreground for erosion and background for
    # dilation, so border-touching regions survive both operations intact.
    m = raw.astype(bool)
    m = minimum_filter(m, size=_STRUCT_SIZE, mode="constant", cval=1)
    m = maximum_filter(m, size=_STRUCT_SIZE, mode="constant", cval=0)
    m = maximum_filter(m, size=_STRUCT_SIZE, mode="constant", cval=0)
    m = minimum_filter(m, size=_STRUCT_SIZE, mode="constant", cval=1)
    return m.astype(np.float32)


def load_external_mask(path: str | Path) -> SaliencyMask:
    """Load an 8-bit mask file; 0 -> 0, 255 -> 1, anything else rejected."""
    arr = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if arr is None:
        raise DecodeError(f"cannot decode mask file {path}")
    if not np.all((arr == 0) | (arr == 255)):
        bad = np.unique(arr[(arr != 0) & (arr != 255)])
        raise NonBinaryMask(f"mask file {path} contains non-binary values {bad[:8]}")
    return SaliencyMask((arr == 255).astype(np.float32))


def generate_mask(
    ir, method: str = QUANTILE, params: MaskParams | None = None
) -> SaliencyMask:
    """Produce the binary salient-object mask for an infrared image."""
    params = params or MaskParams()
    pixels = _as_pixels(ir)

    if method == EXTERNAL:
        if params.external_path is None:
            raise DecodeError("external mask method requires external_path")
        mask = load_external_mask(params.external_path)
        validate_mask(mask, pixels)
        return mask

    if method == QUANTILE:
        raw = threshold_mask(pixels, params.quantile)
        return SaliencyMask(_open_close(raw))

    if method == OTSU:
        if pixels.max() == pixels.min():
            warnings.warn(
                "constant image: Otsu threshold undefined, returning empty mask",
                DegenerateImage,
            )
            return SaliencyMask(np.zeros_like(pixels, dtype=np.float32))
        quantized = np.clip(np.rint((pixels + 1.0) * 127.5), 0, 255).astype(np.uint8)
        level = otsu_threshold(quantized)
        raw = (quantized > level).astype(np.float32)
        return SaliencyMask(_open_close(raw))

    raise ValueError(f"unknown mask method {method!r}")


def validate_mask(mask: SaliencyMask, ir) -> None:
    """Raise unless the mask is binary and dimension-matched to the image."""
    if not isinstance(mask, SaliencyMask):
        mask = SaliencyMask(mask)  # raises NonBinaryMask if invalid
    pixels = _as_pixels(ir)
    if mask.mask.shape != pixels.shape:
        raise DimensionMismatch(
            f"mask {mask.mask.shape} does not match image {pixels.shape}"
        )
