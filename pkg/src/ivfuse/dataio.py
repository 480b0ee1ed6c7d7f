"""Loading, normalization, patching, and sampling of cross-modal image pairs.

Pixel convention: images enter as 8-bit grayscale (color inputs are reduced
with BT.601 luminance) and live internally in the symmetric range [-1, 1],
matching the Tanh output of the fusion network. Metrics operate on [0, 1]
copies; see :mod:`ivfuse.metrics`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    DecodeError,
    DimensionMismatch,
    ImageTooSmall,
    InsufficientPairs,
)

UNIT = "unit"
SYMMETRIC = "symmetric"

_RANGE_BOUNDS = {UNIT: (0.0, 1.0), SYMMETRIC: (-1.0, 1.0)}


def normalize_uint8(pixels: np.ndarray) -> np.ndarray:
    """Map 8-bit intensities affinely onto [-1, 1] (x / 127.5 - 1)."""
    return pixels.astype(np.float32) / 127.5 - 1.0


def denormalize_to_uint8(pixels: np.ndarray, value_range: str = SYMMETRIC) -> np.ndarray:
    """Invert the affine normalization back to 8-bit, rounding to nearest.

    Exact round trip: denormalize(normalize(x)) == x for every uint8 x.
    """
    arr = np.asarray(pixels, dtype=np.float64)
    if value_range == SYMMETRIC:
        arr = (arr + 1.0) * 127.5
    elif value_range == UNIT:
        arr = arr * 255.0
    else:
        raise ValueError(f"unknown value_range {value_range!r}")
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


@dataclass
class NormalizedImage:
    """Single-channel float image with a declared value range."""

    pixels: np.ndarray
    value_range: str = SYMMETRIC

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2:
            raise DimensionMismatch(f"expected 2-D image, got shape {self.pixels.shape}")
        if self.value_range not in _RANGE_BOUNDS:
            raise ValueError(f"unknown value_range {self.value_range!r}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("image contains non-finite values")
        lo, hi = _RANGE_BOUNDS[self.value_range]
        if self.pixels.size and (self.pixels.min() < lo or self.pixels.max() > hi):
            raise ValueError(
                f"pixels outside declared range {self.value_range}: "
                f"[{self.pixels.min():.4f}, {self.pixels.max():.4f}]"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_unit(self) -> np.ndarray:
        """Return a [0, 1] copy of the pixel array."""
        if self.value_range == UNIT:
            return self.pixels.copy()
        return (self.pixels + 1.0) * 0.5

    def to_uint8(self) -> np.ndarray:
        return denormalize_to_uint8(self.pixels, self.value_range)


@dataclass
class ImagePair:
    """Registered infrared/visible pair with identical dimensions."""

    infrared: NormalizedImage
    visible: NormalizedImage
    identifier: str = ""

    def __post_init__(self):
        if (self.infrared.height, self.infrared.width) != (
            self.visible.height,
            self.visible.width,
        ):
            raise DimensionMismatch(
                f"pair {self.identifier!r}: infrared "
                f"{self.infrared.pixels.shape} vs visible {self.visible.pixels.shape}"
            )

    @property
    def height(self) -> int:
        return self.infrared.height

    @property
    def width(self) -> int:
        return self.infrared.width


@dataclass
class PatchSet:
    """Ordered sliding-window patches cut from a list of source pairs."""

    patches: list[ImagePair] = field(default_factory=list)
    source_ids: list[str] = field(default_factory=list)
    patch_size: int = 128
    stride: int = 16

    def __len__(self) -> int:
        return len(self.patches)


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as 8-bit grayscale (BT.601 luminance for color)."""
    arr = cv2.imread(os.fspath(path), cv2.IMREAD_GRAYSCALE)
    if arr is None:
        raise DecodeError(f"cannot decode image file {path}")
    return arr


def load_image_pair(
    ir_path: str | Path, vis_path: str | Path, identifier: str | None = None
) -> ImagePair:
    """Load a registered pair, grayscale both, normalize to [-1, 1]."""
    ir = load_image(ir_path)
    vis = load_image(vis_path)
    if ir.shape != vis.shape:
        raise DimensionMismatch(
            f"unregistered pair: {ir_path} is {ir.shape}, {vis_path} is {vis.shape}"
        )
    if identifier is None:
        identifier = Path(ir_path).stem
    return ImagePair(
        infrared=NormalizedImage(normalize_uint8(ir)),
        visible=NormalizedImage(normalize_uint8(vis)),
        identifier=identifier,
    )


def load_pair_directory(root: str | Path) -> list[ImagePair]:
    """Load all pairs under ``root/ir`` and ``root/vis`` matched by filename.

    Files present in only one of the two subdirectories are ignored.
    """
    root = Path(root)
    ir_dir, vis_dir = root / "ir", root / "vis"
    if not ir_dir.is_dir() or not vis_dir.is_dir():
        raise DecodeError(f"expected 'ir' and 'vis' subdirectories under {root}")
    pairs = []
    for ir_path in sorted(ir_dir.iterdir()):
        vis_path = vis_dir / ir_path.name
        if not vis_path.exists():
            continue
        pairs.append(load_image_pair(ir_path, vis_path, identifier=ir_path.stem))
    return pairs


def patch_grid_count(height: int, width: int, patch_size: int = 128, stride: int = 16) -> int:
    """Number of top-left-anchored windows; trailing remainders are dropped."""
    if height < patch_size or width < patch_size:
        raise ImageTooSmall(
            f"image {height}x{width} smaller than patch size {patch_size}"
        )
    return ((height - patch_size) // stride + 1) * ((width - patch_size) // stride + 1)


def iter_window_origins(height: int, width: int, patch_size: int, stride: int):
    """Yield (row, col) origins in row-major order."""
    for r in range(0, height - patch_size + 1, stride):
        for c in range(0, width - patch_size + 1, stride):
            yield r, c


def extract_windows(pixels: np.ndarray, patch_size: int, stride: int) -> list[np.ndarray]:
    """Cut one 2-D array into its sliding windows (row-major, copies)."""
    h, w = pixels.shape
    return [
        pixels[r : r + patch_size, c : c + patch_size].copy()
        for r, c in iter_window_origins(h, w, patch_size, stride)
    ]


def extract_patches(
    pairs: list[ImagePair], patch_size: int = 128, stride: int = 16
) -> PatchSet:
    """Cut every pair into aligned sliding-window patches.

    Deterministic ordering: source order, then row-major window order.
    """
    patches: list[ImagePair] = []
    source_ids: list[str] = []
    for pair in pairs:
        if pair.height < patch_size or pair.width < patch_size:
            raise ImageTooSmall(
                f"pair {pair.identifier!r} is {pair.height}x{pair.width}, "
                f"smaller than patch size {patch_size}"
            )
        source_ids.append(pair.identifier)
        for r, c in iter_window_origins(pair.height, pair.width, patch_size, stride):
            ir = pair.infrared.pixels[r : r + patch_size, c : c + patch_size].copy()
            vis = pair.visible.pixels[r : r + patch_size, c : c + patch_size].copy()
            patches.append(
                ImagePair(
                    infrared=NormalizedImage(ir, pair.infrared.value_range),
                    visible=NormalizedImage(vis, pair.visible.value_range),
                    identifier=f"{pair.identifier}:{r}:{c}",
                )
            )
    return PatchSet(
        patches=patches, source_ids=source_ids, patch_size=patch_size, stride=stride
    )


def sample_test_pairs(
    dataset: list[ImagePair], n: int = 10, trial_seed: int = 0
) -> list[ImagePair]:
    """Systematic random sampling: random start, then every floor(N/n)-th pair.

    Deterministic for a fixed seed; indices wrap modulo the dataset size and
    are guaranteed distinct because n * floor(N/n) <= N.
    """
    count = len(dataset)
    if count < n:
        raise InsufficientPairs(f"dataset has {count} pairs, need {n}")
    step = count // n
    rng = np.random.default_rng(trial_seed)
    offset = int(rng.integers(0, count))
    return [dataset[(offset + k * step) % count] for k in range(n)]
