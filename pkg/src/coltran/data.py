"""Color space plumbing, quantization, and dataset loading.

Conventions fixed here and relied on everywhere else:
  - rounding is round-half-up: floor(x + 0.5), so 0.5 -> 1 and 2.5 -> 3
  - grayscale is integer luma 0.299 R + 0.587 G + 0.114 B, rounded
  - the coarse vocabulary packs per-channel 3-bit levels red-major:
    index = 64*lr + 8*lg + lb, level = value // 32
  - dequantization maps a level to its bucket center, level*32 + 16
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DimensionError, ResolutionError, VocabularyError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
CHANNEL_LEVELS = 8
COARSE_VOCAB = CHANNEL_LEVELS**3


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Round with .5 going up, unlike numpy's bankers rounding."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """[..., 3] uint8-range RGB -> integer luma in [0, 255]."""
    rgb = np.asarray(rgb)
    if rgb.ndim < 1 or rgb.shape[-1] != 3:
        raise DimensionError(f"expected a trailing RGB axis of 3, got shape {rgb.shape}")
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    y = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return np.clip(round_half_up(y), 0, 255).astype(np.int64)


def area_downsample(img: np.ndarray, factor_y: int, factor_x: int | None = None) -> np.ndarray:
    """Mean over non-overlapping factor_y x factor_x blocks, rounded half-up.

    Works on [H, W] and [H, W, C]; H and W must be exact multiples.
    """
    if factor_x is None:
        factor_x = factor_y
    img = np.asarray(img)
    if img.ndim not in (2, 3):
        raise DimensionError(f"expected [H, W] or [H, W, C], got shape {img.shape}")
    h, w = img.shape[:2]
    if factor_y < 1 or factor_x < 1:
        raise ResolutionError(f"downsample factors must be positive, got {factor_y}x{factor_x}")
    if h % factor_y or w % factor_x:
        raise ResolutionError(f"image {h}x{w} not divisible by block {factor_y}x{factor_x}")
    blocks = img.reshape(h // factor_y, factor_y, w // factor_x, factor_x, *img.shape[2:])
    means = blocks.astype(np.float64).mean(axis=(1, 3))
    return round_half_up(means).astype(np.int64)


def nearest_upsample(img: np.ndarray, factor_y: int, factor_x: int | None = None) -> np.ndarray:
    """Pixel replication along both spatial axes."""
    if factor_x is None:
        factor_x = factor_y
    img = np.asarray(img)
    if img.ndim not in (2, 3):
        raise DimensionError(f"expected [H, W] or [H, W, C], got shape {img.shape}")
    if factor_y < 1 or factor_x < 1:
        raise ResolutionError(f"upsample factors must be positive, got {factor_y}x{factor_x}")
    return np.repeat(np.repeat(img, factor_y, axis=0), factor_x, axis=1)


def _check_channel_range(rgb: np.ndarray):
    if rgb.size and (rgb.min() < 0 or rgb.max() > 255):
        bad = int(rgb.min()) if rgb.min() < 0 else int(rgb.max())
        raise VocabularyError(f"channel value {bad} outside [0, 255]")


def quantize_coarse(rgb: np.ndarray) -> np.ndarray:
    """[..., 3] RGB -> packed 3-bit-per-channel index in [0, 512)."""
    rgb = np.asarray(rgb)
    if rgb.shape[-1] != 3:
        raise DimensionError(f"expected a trailing RGB axis of 3, got shape {rgb.shape}")
    _check_channel_range(rgb)
    levels = rgb.astype(np.int64) // 32
    return 64 * levels[..., 0] + 8 * levels[..., 1] + levels[..., 2]


def coarse_to_levels(index: np.ndarray) -> np.ndarray:
    """Packed index -> [..., 3] per-channel levels in [0, 8)."""
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= COARSE_VOCAB):
        bad = int(index.min()) if index.min() < 0 else int(index.max())
        raise VocabularyError(f"coarse index {bad} outside [0, {COARSE_VOCAB})")
    return np.stack([index // 64, (index // 8) % 8, index % 8], axis=-1).astype(np.int64)


def levels_to_coarse(levels: np.ndarray) -> np.ndarray:
    levels = np.asarray(levels)
    if levels.shape[-1] != 3:
        raise DimensionError(f"expected a trailing level axis of 3, got shape {levels.shape}")
    if levels.size and (levels.min() < 0 or levels.max() >= CHANNEL_LEVELS):
        bad = int(levels.min()) if levels.min() < 0 else int(levels.max())
        raise VocabularyError(f"channel level {bad} outside [0, {CHANNEL_LEVELS})")
    return 64 * levels[..., 0] + 8 * levels[..., 1] + levels[..., 2]


def dequantize_coarse(index: np.ndarray) -> np.ndarray:
    """Packed index -> bucket-center RGB ([..., 3], values 16, 48, ..., 240)."""
    return coarse_to_levels(index) * 32 + 16


# ---------------------------------------------------------------------------
# PNG I/O


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.int64)
    return arr


def load_png_grayscale(path: str | Path) -> np.ndarray:
    """Luma of the decoded RGB, so color and gray inputs agree on the weights."""
    return to_grayscale(load_png(path))


def save_png(path: str | Path, arr: np.ndarray):
    """Write uint8 image data atomically (tmp file + rename)."""
    arr = np.asarray(arr)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise VocabularyError(f"pixel values outside [0, 255]: {arr.min()}..{arr.max()}")
    if arr.ndim == 3 and arr.shape[-1] == 3:
        im = Image.fromarray(arr.astype(np.uint8), mode="RGB")
    elif arr.ndim == 2:
        im = Image.fromarray(arr.astype(np.uint8), mode="L")
    else:
        raise DimensionError(f"cannot encode shape {arr.shape} as a PNG")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    im.save(tmp, format="PNG")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetSpec:
    directory: Path
    split: str = "train"  # "train" | "holdout" | "all"
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.directory = Path(self.directory)
        if self.split not in ("train", "holdout", "all"):
            raise ConfigError(f"split must be train, holdout, or all, got {self.split!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError(f"holdout_fraction must be in [0, 1), got {self.holdout_fraction}")


@dataclass
class TrainingExample:
    """Everything the three training stages need, precomputed from one image."""

    name: str
    rgb_hi: np.ndarray  # [H, W, 3] ints 0..255
    gray_hi: np.ndarray  # [H, W]
    rgb_lo: np.ndarray  # [R, C, 3] area-downsampled
    gray_lo: np.ndarray  # [R, C]
    coarse: np.ndarray  # [R, C] packed indices


def make_training_example(rgb: np.ndarray, rows: int, cols: int, name: str = "") -> TrainingExample:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise DimensionError(f"expected [H, W, 3], got shape {rgb.shape}")
    _check_channel_range(rgb)
    h, w = rgb.shape[:2]
    if h % rows or w % cols:
        raise ResolutionError(f"image {h}x{w} not divisible into a {rows}x{cols} grid")
    gray_hi = to_grayscale(rgb)
    rgb_lo = area_downsample(rgb, h // rows, w // cols)
    gray_lo = area_downsample(gray_hi, h // rows, w // cols)
    return TrainingExample(
        name=name,
        rgb_hi=rgb.astype(np.int64),
        gray_hi=gray_hi,
        rgb_lo=rgb_lo,
        gray_lo=gray_lo,
        coarse=quantize_coarse(rgb_lo),
    )


def list_dataset_files(spec: DatasetSpec) -> list[Path]:
    """manifest.txt (one relative path per line) if present, else sorted *.png."""
    root = spec.directory
    if not root.is_dir():
        raise ConfigError(f"dataset directory {root} does not exist")
    manifest = root / "manifest.txt"
    if manifest.is_file():
        lines = [ln.strip() for ln in manifest.read_text(encoding="utf-8").splitlines()]
        files = [root / ln for ln in lines if ln]
        for f in files:
            if not f.is_file():
                raise ConfigError(f"manifest entry {f.name} not found under {root}")
    else:
        files = sorted(root.glob("*.png"))
    if not files:
        raise ConfigError(f"no images found in {root}")
    return files


def split_files(files: list[Path], spec: DatasetSpec) -> list[Path]:
    if spec.split == "all" or spec.holdout_fraction == 0.0:
        return list(files) if spec.split != "holdout" else []
    order = np.random.default_rng(spec.seed).permutation(len(files))
    n_hold = max(1, int(np.ceil(spec.holdout_fraction * len(files))))
    held = set(order[:n_hold].tolist())
    picked = [f for i, f in enumerate(files) if (i in held) == (spec.split == "holdout")]
    return picked


def load_dataset(spec: DatasetSpec, rows: int, cols: int, height: int, width: int) -> list[TrainingExample]:
    """Load, validate resolution, and precompute grids for every image in the split."""
    out = []
    for path in split_files(list_dataset_files(spec), spec):
        rgb = load_png(path)
        if rgb.shape[:2] != (height, width):
            raise ResolutionError(
                f"{path.name} is {rgb.shape[0]}x{rgb.shape[1]}, expected {height}x{width}"
            )
        out.append(make_training_example(rgb, rows, cols, name=path.name))
    if not out:
        raise ConfigError(f"split {spec.split!r} of {spec.directory} is empty")
    return out
