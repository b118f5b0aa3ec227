"""Synthetic color images for overfit runs and toy corpora.

Each image is a flat background plus a few axis-aligned rectangles, all filled
from a small palette whose entries have well-separated luma values. Grayscale
then (almost) determines color: an ideal colorizer can reach near-zero NLL, a
grayscale-blind one cannot, which makes tiny corpora informative for both
overfitting checks and conditioning ablations.
"""

from __future__ import annotations

import numpy as np

from .data import LUMA_WEIGHTS, round_half_up

# Hue directions paired with target lumas; scaled so luma lands near the target.
_HUES = (
    (1.00, 0.15, 0.15),
    (0.15, 1.00, 0.15),
    (0.20, 0.20, 1.00),
    (1.00, 1.00, 0.20),
    (1.00, 0.30, 1.00),
    (0.25, 1.00, 1.00),
)
_TARGET_LUMAS = (30, 70, 110, 150, 190, 225)


def build_palette() -> np.ndarray:
    """[K, 3] int colors with pairwise-distinct, well-separated lumas."""
    w = np.array(LUMA_WEIGHTS)
    colors = []
    for hue, target in zip(_HUES, _TARGET_LUMAS):
        h = np.array(hue)
        scale = target / float(h @ w)
        colors.append(np.clip(round_half_up(h * scale), 0, 255))
    return np.stack(colors).astype(np.int64)


def synthetic_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """One random rectangle collage, [H, W, 3] ints 0..255."""
    palette = build_palette()
    k = len(palette)
    img = np.empty((height, width, 3), dtype=np.int64)
    img[:] = palette[rng.integers(k)]
    for _ in range(int(rng.integers(2, 6))):
        y0 = int(rng.integers(0, height))
        x0 = int(rng.integers(0, width))
        y1 = int(rng.integers(y0 + 1, height + 1))
        x1 = int(rng.integers(x0 + 1, width + 1))
        img[y0:y1, x0:x1] = palette[rng.integers(k)]
    return img


def synthetic_corpus(count: int, height: int, width: int, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_image(rng, height, width) for _ in range(count)]


def overfit_images(height: int = 16, width: int = 16) -> list[np.ndarray]:
    """Four fixed, visually distinct collages used by the memorization check."""
    palette = build_palette()
    h2, w2 = height // 2, width // 2
    imgs = []

    a = np.empty((height, width, 3), dtype=np.int64)
    a[:, :w2] = palette[0]
    a[:, w2:] = palette[2]
    imgs.append(a)

    b = np.empty((height, width, 3), dtype=np.int64)
    b[:h2] = palette[3]
    b[h2:] = palette[1]
    imgs.append(b)

    c = np.empty((height, width, 3), dtype=np.int64)
    c[:h2, :w2] = palette[4]
    c[:h2, w2:] = palette[5]
    c[h2:, :w2] = palette[1]
    c[h2:, w2:] = palette[0]
    imgs.append(c)

    d = np.empty((height, width, 3), dtype=np.int64)
    d[:] = palette[5]
    m_y, m_x = max(1, height // 4), max(1, width // 4)
    d[m_y : height - m_y, m_x : width - m_x] = palette[2]
    imgs.append(d)

    return imgs
