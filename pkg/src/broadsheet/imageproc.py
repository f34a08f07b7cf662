"""Region preprocessing: denoise, local contrast enhancement, binarization.

All functions take and return grayscale numpy uint8 arrays of shape
``(height, width)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall


@dataclass(frozen=True)
class PreprocessConfig:
    """Parameters for the three-stage preprocessing chain."""

    median_denoise_radius: int = 1
    clahe_clip_limit: float = 2.0
    clahe_tile_grid: tuple[int, int] = (8, 8)
    adaptive_window: int = 31
    adaptive_offset: float = 10.0

    def __post_init__(self):
        if self.adaptive_window < 3 or self.adaptive_window % 2 == 0:
            raise ValueError(f"adaptive_window must be odd and >= 3, got {self.adaptive_window}")
        if self.clahe_clip_limit < 1.0:
            raise ValueError(f"clahe_clip_limit must be >= 1, got {self.clahe_clip_limit}")


def _require_gray_u8(img: np.ndarray) -> np.ndarray:
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"expected 2-D uint8 image, got {img.dtype} with shape {img.shape}")
    return img


def median_denoise(img: np.ndarray, radius: int = 1) -> np.ndarray:
    """Square median filter with the given radius (reflect border)."""
    _require_gray_u8(img)
    if radius <= 0:
        return img.copy()
    return ndimage.median_filter(img, size=2 * radius + 1, mode="reflect")


def clahe(img: np.ndarray, clip_limit: float = 2.0,
          tile_grid: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    The image is divided into a grid of tiles; each tile gets an
    equalization mapping from its clip-limited histogram (excess mass is
    redistributed uniformly), and every pixel is remapped by bilinear
    interpolation between the four surrounding tile mappings.  The grid is
    shrunk automatically for images with fewer rows or columns than tiles.
    """
    _require_gray_u8(img)
    h, w = img.shape
    rows = max(1, min(tile_grid[0], h))
    cols = max(1, min(tile_grid[1], w))

    ys = np.linspace(0, h, rows + 1).astype(int)
    xs = np.linspace(0, w, cols + 1).astype(int)

    luts = np.empty((rows, cols, 256), dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            tile = img[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            clip = max(clip_limit * tile.size / 256.0, 1.0)
            excess = np.maximum(hist - clip, 0.0).sum()
            hist = np.minimum(hist, clip) + excess / 256.0
            cdf = np.cumsum(hist)
            luts[i, j] = cdf / tile.size * 255.0

    # Fractional tile-grid coordinates of every pixel, clamped at the
    # outermost tile centers.
    cy = (ys[:-1] + ys[1:]) / 2.0
    cx = (xs[:-1] + xs[1:]) / 2.0
    fy = np.interp(np.arange(h), cy, np.arange(rows))
    fx = np.interp(np.arange(w), cx, np.arange(cols))

    y0 = np.floor(fy).astype(int)
    x0 = np.floor(fx).astype(int)
    y1 = np.minimum(y0 + 1, rows - 1)
    x1 = np.minimum(x0 + 1, cols - 1)
    wy = (fy - y0)[:, None]
    wx = (fx - x0)[None, :]

    p = img.astype(int)
    v00 = luts[y0[:, None], x0[None, :], p]
    v01 = luts[y0[:, None], x1[None, :], p]
    v10 = luts[y1[:, None], x0[None, :], p]
    v11 = luts[y1[:, None], x1[None, :], p]
    out = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def adaptive_mean_threshold(img: np.ndarray, window: int = 31,
                            offset: float = 10.0) -> np.ndarray:
    """Binarize against the local mean: pixel < mean - offset becomes 0.

    The local mean is taken over the ``window``-square neighborhood clipped
    to the image bounds (no padding), and the comparison is evaluated as
    ``(pixel + offset) * count < sum`` so results are exact.
    """
    _require_gray_u8(img)
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    h, w = img.shape
    if h < window or w < window:
        raise ImageTooSmall(f"image {h}x{w} smaller than threshold window {window}")

    r = window // 2
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(img, axis=0, dtype=np.int64, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])

    y = np.arange(h)
    x = np.arange(w)
    y0 = np.maximum(y - r, 0)
    y1 = np.minimum(y + r + 1, h)
    x0 = np.maximum(x - r, 0)
    x1 = np.minimum(x + r + 1, w)

    sums = (ii[y1[:, None], x1[None, :]] - ii[y0[:, None], x1[None, :]]
            - ii[y1[:, None], x0[None, :]] + ii[y0[:, None], x0[None, :]])
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]

    dark = (img.astype(np.float64) + offset) * counts < sums
    return np.where(dark, 0, 255).astype(np.uint8)


def preprocess(img: np.ndarray, cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Full chain: median denoise, then CLAHE, then adaptive threshold.

    Output has the input's dimensions and contains only {0, 255}.

    Raises:
        ImageTooSmall: if either dimension is below ``cfg.adaptive_window``.
    """
    cfg = cfg or PreprocessConfig()
    _require_gray_u8(img)
    h, w = img.shape
    if h < cfg.adaptive_window or w < cfg.adaptive_window:
        raise ImageTooSmall(
            f"image {h}x{w} smaller than threshold window {cfg.adaptive_window}"
        )
    out = median_denoise(img, cfg.median_denoise_radius)
    out = clahe(out, cfg.clahe_clip_limit, cfg.clahe_tile_grid)
    return adaptive_mean_threshold(out, cfg.adaptive_window, cfg.adaptive_offset)
