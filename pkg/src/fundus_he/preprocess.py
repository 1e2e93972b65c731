"""Fundus image enhancement.

Degraded fundus photographs are mostly dark and low-contrast.  The enhancement
chain runs on the green channel (the plane with the best lesion/background
contrast) in a fixed order:

1. ``clahe``         - tile-based contrast-limited histogram equalization,
2. ``adaptive_gamma`` - gradient-weighted brightness anchoring,
3. ``fuzzy_unsharp`` - edge sharpening with noise-suppressing membership.

Contrast is fixed before brightness anchoring so gamma noise is not
re-amplified; sharpening runs last so region borders stay crisp for the
window segmentation stage.  Every stage maps uint8 to uint8 and is a pure
function: identical input and config give identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .raster import RasterError, green_channel, round_half_up, _require_gray_u8


@dataclass(frozen=True)
class PreprocessConfig:
    clahe_tiles: int = 8          # tile grid count per axis
    clahe_clip: float = 0.01      # clip limit as a fraction of tile pixels
    gamma_bounds: Tuple[float, float] = (0.5, 2.5)
    sharpen_strength: float = 0.8   # lambda in [0, 2]
    sharpen_threshold: float = 20.0  # detail amplitude treated as a sure edge

    def __post_init__(self):
        if self.clahe_tiles < 1:
            raise ValueError("clahe_tiles must be >= 1")
        if not 0 < self.clahe_clip <= 1:
            raise ValueError("clahe_clip must be in (0, 1]")
        lo, hi = self.gamma_bounds
        if not (0 < lo <= hi):
            raise ValueError("gamma_bounds must satisfy 0 < lo <= hi")
        if not 0 <= self.sharpen_strength <= 2:
            raise ValueError("sharpen_strength must be in [0, 2]")
        if not 0 < self.sharpen_threshold <= 255:
            raise ValueError("sharpen_threshold must be in (0, 255]")


def _tile_luts(img: np.ndarray, tiles: int, clip: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-tile equalization LUTs plus the tile-center coordinates."""
    h, w = img.shape
    xe = np.linspace(0, w, tiles + 1).astype(int)
    ye = np.linspace(0, h, tiles + 1).astype(int)
    luts = np.empty((tiles, tiles, 256), dtype=np.float64)
    for ty in range(tiles):
        for tx in range(tiles):
            tile = img[ye[ty] : ye[ty + 1], xe[tx] : xe[tx + 1]]
            area = tile.size
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            limit = max(1.0, clip * area)
            excess = np.maximum(hist - limit, 0.0).sum()
            hist = np.minimum(hist, limit) + excess / 256.0
            luts[ty, tx] = 255.0 * np.cumsum(hist) / area
    cx = (xe[:-1] + xe[1:] - 1) / 2.0
    cy = (ye[:-1] + ye[1:] - 1) / 2.0
    return luts, cx, cy


def clahe(img: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Each tile gets a clipped-histogram equalization LUT (clipped mass is
    redistributed uniformly); pixels are mapped by bilinear interpolation
    between the four surrounding tile LUTs, clamped at the image border.
    """
    img = _require_gray_u8(img, "clahe")
    h, w = img.shape
    t = cfg.clahe_tiles
    if t > w or t > h:
        raise RasterError(f"{t}x{t} tile grid does not fit a {w}x{h} raster")
    luts, cx, cy = _tile_luts(img, t, cfg.clahe_clip)

    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    fx = np.interp(xs, cx, np.arange(t, dtype=np.float64))
    fy = np.interp(ys, cy, np.arange(t, dtype=np.float64))
    ix0 = np.clip(np.floor(fx).astype(int), 0, max(t - 2, 0))
    iy0 = np.clip(np.floor(fy).astype(int), 0, max(t - 2, 0))
    ix1 = np.minimum(ix0 + 1, t - 1)
    iy1 = np.minimum(iy0 + 1, t - 1)
    wx = (fx - ix0)[None, :]
    wy = (fy - iy0)[:, None]

    v = img
    gx0 = np.broadcast_to(ix0[None, :], img.shape)
    gx1 = np.broadcast_to(ix1[None, :], img.shape)
    gy0 = np.broadcast_to(iy0[:, None], img.shape)
    gy1 = np.broadcast_to(iy1[:, None], img.shape)
    top = (1 - wx) * luts[gy0, gx0, v] + wx * luts[gy0, gx1, v]
    bot = (1 - wx) * luts[gy1, gx0, v] + wx * luts[gy1, gx1, v]
    return round_half_up((1 - wy) * top + wy * bot)


def adaptive_gamma(img: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Gradient-weighted adaptive gamma correction.

    The Sobel gradient magnitude weights a mean of normalized intensity, so
    the brightness anchor tracks edge regions (vessels, lesion borders)
    rather than the flat background.  Gamma maps that anchor to 0.5:
    ``gamma = log(0.5) / log(anchor)``, clamped to ``cfg.gamma_bounds``.
    Flat images with no gradient fall back to the plain mean.
    """
    img = _require_gray_u8(img, "adaptive_gamma")
    f = img.astype(np.float64)
    gx = ndimage.sobel(f, axis=1, mode="nearest")
    gy = ndimage.sobel(f, axis=0, mode="nearest")
    weight = np.hypot(gx, gy)
    norm = f / 255.0
    total = weight.sum()
    if total > 0:
        anchor = float((weight * norm).sum() / total)
    else:
        anchor = float(norm.mean())
    anchor = min(max(anchor, 1.0 / 510.0), 1.0 - 1.0 / 510.0)
    gamma = math.log(0.5) / math.log(anchor)
    lo, hi = cfg.gamma_bounds
    gamma = min(max(gamma, lo), hi)
    if gamma == 1.0:
        return img.copy()
    lut = round_half_up(255.0 * (np.arange(256) / 255.0) ** gamma)
    return lut[img]


def fuzzy_unsharp(img: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Non-linear unsharp masking with a fuzzy edge membership.

    Detail is the center-minus-3x3-local-mean residual; the ramp membership
    ``w = min(1, |detail| / T)`` passes true edges through at full strength
    while scaling small-amplitude (noise) residuals down towards zero, so
    the filter sharpens with less noise gain than a linear unsharp mask.
    """
    img = _require_gray_u8(img, "fuzzy_unsharp")
    f = img.astype(np.float64)
    local_mean = ndimage.uniform_filter(f, size=3, mode="nearest")
    detail = f - local_mean
    membership = np.minimum(1.0, np.abs(detail) / cfg.sharpen_threshold)
    return round_half_up(f + cfg.sharpen_strength * membership * detail)


def preprocess(img: np.ndarray, cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Full enhancement chain: green channel -> CLAHE -> gamma -> sharpen."""
    cfg = cfg or PreprocessConfig()
    g = green_channel(img)
    g = clahe(g, cfg)
    g = adaptive_gamma(g, cfg)
    return fuzzy_unsharp(g, cfg)
