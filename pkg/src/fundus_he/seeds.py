"""Prospective hemorrhage locations.

Scanning a whole fundus image for lesions is wasteful; candidate windows
narrow the search to dark blob-like structures.  The chain is:

inverted Gaussian matched filter -> co-occurrence cross-entropy threshold
-> morphological opening (breaks thin vasculature) -> connected components
-> one seed window per surviving blob, padded to a minimum size.

Thin vessels respond to the matched filter as strongly as lesions do, so
the opening step fragments them while blob-sized responses survive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .raster import (
    Bbox,
    RasterError,
    StructuringElement,
    connected_components,
    open_mask,
    round_half_up,
    _require_gray_u8,
)


class NoThresholdError(Exception):
    """Single-level image: no co-occurrence threshold exists."""


@dataclass(frozen=True)
class SeedConfig:
    sigma: float = 4.0         # matched-filter Gaussian scale, pixels
    support: float = 3.0       # kernel width in sigma units (13x13 at defaults)
    open_radius: int = 4       # disk radius that breaks vessel responses
    min_window: int = 15       # minimum seed bbox side, pixels

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.support < 3:
            raise ValueError("support must be >= 3 sigma-units")
        if self.open_radius < 1:
            raise ValueError("open_radius must be >= 1")
        if self.min_window < 1:
            raise ValueError("min_window must be >= 1")


@dataclass(frozen=True)
class SeedWindow:
    """Candidate bounding box (left, top, right, bottom), inclusive."""

    bbox: Bbox
    source_component: int


def matched_filter_kernel(cfg: SeedConfig) -> np.ndarray:
    """Zero-sum inverted Gaussian: deep negative center, positive rim."""
    half = int(cfg.support * cfg.sigma // 2)
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    kernel = -np.exp(-(xx * xx + yy * yy) / (2.0 * cfg.sigma * cfg.sigma))
    return kernel - kernel.mean()


def matched_filter(img: np.ndarray, cfg: SeedConfig | None = None) -> np.ndarray:
    """Correlate with the inverted Gaussian kernel (real-mode response).

    Dark blobs on bright surround give a strong positive response; the
    zero-sum kernel makes flat regions (and any constant offset) map to
    zero, so the response is linear in the input contrast.
    """
    cfg = cfg or SeedConfig()
    img = _require_gray_u8(img, "matched_filter")
    kernel = matched_filter_kernel(cfg)
    if kernel.shape[0] > img.shape[0] or kernel.shape[1] > img.shape[1]:
        raise RasterError(
            f"{kernel.shape[0]}x{kernel.shape[1]} kernel larger than {img.shape[1]}x{img.shape[0]} image"
        )
    return ndimage.correlate(img.astype(np.float64), kernel, mode="nearest")


def normalize_response(response: np.ndarray) -> np.ndarray:
    """Min-max scale a real response onto the 0..255 integer range."""
    lo = float(response.min())
    hi = float(response.max())
    if hi <= lo:
        return np.zeros(response.shape, dtype=np.uint8)
    return round_half_up(255.0 * (response - lo) / (hi - lo))


def _cooccurrence(img: np.ndarray) -> np.ndarray:
    """Joint distribution of (pixel value, rounded 3x3 neighborhood mean)."""
    mean = round_half_up(ndimage.uniform_filter(img.astype(np.float64), size=3, mode="nearest"))
    joint = np.zeros((256, 256), dtype=np.float64)
    np.add.at(joint, (img.ravel(), mean.ravel()), 1.0)
    return joint / img.size


def glcm_cross_entropy_threshold(img: np.ndarray) -> int:
    """Threshold minimizing the diagonal-quadrant cross entropy.

    The joint histogram of pixel value vs. local mean concentrates
    homogeneous background and homogeneous foreground in the two diagonal
    quadrants of the matrix.  For each candidate t, both quadrants are
    summarized by their mean gray level and scored with the cross entropy
    between the quadrant's mass and that single representative; the best t
    minimizes the two quadrants' total.  Gray levels are shifted by one so
    level 0 contributes to the entropy terms.
    """
    img = _require_gray_u8(img, "glcm_cross_entropy_threshold")
    if img.min() == img.max():
        raise NoThresholdError("no threshold exists for a single-level image")
    p = _cooccurrence(img)
    g = np.arange(1, 257, dtype=np.float64)[:, None]  # shifted gray level of axis 0
    gp = g * p
    gplog = gp * np.log(g)

    cm = p.cumsum(axis=0).cumsum(axis=1)      # inclusive rectangle sums from (0, 0)
    cs = gp.cumsum(axis=0).cumsum(axis=1)
    ce = gplog.cumsum(axis=0).cumsum(axis=1)

    t = np.arange(255)
    m1, s1, e1 = cm[t, t], cs[t, t], ce[t, t]
    m2 = cm[255, 255] - cm[t, 255] - cm[255, t] + cm[t, t]
    s2 = cs[255, 255] - cs[t, 255] - cs[255, t] + cs[t, t]
    e2 = ce[255, 255] - ce[t, 255] - ce[255, t] + ce[t, t]

    with np.errstate(divide="ignore", invalid="ignore"):
        objective = (e1 - s1 * np.log(s1 / m1)) + (e2 - s2 * np.log(s2 / m2))
    objective[(m1 <= 0) | (m2 <= 0)] = np.inf  # both quadrants must carry mass
    if not np.isfinite(objective).any():
        raise NoThresholdError("no threshold exists: a quadrant is always empty")
    return int(np.argmin(objective))


def _pad_axis(lo: int, hi: int, min_side: int, center: float, size: int) -> Tuple[int, int]:
    if hi - lo + 1 >= min_side or size < min_side:
        return lo, hi
    start = int(round(center - (min_side - 1) / 2.0))
    start = max(0, min(start, size - min_side))
    return start, start + min_side - 1


def extract_seeds(img: np.ndarray, cfg: SeedConfig | None = None) -> List[SeedWindow]:
    """Seed windows for every blob-like dark structure in the image."""
    cfg = cfg or SeedConfig()
    # Negative correlation means bright-on-dark structure, never a lesion;
    # rectify so the threshold works on the meaningful positive range.
    response = normalize_response(np.maximum(matched_filter(img, cfg), 0.0))
    try:
        t = glcm_cross_entropy_threshold(response)
    except NoThresholdError:
        return []
    binary = response > t
    opened = open_mask(binary, StructuringElement("disk", cfg.open_radius))
    h, w = img.shape
    seeds = []
    for comp in connected_components(opened):
        v1, v2, v3, v4 = comp.bbox
        cx, cy = comp.centroid
        v1, v3 = _pad_axis(v1, v3, cfg.min_window, cx, w)
        v2, v4 = _pad_axis(v2, v4, cfg.min_window, cy, h)
        seeds.append(SeedWindow(bbox=(v1, v2, v3, v4), source_component=comp.label))
    return seeds
