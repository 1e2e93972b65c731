"""Image calibration: make border lesions separable from the background.

The black surround of a fundus photograph is darker than any lesion, so a
lesion touching the retinal rim has no intensity boundary on its outer
side.  Calibration paints the background and a thin rim ring white:

- ``retinal_mask``   - where the retina actually is,
- ``retinal_border`` - a ring of the mask's outermost pixels,
- ``calibrate``      - enhanced green + white background + white ring,
- ``search_space``   - the mask dilated outward, bounding window growth.

After calibration a border hemorrhage reads as dark-on-bright exactly like
an interior one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import (
    StructuringElement,
    connected_components,
    dilate,
    erode,
    green_channel,
    median_filter,
)
from .segmentation import multilevel_otsu


class NoRetinaError(Exception):
    """Thresholding found no retinal area in the image."""


@dataclass(frozen=True)
class CalibrateConfig:
    median_window: int = 25     # background-flattening median size
    mask_threshold: int = 15    # absolute green-level cut for the mask
    min_coverage: float = 0.30  # below this, fall back to an Otsu cut
    border_radius: int = 5      # erosion radius defining the rim ring
    search_margin: int = 80     # outward dilation of the search space, pixels


@dataclass
class CalibrationProducts:
    retinal_mask: np.ndarray
    retinal_border: np.ndarray
    calibrated: np.ndarray
    search_space: np.ndarray


def retinal_mask(img: np.ndarray, cfg: CalibrateConfig | None = None) -> np.ndarray:
    """Binary mask of the retinal disc in a raw fundus RGB image.

    Median-filters the green channel to flatten background noise, cuts at a
    fixed low threshold (the surround is near-black), and keeps the largest
    hole-filled component.  If the fixed cut covers suspiciously little of
    the frame the threshold falls back to a two-region Otsu split.
    """
    cfg = cfg or CalibrateConfig()
    filtered = median_filter(green_channel(img), cfg.median_window)
    mask = filtered > cfg.mask_threshold
    if mask.any() and mask.mean() < cfg.min_coverage:
        hist = np.bincount(filtered.ravel(), minlength=256)
        try:
            t = multilevel_otsu(hist, 2).thresholds[0]
            mask = filtered > t
        except Exception:
            pass  # keep the fixed-threshold mask
    if not mask.any():
        raise NoRetinaError("no retinal area found")
    largest = max(connected_components(mask), key=lambda c: c.area)
    return ndimage.binary_fill_holes(largest.mask(mask.shape))


def retinal_border(mask: np.ndarray, radius: int) -> np.ndarray:
    """Ring of mask pixels within ``radius`` of the background."""
    if radius == 0:
        return np.zeros_like(mask)
    eroded = erode(mask, StructuringElement("disk", radius))
    if mask.any() and not eroded.any():
        raise NoRetinaError(f"erosion by {radius} px emptied the retinal mask")
    return mask & ~eroded


def calibrate(enhanced_green: np.ndarray, mask: np.ndarray, border: np.ndarray) -> np.ndarray:
    """Saturating sum of enhanced green, white background, white rim ring."""
    if enhanced_green.shape != mask.shape or mask.shape != border.shape:
        raise ValueError(
            f"dimension mismatch: {enhanced_green.shape} vs {mask.shape} vs {border.shape}"
        )
    out = enhanced_green.astype(np.int32) + 255 * (~mask) + 255 * border
    return np.minimum(out, 255).astype(np.uint8)


def search_space(mask: np.ndarray, margin: int = 80) -> np.ndarray:
    """Mask dilated ``margin`` pixels outward, clipped at image bounds."""
    return dilate(mask, StructuringElement("disk", margin))


def build_calibration(
    img: np.ndarray, enhanced_green: np.ndarray, cfg: CalibrateConfig | None = None
) -> CalibrationProducts:
    """All four calibration products for one image."""
    cfg = cfg or CalibrateConfig()
    mask = retinal_mask(img, cfg)
    border = retinal_border(mask, cfg.border_radius)
    return CalibrationProducts(
        retinal_mask=mask,
        retinal_border=border,
        calibrated=calibrate(enhanced_green, mask, border),
        search_space=search_space(mask, cfg.search_margin),
    )
