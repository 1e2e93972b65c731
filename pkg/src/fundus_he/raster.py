"""Raster primitives shared by the whole pipeline.

Conventions used across the package:

- Grayscale rasters are 2-D ``uint8`` arrays (integer mode, values 0..255).
  Filter intermediates are computed in float ("real mode") and rounded
  half-up back to ``uint8``.
- RGB rasters are ``(H, W, 3) uint8`` arrays.
- Binary masks are 2-D ``bool`` arrays with the same shape as their source.
- Coordinates are ``(x, y)`` with x = column, y = row.  Bounding boxes are
  inclusive tuples ``(left, top, right, bottom)``.
- Neighborhood filters replicate edge pixels; connectivity is 8 everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.filters import rank as skimage_rank


class RasterError(Exception):
    """Raised when a raster operation receives unusable input."""


Bbox = Tuple[int, int, int, int]


@dataclass(frozen=True)
class StructuringElement:
    """Morphology footprint: a disk or square of the given radius (>= 1)."""

    shape: str  # "disk" | "square"
    radius: int

    def __post_init__(self):
        if self.shape not in ("disk", "square"):
            raise ValueError(f"unknown structuring element shape {self.shape!r}")
        if self.radius < 1:
            raise ValueError("structuring element radius must be >= 1")

    def footprint(self) -> np.ndarray:
        r = self.radius
        if self.shape == "square":
            return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        return xx * xx + yy * yy <= r * r


@dataclass
class ConnectedComponent:
    """One 8-connected foreground blob.

    ``pixels`` is an (N, 2) int array of (x, y) pairs; ``bbox`` is the tight
    inclusive (left, top, right, bottom) box; ``centroid`` is the (x, y)
    pixel-center mean.
    """

    label: int
    pixels: np.ndarray
    area: int
    bbox: Bbox
    centroid: Tuple[float, float]

    def mask(self, shape: Tuple[int, int]) -> np.ndarray:
        """Render the component as a bool mask of the given (H, W) shape."""
        m = np.zeros(shape, dtype=bool)
        m[self.pixels[:, 1], self.pixels[:, 0]] = True
        return m


def round_half_up(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer with .5 going up, as uint8 after clipping."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def _require_gray_u8(img: np.ndarray, op: str) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise RasterError(f"{op} expects a 2-D grayscale raster, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise RasterError(f"{op} expects an integer-mode (uint8) raster, got {img.dtype}")
    return img


def _require_mask(mask: np.ndarray, op: str) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.dtype != bool:
        raise RasterError(f"{op} expects a 2-D bool mask, got {mask.dtype} shape {mask.shape}")
    return mask


def green_channel(img: np.ndarray) -> np.ndarray:
    """Return the G plane of an (H, W, 3) RGB raster, unmodified."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise RasterError(f"expected (H, W, 3) RGB raster, got shape {img.shape}")
    return np.ascontiguousarray(img[:, :, 1])


def histogram(img: np.ndarray) -> np.ndarray:
    """256-bin intensity histogram (counts) of an integer-mode raster."""
    img = _require_gray_u8(img, "histogram")
    return np.bincount(img.ravel(), minlength=256).astype(np.int64)


def median_filter(img: np.ndarray, k: int) -> np.ndarray:
    """k x k median filter with edge replication; k must be odd and >= 3.

    Runs the sliding-histogram rank filter on an edge-padded copy, which
    matches the plain sort-the-neighborhood definition exactly and stays
    fast for the large windows the retinal mask uses.
    """
    img = _require_gray_u8(img, "median_filter")
    if k < 3 or k % 2 == 0:
        raise ValueError(f"median window must be odd and >= 3, got {k}")
    pad = k // 2
    padded = np.pad(img, pad, mode="edge")
    out = skimage_rank.median(padded, footprint=np.ones((k, k), dtype=bool))
    return out[pad:-pad, pad:-pad]


def _edt_inside(mask: np.ndarray) -> np.ndarray:
    # Distance from each pixel to the nearest background pixel; pixels past
    # the image edge count as foreground (erosion pads with 1).
    if mask.all():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(mask)


def erode(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    mask = _require_mask(mask, "erode")
    if se.shape == "disk":
        return _edt_inside(mask) > se.radius
    size = 2 * se.radius + 1
    return ndimage.minimum_filter(mask.astype(np.uint8), size=size, mode="constant", cval=1).astype(bool)


def dilate(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    mask = _require_mask(mask, "dilate")
    if se.shape == "disk":
        if not mask.any():
            return mask.copy()
        return ndimage.distance_transform_edt(~mask) <= se.radius
    size = 2 * se.radius + 1
    return ndimage.maximum_filter(mask.astype(np.uint8), size=size, mode="constant", cval=0).astype(bool)


def open_mask(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Morphological opening: erosion followed by dilation."""
    return dilate(erode(mask, se), se)


_EIGHT = np.ones((3, 3), dtype=int)


def connected_components(mask: np.ndarray) -> List[ConnectedComponent]:
    """8-connected components, labeled 1..N in row-major first-pixel order."""
    mask = _require_mask(mask, "connected_components")
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    flat = labels.ravel()
    # Stable label order: sort by first row-major occurrence.
    uniq, first = np.unique(flat, return_index=True)
    order = [int(u) for u in uniq[np.argsort(first)] if u != 0]
    slices = ndimage.find_objects(labels)
    out: List[ConnectedComponent] = []
    for new_label, old in enumerate(order, start=1):
        sl = slices[old - 1]
        ys, xs = np.nonzero(labels[sl] == old)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        pixels = np.column_stack([xs, ys]).astype(np.int64)
        out.append(
            ConnectedComponent(
                label=new_label,
                pixels=pixels,
                area=int(len(xs)),
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
                centroid=(float(xs.mean()), float(ys.mean())),
            )
        )
    return out


def clip_bbox(bbox: Bbox, width: int, height: int) -> Bbox:
    """Clip an inclusive bbox to image bounds; error on empty intersection."""
    v1, v2, v3, v4 = bbox
    c = (max(v1, 0), max(v2, 0), min(v3, width - 1), min(v4, height - 1))
    if c[0] > c[2] or c[1] > c[3]:
        raise RasterError(f"bbox {bbox} does not intersect a {width}x{height} raster")
    return c


def crop(img: np.ndarray, bbox: Bbox) -> np.ndarray:
    """Sub-raster covered by the bbox after clipping to image bounds."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    v1, v2, v3, v4 = clip_bbox(bbox, w, h)
    return img[v2 : v4 + 1, v1 : v3 + 1].copy()


def read_png(path) -> np.ndarray:
    """Read a PNG as uint8: 2-D for grayscale, (H, W, 3) for color."""
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P"):
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_png(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.dtype != np.uint8:
        raise RasterError(f"write_png expects uint8 or bool data, got {img.dtype}")
    Image.fromarray(img).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Read a {0,255} PNG as a bool mask (anything > 127 is foreground)."""
    return read_png(path) > 127
