"""Conventional feature extraction and the shared feature-record format.

Each segmented window becomes one 28-value vector built from four families
chosen for what separates hemorrhages from their lookalikes:

- shape (8):   vessels are line-shaped, hemorrhages roughly circular;
- texture (5): co-occurrence statistics of the window;
- color (9):   CIELAB statistics split dark-red lesions from gray shades;
- other (6):   contour closure, corner geometry, and boundary
               Laplacian/gradient strength (the macula has soft edges,
               hemorrhages sharp ones).

Records travel as JSON Lines; deep extractors emit the same schema with a
different ``extractor`` tag and dimensionality, so one validator covers
both producers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab
from skimage.feature import corner_harris, corner_peaks
from skimage.measure import perimeter_crofton, regionprops

from .raster import Bbox, StructuringElement, crop, dilate, erode
from .segmentation import Segment

EXPECTED_DIMS: Dict[str, int] = {
    "conventional": 28,
    "vgg16": 4096,
    "resnet50": 2048,
    "alexnet": 4096,
}

LABELS = ("positive", "negative", "unlabeled")

CONVENTIONAL_FEATURE_NAMES: Tuple[str, ...] = (
    # connected-component shape
    "area",
    "perimeter",
    "circularity",
    "eccentricity",
    "solidity",
    "extent",
    "aspect_ratio",
    "equivalent_diameter",
    # co-occurrence texture
    "glcm_contrast",
    "glcm_correlation",
    "glcm_energy",
    "glcm_homogeneity",
    "glcm_entropy",
    # CIELAB color
    "lab_l_mean",
    "lab_l_std",
    "lab_a_mean",
    "lab_a_std",
    "lab_b_mean",
    "lab_b_std",
    "lab_l_contrast",
    "lab_a_contrast",
    "lab_b_contrast",
    # hand-crafted contour / corner / edge strength
    "contour_closed",
    "corner_count",
    "corner_dist_mean",
    "corner_dist_std",
    "boundary_laplacian_mean",
    "boundary_gradient_mean",
)


class SchemaError(Exception):
    """A feature record violates the wire schema."""


@dataclass
class FeatureRecord:
    window_id: str
    image_id: str
    bbox: Bbox
    label: str
    extractor: str
    values: np.ndarray
    names: Optional[Tuple[str, ...]] = None
    scaled: bool = field(default=False, compare=False)  # in-memory only

    def validate(self) -> None:
        if self.label not in LABELS:
            raise SchemaError(f"unknown label {self.label!r}")
        if self.extractor not in EXPECTED_DIMS:
            raise SchemaError(f"unknown extractor {self.extractor!r}")
        expected = EXPECTED_DIMS[self.extractor]
        if len(self.values) != expected:
            raise SchemaError(
                f"extractor {self.extractor!r} expects {expected} values, got {len(self.values)}"
            )
        if not np.isfinite(self.values).all():
            raise SchemaError("values must all be finite")
        if self.names is not None and len(self.names) != len(self.values):
            raise SchemaError("names/values length mismatch")
        v1, v2, v3, v4 = self.bbox
        if v1 > v3 or v2 > v4:
            raise SchemaError(f"invalid bbox {self.bbox}")


_RECORD_KEYS = {"window_id", "image_id", "bbox", "label", "extractor", "values"}


def record_to_json(rec: FeatureRecord) -> str:
    """One wire-format JSONL line (names stay implicit; they are frozen)."""
    return json.dumps(
        {
            "window_id": rec.window_id,
            "image_id": rec.image_id,
            "bbox": [int(v) for v in rec.bbox],
            "label": rec.label,
            "extractor": rec.extractor,
            "values": [float(v) for v in rec.values],
        }
    )


def record_from_json(line: str) -> FeatureRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaError("record line must be a JSON object")
    missing = _RECORD_KEYS - obj.keys()
    if missing:
        raise SchemaError(f"missing fields: {sorted(missing)}")
    unknown = obj.keys() - _RECORD_KEYS
    if unknown:
        raise SchemaError(f"unknown fields: {sorted(unknown)}")
    bbox = obj["bbox"]
    if not (isinstance(bbox, list) and len(bbox) == 4):
        raise SchemaError("bbox must be a 4-element list")
    values = obj["values"]
    if not isinstance(values, list):
        raise SchemaError("values must be a list")
    rec = FeatureRecord(
        window_id=str(obj["window_id"]),
        image_id=str(obj["image_id"]),
        bbox=tuple(int(v) for v in bbox),
        label=str(obj["label"]),
        extractor=str(obj["extractor"]),
        values=np.asarray(values, dtype=np.float64),
    )
    if rec.extractor == "conventional":
        rec.names = CONVENTIONAL_FEATURE_NAMES
    rec.validate()
    return rec


def write_records(path, records: Iterable[FeatureRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


def read_records(path) -> List[FeatureRecord]:
    """Load and validate a feature JSONL file (line numbers in errors)."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(record_from_json(line))
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def _local_object_mask(seg: Segment, window_shape: Tuple[int, int]) -> np.ndarray:
    v1, v2 = seg.window[0], seg.window[1]
    mask = np.zeros(window_shape, dtype=bool)
    mask[seg.object.pixels[:, 1] - v2, seg.object.pixels[:, 0] - v1] = True
    return mask


def cc_features(object_mask: np.ndarray) -> List[float]:
    """Shape descriptors of the object: 8 values.

    Perimeter is the 4-direction Crofton estimate, which counts both sides
    of thin structures (a one-pixel line is as un-circular as it looks),
    floored at a unit square's boundary so objects below the digitization
    scale keep a sane circularity.
    """
    props = regionprops(object_mask.astype(np.uint8))[0]
    area = float(props.area)
    perimeter = max(float(perimeter_crofton(object_mask, directions=4)), 4.0)
    circularity = 4.0 * math.pi * area / (perimeter * perimeter)
    v2, v1, v4, v3 = props.bbox  # (min_row, min_col, max_row, max_col), exclusive max
    width, height = v3 - v1, v4 - v2
    aspect = max(width, height) / min(width, height)
    return [
        area,
        perimeter,
        circularity,
        float(props.eccentricity),
        float(props.solidity),
        float(props.extent),
        float(aspect),
        float(props.equivalent_diameter_area),
    ]


_GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))  # (dy, dx)


def glcm_matrix(window: np.ndarray, levels: int = 16) -> np.ndarray:
    """Symmetric, normalized co-occurrence matrix averaged over 4 offsets."""
    if window.ndim != 2 or min(window.shape) < 2:
        raise ValueError("co-occurrence texture needs a window of at least 2x2")
    q = (window.astype(np.int64) * levels) // 256
    acc = np.zeros((levels, levels), dtype=np.float64)
    for dy, dx in _GLCM_OFFSETS:
        a = q[max(0, -dy) : q.shape[0] - max(0, dy), max(0, -dx) : q.shape[1] - max(0, dx)]
        b = q[max(0, dy) :, max(0, dx) :] if dx >= 0 else q[max(0, dy) :, : q.shape[1] - 1]
        m = np.zeros((levels, levels), dtype=np.float64)
        np.add.at(m, (a.ravel(), b.ravel()), 1.0)
        m = m + m.T  # symmetric pairs
        acc += m / m.sum()
    return acc / len(_GLCM_OFFSETS)


def glcm_texture_features(window: np.ndarray, levels: int = 16) -> List[float]:
    """Contrast, correlation, energy, homogeneity, entropy: 5 values."""
    p = glcm_matrix(window, levels)
    i = np.arange(levels, dtype=np.float64)
    ii, jj = np.meshgrid(i, i, indexing="ij")
    contrast = float((p * (ii - jj) ** 2).sum())
    mu_i = float((p.sum(axis=1) * i).sum())
    mu_j = float((p.sum(axis=0) * i).sum())
    var_i = float((p.sum(axis=1) * (i - mu_i) ** 2).sum())
    var_j = float((p.sum(axis=0) * (i - mu_j) ** 2).sum())
    if var_i > 0 and var_j > 0:
        correlation = float((p * (ii - mu_i) * (jj - mu_j)).sum() / math.sqrt(var_i * var_j))
    else:
        correlation = 0.0  # constant window convention
    energy = float((p * p).sum())
    homogeneity = float((p / (1.0 + (ii - jj) ** 2)).sum())
    nz = p[p > 0]
    entropy = float(-(nz * np.log2(nz)).sum())
    return [contrast, correlation, energy, homogeneity, entropy]


def color_features(rgb_window: np.ndarray, object_mask: np.ndarray) -> List[float]:
    """CIELAB (D65) statistics inside the object plus surround contrasts: 9 values."""
    if rgb_window.shape[:2] != object_mask.shape:
        raise ValueError("rgb window and object mask dimensions differ")
    lab = rgb2lab(rgb_window)
    obj = lab[object_mask]
    surround_mask = ~object_mask
    out: List[float] = []
    for ch in range(3):
        out.append(float(obj[:, ch].mean()))
        out.append(float(obj[:, ch].std()))
    if surround_mask.any():
        surround = lab[surround_mask]
        for ch in range(3):
            out.append(float(obj[:, ch].mean() - surround[:, ch].mean()))
    else:
        out.extend([0.0, 0.0, 0.0])  # object fills the bbox
    return out


def handcrafted_features(window: np.ndarray, object_mask: np.ndarray) -> List[float]:
    """Contour closure, corner geometry, boundary edge strength: 6 values."""
    touches_edge = (
        object_mask[0, :].any()
        or object_mask[-1, :].any()
        or object_mask[:, 0].any()
        or object_mask[:, -1].any()
    )
    contour_closed = 0.0 if touches_edge else 1.0

    response = corner_harris(window, k=0.04)
    corners = corner_peaks(response, min_distance=1, threshold_rel=0.01)
    corner_count = float(len(corners))
    if len(corners) > 0:
        ys, xs = np.nonzero(object_mask)
        cx, cy = xs.mean(), ys.mean()
        dists = np.hypot(corners[:, 1] - cx, corners[:, 0] - cy)
        dist_mean, dist_std = float(dists.mean()), float(dists.std())
    else:
        dist_mean = dist_std = 0.0

    se = StructuringElement("square", 1)
    band = dilate(object_mask, se) & ~erode(object_mask, se)
    f = window.astype(np.float64)
    lap = np.abs(ndimage.laplace(f, mode="nearest"))
    grad = np.hypot(
        ndimage.sobel(f, axis=1, mode="nearest"), ndimage.sobel(f, axis=0, mode="nearest")
    )
    if band.any():
        lap_mean = float(lap[band].mean())
        grad_mean = float(grad[band].mean())
    else:
        lap_mean = grad_mean = 0.0
    return [contour_closed, corner_count, dist_mean, dist_std, lap_mean, grad_mean]


def extract_conventional(
    rgb: np.ndarray,
    gray: np.ndarray,
    seg: Segment,
    window_id: str,
    image_id: str,
    label: str = "unlabeled",
) -> FeatureRecord:
    """Full 28-value conventional record for one segment.

    ``gray`` is the plane the segmentation ran on (the calibrated image);
    texture and edge features are computed there, color features on the
    matching RGB crop of the original image.
    """
    gray_win = crop(gray, seg.window)
    rgb_win = crop(rgb, seg.window)
    obj = _local_object_mask(seg, gray_win.shape)
    values = (
        cc_features(obj)
        + glcm_texture_features(gray_win)
        + color_features(rgb_win, obj)
        + handcrafted_features(gray_win, obj)
    )
    rec = FeatureRecord(
        window_id=window_id,
        image_id=image_id,
        bbox=seg.window,
        label=label,
        extractor="conventional",
        values=np.asarray(values, dtype=np.float64),
        names=CONVENTIONAL_FEATURE_NAMES,
    )
    rec.validate()
    return rec


@dataclass(frozen=True)
class ScalerStats:
    """Per-dimension z-score statistics fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray
    extractor: str

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std shape mismatch")
        if (self.std < 0).any():
            raise ValueError("negative standard deviation")


def fit_scaler(records: Sequence[FeatureRecord]) -> ScalerStats:
    if len(records) < 2:
        raise ValueError("need at least 2 records to fit a scaler")
    extractor = records[0].extractor
    if any(r.extractor != extractor for r in records):
        raise ValueError("records mix extractors")
    x = np.stack([r.values for r in records])
    return ScalerStats(mean=x.mean(axis=0), std=x.std(axis=0), extractor=extractor)


def apply_scaler(stats: ScalerStats, record: FeatureRecord) -> FeatureRecord:
    """Z-score one record; constant dimensions pass through unchanged.

    Scaling is not idempotent, so records carry a ``scaled`` flag and
    scaling an already-scaled record is an error.  Files on disk always
    hold unscaled values; scaling happens in memory at train/predict time.
    """
    if record.scaled:
        raise ValueError(f"record {record.window_id} is already scaled")
    if record.extractor != stats.extractor:
        raise ValueError(f"scaler is for {stats.extractor!r}, record is {record.extractor!r}")
    if len(record.values) != len(stats.mean):
        raise ValueError("dimension mismatch between record and scaler")
    nonconst = stats.std > 0
    values = record.values.copy()
    values[nonconst] = (values[nonconst] - stats.mean[nonconst]) / stats.std[nonconst]
    return replace(record, values=values, scaled=True)
