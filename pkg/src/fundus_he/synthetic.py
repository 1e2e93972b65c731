"""Synthetic fundus-like fixtures.

Real fundus photographs cannot ship with the test suite, so this module
draws the structures the pipeline cares about: a bright retinal disc on a
black surround, dark round lesions (interior, rim-straddling, and
vessel-attached), thin dark vessels, and soft dark shades that act as
negative examples.  Lesions are drawn darker than vessels, as they are in
the green channel of real images.

Ground truth per lesion is the set of drawn pixels that the pipeline can
actually recover: calibration paints the background and a thin rim ring
white, so the portion of a rim lesion that falls on that ring is excluded
from its truth mask (``border_trim`` matches the calibration ring radius).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .raster import StructuringElement, erode


@dataclass
class SyntheticLesion:
    center: Tuple[int, int]   # (x, y)
    radius: int
    kind: str                 # "interior" | "rim" | "vessel"
    mask: np.ndarray          # recoverable ground-truth pixels


@dataclass
class SyntheticImage:
    image_id: str
    rgb: np.ndarray
    retina_mask: np.ndarray
    lesions: List[SyntheticLesion] = field(default_factory=list)

    @property
    def gt_mask(self) -> np.ndarray:
        out = np.zeros(self.rgb.shape[:2], dtype=bool)
        for lesion in self.lesions:
            out |= lesion.mask
        return out


# Approximate green-channel levels of the drawn structures.  Thin vessels
# are partial-volume mixed with the retina, so they sit much closer to the
# retina level than lesions do; the darkest-region cut relies on that.
RETINA_RGB = (205, 145, 70)
VESSEL_RGB = (160, 100, 52)
LESION_RGB = (95, 26, 22)


def _disk(shape: Tuple[int, int], center: Tuple[float, float], radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius * radius


def _paint(rgb: np.ndarray, mask: np.ndarray, color: Tuple[int, int, int]) -> None:
    rgb[mask] = color


def _vessel_path(
    rng: np.random.Generator, center: Tuple[int, int], retina_radius: int
) -> np.ndarray:
    """Sampled points of one curved vessel from the disc center outward."""
    angle = rng.uniform(0, 2 * np.pi)
    bend = rng.uniform(-0.8, 0.8)
    ts = np.linspace(0.08, 0.95, 160)
    radii = ts * retina_radius
    angles = angle + bend * ts * ts
    xs = center[0] + radii * np.cos(angles)
    ys = center[1] + radii * np.sin(angles)
    return np.column_stack([xs, ys])


def _stamp_path(mask: np.ndarray, path: np.ndarray, radius: float) -> None:
    h, w = mask.shape
    yy, xx = np.mgrid[-int(np.ceil(radius)) : int(np.ceil(radius)) + 1,
                      -int(np.ceil(radius)) : int(np.ceil(radius)) + 1]
    stamp = xx * xx + yy * yy <= radius * radius
    sy, sx = np.nonzero(stamp)
    sy = sy - int(np.ceil(radius))
    sx = sx - int(np.ceil(radius))
    for x, y in path:
        px, py = int(round(x)), int(round(y))
        ys = py + sy
        xs = px + sx
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        mask[ys[ok], xs[ok]] = True


def generate_fundus(
    rng: np.random.Generator,
    image_id: str,
    size: int = 320,
    n_lesions: Optional[int] = None,
    n_vessels: int = 4,
    n_shades: int = 1,
    border_trim: int = 5,
    lesion_radii: Tuple[int, int] = (10, 60),
    noise_sigma: float = 2.0,
) -> SyntheticImage:
    """Draw one synthetic fundus image with known lesion ground truth."""
    h = w = size
    center = (w // 2, h // 2)
    retina_radius = int(size * 0.44)
    retina = _disk((h, w), center, retina_radius)

    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    _paint(rgb, retina, RETINA_RGB)

    # Gentle radial shading keeps the disc from being perfectly flat.
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.sqrt((xx - center[0]) ** 2 + (yy - center[1]) ** 2) / retina_radius
    shade_gain = 1.0 - 0.10 * np.clip(dist, 0, 1) ** 2
    rgb = (rgb.astype(np.float64) * shade_gain[..., None]).astype(np.uint8)

    vessel_mask = np.zeros((h, w), dtype=bool)
    for _ in range(n_vessels):
        _stamp_path(vessel_mask, _vessel_path(rng, center, retina_radius), 1.5)
    vessel_mask &= retina
    _paint(rgb, vessel_mask, VESSEL_RGB)

    for _ in range(n_shades):
        sx = center[0] + rng.integers(-retina_radius // 2, retina_radius // 2)
        sy = center[1] + rng.integers(-retina_radius // 2, retina_radius // 2)
        sr = int(rng.integers(30, 60))
        falloff = np.exp(-((xx - sx) ** 2 + (yy - sy) ** 2) / (2.0 * (sr / 1.5) ** 2))
        gain = 1.0 - 0.22 * falloff
        shaded = (rgb.astype(np.float64) * gain[..., None]).astype(np.uint8)
        rgb = np.where(retina[..., None], shaded, rgb)

    interior = erode(retina, StructuringElement("disk", border_trim)) if border_trim else retina

    if n_lesions is None:
        n_lesions = int(rng.integers(2, 5))
    kinds = ["rim", "vessel"] + ["interior"] * max(0, n_lesions - 2)
    rng.shuffle(kinds)
    kinds = kinds[:n_lesions]

    lesions: List[SyntheticLesion] = []
    occupied = np.zeros((h, w), dtype=bool)
    for kind in kinds:
        for _ in range(40):  # placement attempts
            radius = int(rng.integers(lesion_radii[0], lesion_radii[1] + 1))
            if kind == "rim":
                ang = rng.uniform(0, 2 * np.pi)
                rad = retina_radius - rng.integers(0, max(radius // 2, 1))
                cx = int(center[0] + rad * np.cos(ang))
                cy = int(center[1] + rad * np.sin(ang))
            elif kind == "vessel" and vessel_mask.any():
                vy, vx = np.nonzero(vessel_mask)
                pick = rng.integers(0, len(vx))
                cx, cy = int(vx[pick]), int(vy[pick])
            else:
                ang = rng.uniform(0, 2 * np.pi)
                rad = rng.uniform(0, retina_radius - radius - border_trim - 2)
                cx = int(center[0] + rad * np.cos(ang))
                cy = int(center[1] + rad * np.sin(ang))
            disk = _disk((h, w), (cx, cy), radius)
            drawn = disk & retina
            gt = disk & interior
            if gt.sum() < 0.5 * disk.sum():
                continue  # mostly outside the recoverable area; re-place
            if (drawn & occupied).any():
                continue  # keep lesions disjoint so per-disk IoU is well-defined
            _paint(rgb, drawn, LESION_RGB)
            occupied |= drawn
            lesions.append(SyntheticLesion(center=(cx, cy), radius=radius, kind=kind, mask=gt))
            break

    noise = rng.normal(0, noise_sigma, rgb.shape)
    noisy = np.clip(rgb.astype(np.float64) + noise, 0, 255).astype(np.uint8)
    noisy[~retina] = rgb[~retina]  # keep the surround clean black

    return SyntheticImage(image_id=image_id, rgb=noisy, retina_mask=retina, lesions=lesions)


def generate_suite(
    seed: int, count: int, size: int = 320, **kwargs
) -> List[SyntheticImage]:
    """Deterministic batch of synthetic images (one RNG stream per image)."""
    return [
        generate_fundus(np.random.default_rng((seed, idx)), f"synth{idx:03d}", size=size, **kwargs)
        for idx in range(count)
    ]


def write_dataset(images: List[SyntheticImage], root) -> None:
    """Persist a suite in the pipeline's dataset layout (images/ + gt/)."""
    from pathlib import Path

    from .raster import write_png

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    for img in images:
        write_png(root / "images" / f"{img.image_id}.png", img.rgb)
        write_png(root / "gt" / f"{img.image_id}.png", img.gt_mask)
