"""End-to-end orchestration: the per-image chain and dataset helpers.

One image flows through preprocess -> calibrate -> seeds -> window
segmentation -> features -> (optionally) classification.  Every stage is a
pure function of its inputs, so stage outputs are cached content-addressed
and images can be processed in parallel worker processes; outputs are
merged in image-id order to keep runs byte-reproducible.
"""

from __future__ import annotations

import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from . import cache
from .calibrate import CalibrationProducts, NoRetinaError, build_calibration
from .config import PipelineConfig, resolved_dict
from .evaluate import annotate
from .features import FeatureRecord, extract_conventional, read_records, record_from_json, record_to_json
from .preprocess import preprocess
from .raster import write_png
from .seeds import SeedWindow, extract_seeds
from .segmentation import (
    DegenerateWindowError,
    NoObjectError,
    Segment,
    segment_window,
)
from .svm import SvmModel, classify


# ---------------------------------------------------------------------------
# dataset layout


@dataclass(frozen=True)
class DatasetEntry:
    image_id: str
    image_path: Path
    gt_path: Optional[Path]


def list_dataset(root) -> List[DatasetEntry]:
    """Discover ``root/images/*.png|jpg`` and matching ``root/gt/*.png``."""
    root = Path(root)
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"dataset has no images/ directory under {root}")
    entries = []
    for path in sorted(img_dir.iterdir()):
        if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        gt = root / "gt" / f"{path.stem}.png"
        entries.append(DatasetEntry(path.stem, path, gt if gt.is_file() else None))
    if not entries:
        raise FileNotFoundError(f"no images found in {img_dir}")
    return entries


def load_rgb(path, downscale: int = 1) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if downscale > 1:
            im = im.resize((im.width // downscale, im.height // downscale), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8)


def load_gt(path, downscale: int = 1) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L")
        if downscale > 1:
            im = im.resize((im.width // downscale, im.height // downscale), Image.NEAREST)
        return np.asarray(im, dtype=np.uint8) > 127


def png_bytes(arr: np.ndarray) -> bytes:
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def png_from_bytes(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im)


# ---------------------------------------------------------------------------
# run-length coding for object masks (row-major within the window bbox)


def encode_rle(mask: np.ndarray) -> List[List[int]]:
    flat = np.asarray(mask, dtype=bool).ravel()
    if not flat.any():
        return []
    padded = np.concatenate([[False], flat, [False]])
    edges = np.nonzero(padded[1:] != padded[:-1])[0]
    starts, ends = edges[0::2], edges[1::2]
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def decode_rle(runs: Sequence[Sequence[int]], shape: Tuple[int, int]) -> np.ndarray:
    flat = np.zeros(shape[0] * shape[1], dtype=bool)
    for start, length in runs:
        flat[start : start + length] = True
    return flat.reshape(shape)


def segment_record(seed_id: int, seg: Segment) -> Dict[str, object]:
    v1, v2, v3, v4 = seg.window
    local = np.zeros((v4 - v2 + 1, v3 - v1 + 1), dtype=bool)
    local[seg.object.pixels[:, 1] - v2, seg.object.pixels[:, 0] - v1] = True
    return {
        "seed_id": seed_id,
        "status": seg.status,
        "bbox": [v1, v2, v3, v4],
        "object_rle": encode_rle(local),
        "iterations": seg.iterations,
    }


def segment_from_record(rec: Dict[str, object], image_shape: Tuple[int, int]) -> Segment:
    """Rebuild a Segment (image coordinates) from its JSONL record."""
    from .raster import ConnectedComponent

    v1, v2, v3, v4 = (int(v) for v in rec["bbox"])
    local = decode_rle(rec["object_rle"], (v4 - v2 + 1, v3 - v1 + 1))
    ys, xs = np.nonzero(local)
    xs = xs + v1
    ys = ys + v2
    comp = ConnectedComponent(
        label=1,
        pixels=np.column_stack([xs, ys]).astype(np.int64),
        area=int(len(xs)),
        bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
        centroid=(float(xs.mean()), float(ys.mean())),
    )
    return Segment(
        object=comp,
        window=(v1, v2, v3, v4),
        status=str(rec["status"]),
        iterations=int(rec["iterations"]),
    )


# ---------------------------------------------------------------------------
# cached per-image stages


def window_id(image_id: str, seed_id: int) -> str:
    return f"{image_id}_w{seed_id:03d}"


@dataclass
class ProcessedImage:
    image_id: str
    rgb: np.ndarray
    enhanced: np.ndarray
    products: CalibrationProducts
    seeds: List[SeedWindow]
    segments: List[Tuple[int, Segment]]           # (seed_id, segment)
    seed_errors: List[Tuple[int, str]] = field(default_factory=list)

    def window_id(self, seed_id: int) -> str:
        return window_id(self.image_id, seed_id)


def _stage_cfg_repr(cfg: PipelineConfig, *stages: str) -> str:
    return "|".join(repr(getattr(cfg, s)) for s in stages)


def process_image(image_id: str, rgb: np.ndarray, cfg: PipelineConfig) -> ProcessedImage:
    """Run preprocess -> calibrate -> seeds -> segmentation for one image."""
    root = cache.cache_root(cfg)
    raw = rgb.tobytes() + str(rgb.shape).encode()

    key = cache.stage_key("enhanced", _stage_cfg_repr(cfg, "preprocess"), raw)
    blob = cache.get(root, key)
    if blob is not None:
        enhanced = png_from_bytes(blob)
    else:
        enhanced = preprocess(rgb, cfg.preprocess)
        cache.put(root, key, png_bytes(enhanced))

    key = cache.stage_key("calibration", _stage_cfg_repr(cfg, "preprocess", "calibrate"), raw)
    blob = cache.get(root, key)
    if blob is not None:
        with np.load(io.BytesIO(blob)) as npz:
            products = CalibrationProducts(
                retinal_mask=npz["mask"],
                retinal_border=npz["border"],
                calibrated=npz["calibrated"],
                search_space=npz["search"],
            )
    else:
        products = build_calibration(rgb, enhanced, cfg.calibrate)
        buf = io.BytesIO()
        np.savez_compressed(
            buf,
            mask=products.retinal_mask,
            border=products.retinal_border,
            calibrated=products.calibrated,
            search=products.search_space,
        )
        cache.put(root, key, buf.getvalue())

    key = cache.stage_key("seeds", _stage_cfg_repr(cfg, "preprocess", "seeds"), raw)
    blob = cache.get(root, key)
    if blob is not None:
        seeds = [SeedWindow(tuple(d["bbox"]), d["component"]) for d in json.loads(blob)]
    else:
        seeds = extract_seeds(enhanced, cfg.seeds)
        cache.put(
            root,
            key,
            json.dumps(
                [{"bbox": list(s.bbox), "component": s.source_component} for s in seeds]
            ).encode(),
        )

    segments: List[Tuple[int, Segment]] = []
    seed_errors: List[Tuple[int, str]] = []
    for seed_id, seed in enumerate(seeds):
        v1, v2, v3, v4 = seed.bbox
        sub = products.search_space[v2 : v4 + 1, v1 : v3 + 1]
        if not sub.any():
            seed_errors.append((seed_id, "seed outside search space"))
            continue
        try:
            segments.append(
                (seed_id, segment_window(products.calibrated, seed.bbox, products.search_space, cfg.segment))
            )
        except (DegenerateWindowError, NoObjectError) as exc:
            seed_errors.append((seed_id, str(exc)))
    return ProcessedImage(
        image_id=image_id,
        rgb=rgb,
        enhanced=enhanced,
        products=products,
        seeds=seeds,
        segments=segments,
        seed_errors=seed_errors,
    )


def image_records(
    processed: ProcessedImage, gt_mask: Optional[np.ndarray]
) -> List[FeatureRecord]:
    """Conventional feature records for every segment, labeled when gt given."""
    records = []
    for seed_id, seg in processed.segments:
        label = annotate(seg, gt_mask) if gt_mask is not None else "unlabeled"
        records.append(
            extract_conventional(
                processed.rgb,
                processed.products.calibrated,
                seg,
                window_id=processed.window_id(seed_id),
                image_id=processed.image_id,
                label=label,
            )
        )
    return records


def dataset_records(
    entries: Sequence[DatasetEntry], cfg: PipelineConfig
) -> Dict[str, List[FeatureRecord]]:
    """Per-image conventional records for a dataset subset, cached on disk."""
    out: Dict[str, List[FeatureRecord]] = {}
    root = cache.cache_root(cfg)
    cfg_repr = _stage_cfg_repr(cfg, "preprocess", "calibrate", "seeds", "segment")
    for entry in entries:
        raw = entry.image_path.read_bytes()
        gt_raw = entry.gt_path.read_bytes() if entry.gt_path else b""
        key = cache.stage_key("records", f"{cfg_repr}|downscale={cfg.downscale}", raw + gt_raw)
        blob = cache.get(root, key)
        if blob is not None:
            out[entry.image_id] = [
                record_from_json(line) for line in blob.decode().splitlines() if line.strip()
            ]
            continue
        rgb = load_rgb(entry.image_path, cfg.downscale)
        gt = load_gt(entry.gt_path, cfg.downscale) if entry.gt_path else None
        processed = process_image(entry.image_id, rgb, cfg)
        records = image_records(processed, gt)
        cache.put(root, key, "\n".join(record_to_json(r) for r in records).encode())
        out[entry.image_id] = records
    return out


# ---------------------------------------------------------------------------
# overlays


def _outline(mask: np.ndarray) -> np.ndarray:
    return mask & ~ndimage.binary_erosion(mask, np.ones((3, 3), dtype=bool), border_value=0)


LABEL_COLORS = {
    "positive": (235, 50, 50),
    "negative": (60, 120, 235),
    "unlabeled": (240, 200, 40),
}


def render_overlay(
    rgb: np.ndarray, segments: Iterable[Tuple[Segment, str]]
) -> np.ndarray:
    """Object outlines and window boxes on a copy of the image."""
    out = rgb.copy()
    h, w = out.shape[:2]
    for seg, label in segments:
        color = LABEL_COLORS.get(label, LABEL_COLORS["unlabeled"])
        v1, v2, v3, v4 = seg.window
        out[v2, v1 : v3 + 1] = color
        out[v4, v1 : v3 + 1] = color
        out[v2 : v4 + 1, v1] = color
        out[v2 : v4 + 1, v3] = color
        obj = np.zeros((h, w), dtype=bool)
        obj[seg.object.pixels[:, 1], seg.object.pixels[:, 0]] = True
        out[_outline(obj)] = color
    return out


# ---------------------------------------------------------------------------
# detection over a dataset (optionally in parallel)


def _detect_one(args) -> Tuple[str, List[str], List[str], Optional[bytes]]:
    entry, cfg, model, with_overlay = args
    try:
        rgb = load_rgb(entry.image_path, cfg.downscale)
    except OSError as exc:
        return entry.image_id, [json.dumps({"image_id": entry.image_id, "error": str(exc)})], [], None
    try:
        processed = process_image(entry.image_id, rgb, cfg)
    except NoRetinaError as exc:
        return entry.image_id, [json.dumps({"image_id": entry.image_id, "error": str(exc)})], [], None
    gt = load_gt(entry.gt_path, cfg.downscale) if entry.gt_path else None
    records = image_records(processed, gt)
    det_lines: List[str] = []
    overlay_items = []
    for (seed_id, seg), rec in zip(processed.segments, records):
        label, margin = classify(model, rec)
        det_lines.append(
            json.dumps(
                {
                    "image_id": processed.image_id,
                    "window_id": processed.window_id(seed_id),
                    "bbox": list(seg.window),
                    "label": label,
                    "margin": margin,
                }
            )
        )
        overlay_items.append((seg, label))
    seg_lines = [json.dumps(segment_record(sid, seg)) for sid, seg in processed.segments]
    seg_lines += [
        json.dumps({"seed_id": sid, "error": msg}) for sid, msg in processed.seed_errors
    ]
    overlay = png_bytes(render_overlay(rgb, overlay_items)) if with_overlay else None
    return entry.image_id, det_lines, seg_lines, overlay


def run_detect(
    entries: Sequence[DatasetEntry],
    cfg: PipelineConfig,
    model: SvmModel,
    out_dir,
    with_overlays: bool = False,
) -> Tuple[Path, int, int]:
    """Detect lesions in every image; returns (detections path, ok, failed)."""
    out_dir = Path(out_dir)
    (out_dir / "segments").mkdir(parents=True, exist_ok=True)
    if with_overlays:
        (out_dir / "overlays").mkdir(exist_ok=True)
    jobs = [(e, cfg, model, with_overlays) for e in entries]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_detect_one, jobs))
    else:
        results = [_detect_one(job) for job in jobs]
    results.sort(key=lambda r: r[0])

    det_path = out_dir / "detections.jsonl"
    ok = failed = 0
    with open(det_path, "w", encoding="utf-8") as fh:
        for image_id, det_lines, seg_lines, overlay in results:
            if len(det_lines) == 1 and "error" in json.loads(det_lines[0]):
                failed += 1
            else:
                ok += 1
            for line in det_lines:
                fh.write(line + "\n")
            with open(out_dir / "segments" / f"{image_id}.jsonl", "w", encoding="utf-8") as sf:
                for line in seg_lines:
                    sf.write(line + "\n")
            if overlay is not None:
                (out_dir / "overlays" / f"{image_id}.png").write_bytes(overlay)
    return det_path, ok, failed


# ---------------------------------------------------------------------------
# window export for deep feature extraction


def export_windows(
    entries: Sequence[DatasetEntry], cfg: PipelineConfig, out_dir
) -> Tuple[Path, int]:
    """Write per-window RGB crops plus the manifest deep extractors consume."""
    out_dir = Path(out_dir)
    crops = out_dir / "crops"
    crops.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    count = 0
    with open(manifest, "w", encoding="utf-8") as fh:
        for entry in entries:
            rgb = load_rgb(entry.image_path, cfg.downscale)
            gt = load_gt(entry.gt_path, cfg.downscale) if entry.gt_path else None
            processed = process_image(entry.image_id, rgb, cfg)
            for seed_id, seg in processed.segments:
                window_id = processed.window_id(seed_id)
                v1, v2, v3, v4 = seg.window
                write_png(crops / f"{window_id}.png", rgb[v2 : v4 + 1, v1 : v3 + 1])
                label = annotate(seg, gt) if gt is not None else "unlabeled"
                fh.write(
                    json.dumps(
                        {
                            "window_id": window_id,
                            "image_id": entry.image_id,
                            "bbox": [v1, v2, v3, v4],
                            "label": label,
                        }
                    )
                    + "\n"
                )
                count += 1
    return manifest, count


def deep_features_path(dataset_root, extractor: str) -> Path:
    return Path(dataset_root) / "features" / f"{extractor}.jsonl"


def load_deep_records(dataset_root, extractor: str) -> List[FeatureRecord]:
    path = deep_features_path(dataset_root, extractor)
    if not path.is_file():
        raise FileNotFoundError(
            f"no {extractor} feature file: expected {path} "
            f"(produce it with export-windows + the deep-bridge extractor)"
        )
    return read_records(path)


def report_json(payload: Dict[str, object], cfg: PipelineConfig) -> str:
    """Report with the fully resolved config embedded, for auditability."""
    doc = dict(payload)
    doc["config"] = resolved_dict(cfg)
    return json.dumps(doc, indent=2, sort_keys=True)
