"""Window-level evaluation: ground-truth matching, confusion tallies, SE/SP.

Classified windows are scored against per-image binary lesion masks.  A
window is a true lesion when at least half of its segmented object overlaps
the mask; sensitivity and specificity then follow from the standard 2x2
tally.  Splits are seeded shuffles persisted as JSON so every run of an
experiment sees the same train/validation/test images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .raster import read_png, write_png
from .segmentation import Segment

Label = Union[bool, str]

_MODEL_DISPLAY = {
    "conventional": "SVM",
    "vgg16": "VGG16",
    "resnet50": "ResNet50",
    "alexnet": "AlexNet",
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def annotate(seg: Segment, gt_mask: np.ndarray) -> str:
    """'positive' when at least half of the object lies on ground truth."""
    if gt_mask.ndim != 2 or gt_mask.dtype != bool:
        raise ValueError("ground truth must be a 2-D bool mask")
    h, w = gt_mask.shape
    xs = seg.object.pixels[:, 0]
    ys = seg.object.pixels[:, 1]
    if xs.max() >= w or ys.max() >= h or xs.min() < 0 or ys.min() < 0:
        raise ValueError("segment does not fit the ground-truth dimensions")
    overlap = gt_mask[ys, xs].sum() / len(xs)
    return "positive" if overlap >= 0.5 else "negative"


def _as_bool(label: Label) -> bool:
    if isinstance(label, bool) or isinstance(label, np.bool_):
        return bool(label)
    if label == "positive":
        return True
    if label == "negative":
        return False
    raise ValueError(f"not a binary label: {label!r}")


def confusion(predictions: Sequence[Label], labels: Sequence[Label]) -> ConfusionCounts:
    """Standard 2x2 tally of aligned prediction/label sequences."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    tp = fp = tn = fn = 0
    for pred, truth in zip(predictions, labels):
        p, t = _as_bool(pred), _as_bool(truth)
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and not t:
            tn += 1
        else:
            fn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def sensitivity(c: ConfusionCounts) -> Optional[float]:
    """TP / (TP + FN); None when no positives were evaluated."""
    denom = c.tp + c.fn
    return c.tp / denom if denom > 0 else None


def specificity(c: ConfusionCounts) -> Optional[float]:
    """TN / (TN + FP); None when no negatives were evaluated."""
    denom = c.tn + c.fp
    return c.tn / denom if denom > 0 else None


@dataclass
class SplitManifest:
    train: List[str]
    validation: List[str]
    test: List[str]

    def __post_init__(self):
        sets = [set(self.train), set(self.validation), set(self.test)]
        for i in range(3):
            for j in range(i + 1, 3):
                if sets[i] & sets[j]:
                    raise ValueError(f"split lists overlap: {sorted(sets[i] & sets[j])}")


def make_split(
    image_ids: Sequence[str], test_n: int = 20, seed: int = 0, val_fraction: float = 0.15
) -> SplitManifest:
    """Seeded shuffle into test / validation / train image-id lists."""
    ids = sorted(set(image_ids))
    if len(ids) != len(image_ids):
        raise ValueError("duplicate image ids")
    if len(ids) <= test_n:
        raise ValueError(f"need more than {test_n} images, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    test = sorted(order[:test_n])
    rest = order[test_n:]
    n_val = int(len(rest) * val_fraction)
    return SplitManifest(
        train=sorted(rest[n_val:]), validation=sorted(rest[:n_val]), test=test
    )


def save_split(manifest: SplitManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"train": manifest.train, "validation": manifest.validation, "test": manifest.test},
            fh,
            indent=2,
        )


def load_split(path) -> SplitManifest:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return SplitManifest(train=doc["train"], validation=doc["validation"], test=doc["test"])


def report_row(counts: ConfusionCounts) -> Dict[str, object]:
    se, sp = sensitivity(counts), specificity(counts)
    return {
        "TP": counts.tp,
        "FP": counts.fp,
        "TN": counts.tn,
        "FN": counts.fn,
        "SE": se,
        "SP": sp,
    }


def _pct(value: Optional[float]) -> str:
    return f"{100.0 * value:.2f}" if value is not None else "n/a"


def render_comparison(per_model: Dict[str, ConfusionCounts]) -> str:
    """Fixed-width comparison table, one row per classifier."""
    lines = [f"{'Methods':<12}\t{'SE (%)':>8}\t{'SP (%)':>8}"]
    for extractor, counts in per_model.items():
        name = _MODEL_DISPLAY.get(extractor, extractor)
        lines.append(f"{name:<12}\t{_pct(sensitivity(counts)):>8}\t{_pct(specificity(counts)):>8}")
    return "\n".join(lines)


def ingest_diaretdb1(root, dest, consensus: float = 0.75) -> List[str]:
    """Convert a DIARETDB1 checkout into the pipeline's dataset layout.

    Copies fundus photographs into ``dest/images`` and thresholds the
    hemorrhage expert-confidence maps at ``consensus`` into binary masks
    under ``dest/gt``.  Returns the image ids written.
    """
    root = Path(root)
    dest = Path(dest)
    img_dir = root / "resources" / "images" / "ddb1_fundusimages"
    gt_dir = root / "resources" / "images" / "ddb1_groundtruth" / "hemorrhages"
    if not img_dir.is_dir() or not gt_dir.is_dir():
        raise FileNotFoundError(
            f"not a DIARETDB1 checkout: expected {img_dir} and {gt_dir}"
        )
    (dest / "images").mkdir(parents=True, exist_ok=True)
    (dest / "gt").mkdir(parents=True, exist_ok=True)
    cut = consensus * 255.0
    ids = []
    for img_path in sorted(img_dir.glob("image*.png")):
        image_id = img_path.stem
        rgb = read_png(img_path)
        write_png(dest / "images" / f"{image_id}.png", rgb)
        gt_path = gt_dir / img_path.name
        confidence = read_png(gt_path)
        if confidence.ndim == 3:
            confidence = confidence[:, :, 0]
        write_png(dest / "gt" / f"{image_id}.png", confidence >= cut)
        ids.append(image_id)
    return ids
