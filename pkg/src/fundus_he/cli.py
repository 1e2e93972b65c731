"""Command-line interface: the pipeline as composable subcommands.

Every subcommand accepts ``--config FILE`` (flat key=value text) plus any
number of ``--set key=value`` overrides, and is deterministic for fixed
inputs, configuration, and seeds.  See the README for the dataset layout
and typical workflows.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import evaluate, pipeline, svm
from .calibrate import build_calibration
from .config import ConfigError, PipelineConfig, load_config
from .evaluate import ConfusionCounts, confusion, render_comparison, report_row, sensitivity, specificity
from .features import (
    FeatureRecord,
    SchemaError,
    apply_scaler,
    extract_conventional,
    fit_scaler,
    read_records,
    write_records,
)
from .preprocess import preprocess
from .raster import read_mask, read_png, write_png
from .seeds import SeedWindow, extract_seeds
from .segmentation import DegenerateWindowError, NoObjectError, segment_window
from .svm import classify

MODEL_ORDER = ("conventional", "vgg16", "resnet50", "alexnet")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config file (flat key=value)")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _cfg(args) -> PipelineConfig:
    return load_config(args.config, args.overrides)


def _write_seed_json(path, seeds: List[SeedWindow]) -> None:
    doc = [{"bbox": list(s.bbox), "component": s.source_component} for s in seeds]
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _read_seed_json(path) -> List[SeedWindow]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [SeedWindow(tuple(d["bbox"]), int(d["component"])) for d in doc]


def cmd_enhance(args) -> int:
    cfg = _cfg(args)
    rgb = pipeline.load_rgb(args.image, cfg.downscale)
    write_png(args.out, preprocess(rgb, cfg.preprocess))
    print(f"wrote {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _cfg(args)
    rgb = pipeline.load_rgb(args.image, cfg.downscale)
    enhanced = preprocess(rgb, cfg.preprocess)
    products = build_calibration(rgb, enhanced, cfg.calibrate)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for name, img in (
        ("mask", products.retinal_mask),
        ("border", products.retinal_border),
        ("calibrated", products.calibrated),
        ("search", products.search_space),
    ):
        write_png(out / f"{stem}_{name}.png", img)
    print(f"wrote 4 calibration products to {out}")
    return 0


def cmd_seeds(args) -> int:
    cfg = _cfg(args)
    rgb = pipeline.load_rgb(args.image, cfg.downscale)
    enhanced = preprocess(rgb, cfg.preprocess)
    seeds = extract_seeds(enhanced, cfg.seeds)
    _write_seed_json(args.out, seeds)
    if args.overlay:
        overlay = rgb.copy()
        for s in seeds:
            v1, v2, v3, v4 = s.bbox
            color = (240, 200, 40)
            overlay[v2, v1 : v3 + 1] = color
            overlay[v4, v1 : v3 + 1] = color
            overlay[v2 : v4 + 1, v1] = color
            overlay[v2 : v4 + 1, v3] = color
        write_png(args.overlay, overlay)
    print(f"{len(seeds)} seeds -> {args.out}")
    return 0


def cmd_segment(args) -> int:
    cfg = _cfg(args)
    calibrated = read_png(args.calibrated)
    search = read_mask(args.search)
    seeds = _read_seed_json(args.seeds)
    segments = []
    with open(args.out, "w", encoding="utf-8") as fh:
        for seed_id, seed in enumerate(seeds):
            try:
                seg = segment_window(calibrated, seed.bbox, search, cfg.segment)
            except (DegenerateWindowError, NoObjectError, ValueError) as exc:
                fh.write(json.dumps({"seed_id": seed_id, "error": str(exc)}) + "\n")
                continue
            segments.append(seg)
            fh.write(json.dumps(pipeline.segment_record(seed_id, seg)) + "\n")
    if args.overlay:
        background = pipeline.load_rgb(args.image, cfg.downscale) if args.image else np.stack([calibrated] * 3, axis=-1)
        write_png(args.overlay, pipeline.render_overlay(background, ((s, "unlabeled") for s in segments)))
    print(f"{len(segments)} segments -> {args.out}")
    return 0


def cmd_features(args) -> int:
    cfg = _cfg(args)
    rgb = pipeline.load_rgb(args.image, cfg.downscale)
    enhanced = preprocess(rgb, cfg.preprocess)
    products = build_calibration(rgb, enhanced, cfg.calibrate)
    gt = pipeline.load_gt(args.gt, cfg.downscale) if args.gt else None
    image_id = Path(args.image).stem
    records = []
    with open(args.segments, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "error" in rec:
                continue
            seg = pipeline.segment_from_record(rec, products.calibrated.shape)
            label = evaluate.annotate(seg, gt) if gt is not None else "unlabeled"
            records.append(
                extract_conventional(
                    rgb, products.calibrated, seg,
                    window_id=pipeline.window_id(image_id, int(rec["seed_id"])),
                    image_id=image_id, label=label,
                )
            )
    write_records(args.out, records)
    print(f"{len(records)} feature records -> {args.out}")
    return 0


def cmd_export_windows(args) -> int:
    cfg = _cfg(args)
    entries = pipeline.list_dataset(args.dataset)
    if args.split:
        manifest = evaluate.load_split(args.split)
        wanted = set(getattr(manifest, args.subset)) if args.subset != "all" else None
        if wanted is not None:
            entries = [e for e in entries if e.image_id in wanted]
    path, count = pipeline.export_windows(entries, cfg, args.out)
    print(f"{count} window crops -> {args.out} (manifest {path})")
    return 0


def _split_records(
    records: List[FeatureRecord], manifest: evaluate.SplitManifest
) -> Dict[str, List[FeatureRecord]]:
    by_subset = {"train": [], "validation": [], "test": []}
    lookup = {}
    for subset in by_subset:
        for image_id in getattr(manifest, subset):
            lookup[image_id] = subset
    for rec in records:
        subset = lookup.get(rec.image_id)
        if subset:
            by_subset[subset].append(rec)
    return by_subset


def _labeled(records: List[FeatureRecord]) -> List[FeatureRecord]:
    return [r for r in records if r.label in ("positive", "negative")]


def _validation_counts(model, records: List[FeatureRecord]) -> Optional[ConfusionCounts]:
    labeled = _labeled(records)
    if not labeled:
        return None
    preds = [classify(model, r)[0] for r in labeled]
    return confusion(preds, [r.label for r in labeled])


def cmd_train(args) -> int:
    cfg = _cfg(args)
    if args.features:
        train_records = _labeled(read_records(args.features))
        val_records = _labeled(read_records(args.val_features)) if args.val_features else []
    else:
        if not (args.dataset and args.split):
            print("train needs either --features or --dataset with --split", file=sys.stderr)
            return 2
        manifest = evaluate.load_split(args.split)
        if args.extractor == "conventional":
            entries = pipeline.list_dataset(args.dataset)
            wanted = set(manifest.train) | set(manifest.validation)
            per_image = pipeline.dataset_records([e for e in entries if e.image_id in wanted], cfg)
            records = [r for recs in per_image.values() for r in recs]
        else:
            records = pipeline.load_deep_records(args.dataset, args.extractor)
        by_subset = _split_records(records, manifest)
        train_records = _labeled(by_subset["train"])
        val_records = _labeled(by_subset["validation"])
    if not train_records:
        print("no labeled training records", file=sys.stderr)
        return 2

    stats = fit_scaler(train_records)
    scaled = [apply_scaler(stats, r) for r in train_records]
    grid = [float(c) for c in args.grid.split(",")] if args.grid else [args.C]
    epochs = cfg.svm.epochs or None
    best = None
    for c_value in grid:
        model = svm.train(scaled, C=c_value, seed=args.seed, epochs=epochs,
                          balance_classes=cfg.svm.balance_classes)
        model.scaler = stats
        counts = _validation_counts(model, val_records)
        if counts is not None:
            se, sp = sensitivity(counts), specificity(counts)
            score = ((se or 0.0) + (sp or 0.0)) / 2.0
            print(f"C={c_value}: validation SE={se if se is None else f'{se:.4f}'} "
                  f"SP={sp if sp is None else f'{sp:.4f}'}")
        else:
            score = 0.0
            print(f"C={c_value}: no labeled validation records")
        if best is None or score > best[0]:
            best = (score, c_value, model)
    _, c_value, model = best
    svm.save(model, args.out)
    print(f"model (extractor={model.extractor}, C={c_value}) -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _cfg(args)
    model = svm.load(args.model)
    if args.dataset:
        entries = pipeline.list_dataset(args.dataset)
    else:
        entries = [
            pipeline.DatasetEntry(Path(p).stem, Path(p), None) for p in args.images
        ]
    det_path, ok, failed = pipeline.run_detect(entries, cfg, model, args.out, args.overlays)
    print(f"detections for {ok} images ({failed} failed) -> {det_path}")
    return 0 if ok > 0 or failed == 0 else 1


def _truth_for_image(entry, seg_dir: Path, cfg) -> Dict[str, str]:
    gt = pipeline.load_gt(entry.gt_path, cfg.downscale)
    truths = {}
    seg_file = seg_dir / f"{entry.image_id}.jsonl"
    if not seg_file.is_file():
        return truths
    with open(seg_file, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "error" in rec:
                continue
            seg = pipeline.segment_from_record(rec, gt.shape)
            truths[pipeline.window_id(entry.image_id, int(rec["seed_id"]))] = evaluate.annotate(seg, gt)
    return truths


def cmd_eval(args) -> int:
    cfg = _cfg(args)
    entries = pipeline.list_dataset(args.dataset)
    if args.split:
        manifest = evaluate.load_split(args.split)
        wanted = set(getattr(manifest, args.subset))
        entries = [e for e in entries if e.image_id in wanted]
    entries = [e for e in entries if e.gt_path is not None]
    truths: Dict[str, str] = {}
    seg_dir = Path(args.segments_dir)
    for entry in entries:
        truths.update(_truth_for_image(entry, seg_dir, cfg))
    preds, labels = [], []
    with open(args.detections, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "error" in rec:
                continue
            truth = truths.get(rec["window_id"])
            if truth is None:
                continue
            preds.append(rec["label"])
            labels.append(truth)
    counts = confusion(preds, labels)
    report = {"per_model": {args.tag: report_row(counts)}, "n_windows": counts.total}
    Path(args.out).write_text(pipeline.report_json(report, cfg), encoding="utf-8")
    print(render_comparison({args.tag: counts}))
    print(f"report -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    cfg = _cfg(args)
    manifest = evaluate.load_split(args.split)
    test_ids = set(manifest.test)
    models: Dict[str, str] = {}
    for item in args.model:
        if "=" not in item:
            print(f"--model expects TAG=PATH, got {item!r}", file=sys.stderr)
            return 2
        tag, path = item.split("=", 1)
        models[tag] = path

    conventional_records: Optional[List[FeatureRecord]] = None
    per_model: Dict[str, ConfusionCounts] = {}
    for tag in MODEL_ORDER:
        if tag not in models:
            continue
        path = models[tag]
        if not Path(path).is_file():
            print(f"note: skipping {tag}: no model file at {path}")
            continue
        model = svm.load(path)
        if tag == "conventional":
            if conventional_records is None:
                entries = [e for e in pipeline.list_dataset(args.dataset) if e.image_id in test_ids]
                per_image = pipeline.dataset_records(entries, cfg)
                conventional_records = [r for recs in per_image.values() for r in recs]
            records = conventional_records
        else:
            records = [r for r in pipeline.load_deep_records(args.dataset, tag) if r.image_id in test_ids]
        labeled = _labeled(records)
        if not labeled:
            print(f"note: skipping {tag}: no labeled test windows")
            continue
        preds = [classify(model, r)[0] for r in labeled]
        per_model[tag] = confusion(preds, [r.label for r in labeled])

    table = render_comparison(per_model)
    print(table)
    report = {"per_model": {tag: report_row(c) for tag, c in per_model.items()}}
    if args.out:
        Path(args.out).write_text(pipeline.report_json(report, cfg), encoding="utf-8")
        print(f"report -> {args.out}")
    return 0


def cmd_split(args) -> int:
    cfg = _cfg(args)
    entries = pipeline.list_dataset(args.dataset)
    manifest = evaluate.make_split(
        [e.image_id for e in entries],
        test_n=args.test_n if args.test_n is not None else cfg.split.test_n,
        seed=args.seed if args.seed is not None else cfg.split.seed,
        val_fraction=cfg.split.val_fraction,
    )
    evaluate.save_split(manifest, args.out)
    print(
        f"split: {len(manifest.train)} train / {len(manifest.validation)} validation / "
        f"{len(manifest.test)} test -> {args.out}"
    )
    return 0


def cmd_ingest_diaretdb1(args) -> int:
    ids = evaluate.ingest_diaretdb1(args.root, args.out)
    print(f"ingested {len(ids)} images -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fundus-he", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance one fundus image (green channel)")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("calibrate", help="dump retinal mask/border/calibrated/search PNGs")
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("seeds", help="candidate lesion windows as JSON")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay")
    _add_common(p)
    p.set_defaults(func=cmd_seeds)

    p = sub.add_parser("segment", help="segment seed windows on a calibrated image")
    p.add_argument("--calibrated", required=True)
    p.add_argument("--search", required=True)
    p.add_argument("--seeds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay")
    p.add_argument("--image", help="RGB background for the overlay")
    _add_common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("features", help="conventional feature records for segments")
    p.add_argument("--image", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="binary ground-truth mask for labeling")
    _add_common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("export-windows", help="window crops + manifest for deep extractors")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split")
    p.add_argument("--subset", default="all", choices=("train", "validation", "test", "all"))
    _add_common(p)
    p.set_defaults(func=cmd_export_windows)

    p = sub.add_parser("train", help="train one SVM (conventional or deep features)")
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--extractor", default="conventional", choices=MODEL_ORDER)
    p.add_argument("--features", help="train directly from a feature JSONL file")
    p.add_argument("--val-features", help="validation records when using --features")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--grid", help="comma-separated C values; best validation score wins")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="end-to-end detection over a dataset")
    p.add_argument("--dataset")
    p.add_argument("--images", nargs="*", default=[])
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlays", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--segments-dir", required=True)
    p.add_argument("--split")
    p.add_argument("--subset", default="test", choices=("train", "validation", "test"))
    p.add_argument("--tag", default="conventional", help="row name in the report")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="side-by-side SE/SP table for trained models")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--model", action="append", default=[], metavar="TAG=PATH")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("split", help="create a seeded train/validation/test manifest")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-n", type=int)
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("ingest-diaretdb1", help="convert a DIARETDB1 checkout to the dataset layout")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ingest_diaretdb1)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, SchemaError, svm.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
