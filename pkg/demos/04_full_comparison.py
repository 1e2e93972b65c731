#!/usr/bin/env python3
# End to end on a generated dataset: split, train the conventional-feature
# SVM, classify every test window, and print the comparison-style table.
# If deep feature files exist under <dataset>/features/, their SVMs join
# the table (see README for producing them with export-windows + the
# deep-bridge extractor).
import sys
import tempfile
from pathlib import Path

from fundus_he import pipeline, svm
from fundus_he.config import load_config
from fundus_he.evaluate import confusion, make_split, render_comparison
from fundus_he.features import apply_scaler, fit_scaler
from fundus_he.synthetic import generate_suite, write_dataset

cfg = load_config(
    overrides=[
        "seeds.sigma=3.0",
        "seeds.open_radius=2",
        "calibrate.median_window=9",
        "cache_enabled=false",
    ]
)

if len(sys.argv) > 1:
    dataset = Path(sys.argv[1])
else:
    dataset = Path(tempfile.mkdtemp(prefix="fundus-demo-")) / "dataset"
    print(f"generating a 20-image synthetic dataset under {dataset}")
    write_dataset(generate_suite(314, 20, size=320), dataset)

entries = pipeline.list_dataset(dataset)
split = make_split([e.image_id for e in entries], test_n=max(2, len(entries) // 5), seed=0)
print(f"{len(split.train)} train / {len(split.validation)} validation / {len(split.test)} test images")

train_ids = set(split.train) | set(split.validation)
records = [
    r
    for recs in pipeline.dataset_records([e for e in entries if e.image_id in train_ids], cfg).values()
    for r in recs
    if r.label != "unlabeled"
]
print(f"{len(records)} labeled training windows "
      f"({sum(r.label == 'positive' for r in records)} positive)")
stats = fit_scaler(records)
model = svm.train([apply_scaler(stats, r) for r in records], C=cfg.svm.C, seed=cfg.svm.seed)
model.scaler = stats

test_records = [
    r
    for recs in pipeline.dataset_records(
        [e for e in entries if e.image_id in set(split.test)], cfg
    ).values()
    for r in recs
    if r.label != "unlabeled"
]
per_model = {
    "conventional": confusion(
        [svm.classify(model, r)[0] for r in test_records], [r.label for r in test_records]
    )
}

for tag in ("vgg16", "resnet50", "alexnet"):
    try:
        deep = pipeline.load_deep_records(dataset, tag)
    except FileNotFoundError:
        continue
    train_deep = [r for r in deep if r.image_id in train_ids and r.label != "unlabeled"]
    test_deep = [r for r in deep if r.image_id in set(split.test) and r.label != "unlabeled"]
    if not train_deep or not test_deep:
        continue
    deep_stats = fit_scaler(train_deep)
    deep_model = svm.train([apply_scaler(deep_stats, r) for r in train_deep], C=cfg.svm.C, seed=cfg.svm.seed)
    deep_model.scaler = deep_stats
    per_model[tag] = confusion(
        [svm.classify(deep_model, r)[0] for r in test_deep], [r.label for r in test_deep]
    )

print()
print(render_comparison(per_model))
