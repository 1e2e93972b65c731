import json
from pathlib import Path

import numpy as np
import pytest

from fundus_he import pipeline, synthetic
from fundus_he.cli import main
from fundus_he.config import ConfigError, load_config, resolved_dict
from fundus_he.raster import read_png


DESK_OVERRIDES = [
    "seeds.sigma=3.0",
    "seeds.open_radius=2",
    "calibrate.median_window=9",
    "cache_enabled=false",
]


def desk_args(extra=()):
    args = []
    for item in DESK_OVERRIDES + list(extra):
        args += ["--set", item]
    return args


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    images = synthetic.generate_suite(77, 8, size=320)
    synthetic.write_dataset(images, root)
    return root


@pytest.fixture(scope="module")
def split_file(dataset):
    path = dataset / "split.json"
    assert main(["split", "--dataset", str(dataset), "--out", str(path),
                 "--test-n", "2", "--seed", "0"] + desk_args()) == 0
    return path


@pytest.fixture(scope="module")
def model_file(dataset, split_file):
    path = dataset / "model.json"
    code = main(["train", "--dataset", str(dataset), "--split", str(split_file),
                 "--extractor", "conventional", "--out", str(path)] + desk_args())
    assert code == 0 and path.is_file()
    return path


class TestConfig:
    def test_defaults_roundtrip(self):
        cfg = load_config()
        flat = resolved_dict(cfg)
        assert flat["segment.eta_stop"] == 0.8
        assert flat["segment.max_regions"] == 20
        assert flat["calibrate.search_margin"] == 80
        assert flat["seeds.min_window"] == 15

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# comment\npreprocess.clahe_tiles = 4\nworkers = 2\n")
        cfg = load_config(str(path), overrides=["preprocess.clahe_tiles=6"])
        assert cfg.preprocess.clahe_tiles == 6  # override wins
        assert cfg.workers == 2

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("preprocess.clip_size = 4\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["resize.factor=2"])

    def test_tuple_value(self):
        cfg = load_config(overrides=["preprocess.gamma_bounds=0.4,3.0"])
        assert cfg.preprocess.gamma_bounds == (0.4, 3.0)


class TestRle:
    def test_roundtrip(self, rng):
        mask = rng.random((13, 17)) > 0.6
        runs = pipeline.encode_rle(mask)
        assert np.array_equal(pipeline.decode_rle(runs, mask.shape), mask)

    def test_empty(self):
        assert pipeline.encode_rle(np.zeros((4, 4), dtype=bool)) == []


class TestStageCommands:
    def test_enhance_calibrate_seeds_segment_features(self, dataset, tmp_path):
        image = str(sorted((dataset / "images").glob("*.png"))[0])
        stem = Path(image).stem
        gt = str(dataset / "gt" / f"{stem}.png")

        enhanced = tmp_path / "enhanced.png"
        assert main(["enhance", "--image", image, "--out", str(enhanced)] + desk_args()) == 0
        assert enhanced.is_file()

        cal_dir = tmp_path / "cal"
        assert main(["calibrate", "--image", image, "--out-dir", str(cal_dir)] + desk_args()) == 0
        for suffix in ("mask", "border", "calibrated", "search"):
            assert (cal_dir / f"{stem}_{suffix}.png").is_file()

        seeds_json = tmp_path / "seeds.json"
        assert main(["seeds", "--image", image, "--out", str(seeds_json),
                     "--overlay", str(tmp_path / "seeds.png")] + desk_args()) == 0
        seeds = json.loads(seeds_json.read_text())
        assert seeds and all(len(s["bbox"]) == 4 for s in seeds)

        segments = tmp_path / "segments.jsonl"
        assert main(["segment",
                     "--calibrated", str(cal_dir / f"{stem}_calibrated.png"),
                     "--search", str(cal_dir / f"{stem}_search.png"),
                     "--seeds", str(seeds_json), "--out", str(segments),
                     "--overlay", str(tmp_path / "seg.png"), "--image", image] + desk_args()) == 0
        records = [json.loads(l) for l in segments.read_text().splitlines() if l.strip()]
        good = [r for r in records if "error" not in r]
        assert good
        for rec in good:
            assert rec["status"] in ("complete", "clipped_by_search_space", "iteration_cap")
            assert rec["object_rle"]

        features = tmp_path / "features.jsonl"
        assert main(["features", "--image", image, "--segments", str(segments),
                     "--gt", gt, "--out", str(features)] + desk_args()) == 0
        from fundus_he.features import read_records

        recs = read_records(features)
        assert recs and all(len(r.values) == 28 for r in recs)
        assert any(r.label == "positive" for r in recs)


class TestTrainDetectEvalCompare:
    def test_train_reports_validation(self, model_file):
        doc = json.loads(Path(model_file).read_text())
        assert doc["format_version"] == 1
        assert len(doc["weights"]) == 28
        assert doc["scaler"] is not None

    def test_detect_eval(self, dataset, split_file, model_file, tmp_path):
        out = tmp_path / "out"
        assert main(["detect", "--dataset", str(dataset), "--model", str(model_file),
                     "--out", str(out), "--overlays"] + desk_args()) == 0
        det = out / "detections.jsonl"
        lines = [json.loads(l) for l in det.read_text().splitlines()]
        assert lines and all("error" not in l for l in lines)
        for line in lines[:5]:
            assert set(line) == {"image_id", "window_id", "bbox", "label", "margin"}
        assert (out / "overlays").is_dir() and list((out / "overlays").glob("*.png"))

        report = tmp_path / "report.json"
        assert main(["eval", "--dataset", str(dataset), "--detections", str(det),
                     "--segments-dir", str(out / "segments"), "--split", str(split_file),
                     "--subset", "test", "--out", str(report)] + desk_args()) == 0
        doc = json.loads(report.read_text())
        row = doc["per_model"]["conventional"]
        assert set(row) == {"TP", "FP", "TN", "FN", "SE", "SP"}
        assert "config" in doc  # resolved config embedded

    def test_positive_detections_cover_lesions(self, dataset, model_file, tmp_path):
        # An image with several implanted lesions must yield at least as
        # many positive detections, each overlapping a true lesion.
        images = synthetic.generate_suite(77, 8, size=320)  # same as the dataset fixture
        rich = max(images, key=lambda im: len(im.lesions))
        out = tmp_path / "out"
        assert main(["detect", "--dataset", str(dataset), "--model", str(model_file),
                     "--out", str(out)] + desk_args()) == 0
        detections = [
            json.loads(l)
            for l in (out / "detections.jsonl").read_text().splitlines()
            if json.loads(l).get("image_id") == rich.image_id
        ]
        segments = {}
        seg_path = out / "segments" / f"{rich.image_id}.jsonl"
        for line in seg_path.read_text().splitlines():
            rec = json.loads(line)
            if "error" not in rec:
                segments[pipeline.window_id(rich.image_id, rec["seed_id"])] = rec
        gt = rich.gt_mask
        positives_on_lesions = 0
        for det in detections:
            if det["label"] != "positive":
                continue
            seg = pipeline.segment_from_record(segments[det["window_id"]], gt.shape)
            obj = seg.object.mask(gt.shape)
            if (obj & gt).any():
                positives_on_lesions += 1
        assert positives_on_lesions >= len(rich.lesions) >= 3

    def test_detect_deterministic(self, dataset, model_file, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["detect", "--dataset", str(dataset), "--model", str(model_file),
                         "--out", str(out)] + desk_args()) == 0
        assert (out1 / "detections.jsonl").read_bytes() == (out2 / "detections.jsonl").read_bytes()

    def test_parallel_matches_serial(self, dataset, model_file, tmp_path):
        serial, parallel = tmp_path / "s", tmp_path / "p"
        assert main(["detect", "--dataset", str(dataset), "--model", str(model_file),
                     "--out", str(serial)] + desk_args()) == 0
        assert main(["detect", "--dataset", str(dataset), "--model", str(model_file),
                     "--out", str(parallel)] + desk_args(["workers=2"])) == 0
        assert (serial / "detections.jsonl").read_bytes() == (parallel / "detections.jsonl").read_bytes()

    def test_cache_reuse_identical(self, dataset, model_file, tmp_path, monkeypatch):
        monkeypatch.setenv("FUNDUS_HE_CACHE", str(tmp_path / "cache"))
        cold, warm = tmp_path / "cold", tmp_path / "warm"
        args = lambda out: (["detect", "--dataset", str(dataset), "--model", str(model_file),
                             "--out", str(out)] + desk_args(["cache_enabled=true"]))
        assert main(args(cold)) == 0
        assert (tmp_path / "cache").is_dir()
        assert main(args(warm)) == 0
        assert (cold / "detections.jsonl").read_bytes() == (warm / "detections.jsonl").read_bytes()

    def test_compare_table(self, dataset, split_file, model_file, tmp_path, capsys):
        report = tmp_path / "cmp.json"
        assert main(["compare", "--dataset", str(dataset), "--split", str(split_file),
                     "--model", f"conventional={model_file}",
                     "--model", "vgg16=/nonexistent/model.json",
                     "--out", str(report)] + desk_args()) == 0
        printed = capsys.readouterr().out
        assert "Methods" in printed and "SVM" in printed
        assert "skipping vgg16" in printed
        doc = json.loads(report.read_text())
        assert "conventional" in doc["per_model"]

    def test_deep_features_missing_names_path(self, dataset, split_file, tmp_path):
        with pytest.raises(FileNotFoundError, match="features/vgg16.jsonl"):
            pipeline.load_deep_records(dataset, "vgg16")

    def test_blank_image_error_record(self, model_file, tmp_path):
        img_dir = tmp_path / "blank" / "images"
        img_dir.mkdir(parents=True)
        from fundus_he.raster import write_png

        write_png(img_dir / "black000.png", np.zeros((64, 64, 3), dtype=np.uint8))
        out = tmp_path / "out"
        code = main(["detect", "--dataset", str(tmp_path / "blank"), "--model",
                     str(model_file), "--out", str(out)] + desk_args())
        lines = [json.loads(l) for l in (out / "detections.jsonl").read_text().splitlines()]
        assert any("error" in l for l in lines)
        assert code == 1  # every image failed


class TestExportWindows:
    def test_crops_and_manifest(self, dataset, tmp_path):
        out = tmp_path / "windows"
        assert main(["export-windows", "--dataset", str(dataset),
                     "--out", str(out)] + desk_args()) == 0
        manifest = [json.loads(l) for l in (out / "manifest.jsonl").read_text().splitlines()]
        assert manifest
        for entry in manifest:
            assert set(entry) == {"window_id", "image_id", "bbox", "label"}
            crop_path = out / "crops" / f"{entry['window_id']}.png"
            assert crop_path.is_file()
            v1, v2, v3, v4 = entry["bbox"]
            crop = read_png(crop_path)
            assert crop.shape == (v4 - v2 + 1, v3 - v1 + 1, 3)
        assert any(e["label"] == "positive" for e in manifest)
