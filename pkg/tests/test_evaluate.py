import numpy as np
import pytest

from fundus_he import evaluate
from fundus_he.evaluate import (
    ConfusionCounts,
    annotate,
    confusion,
    make_split,
    render_comparison,
    sensitivity,
    specificity,
)
from fundus_he.raster import ConnectedComponent
from fundus_he.segmentation import Segment


def segment_from_pixels(pixels):
    pixels = np.asarray(pixels, dtype=np.int64)
    xs, ys = pixels[:, 0], pixels[:, 1]
    comp = ConnectedComponent(
        label=1, pixels=pixels, area=len(pixels),
        bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
        centroid=(float(xs.mean()), float(ys.mean())),
    )
    return Segment(object=comp, window=comp.bbox, status="complete", iterations=1)


class TestAnnotate:
    def test_fully_inside(self):
        gt = np.zeros((10, 10), dtype=bool)
        gt[2:6, 2:6] = True
        seg = segment_from_pixels([(3, 3), (4, 3), (3, 4)])
        assert annotate(seg, gt) == "positive"

    def test_disjoint(self):
        gt = np.zeros((10, 10), dtype=bool)
        gt[7:9, 7:9] = True
        seg = segment_from_pixels([(1, 1), (2, 1)])
        assert annotate(seg, gt) == "negative"

    def test_exact_half_is_positive(self):
        gt = np.zeros((10, 10), dtype=bool)
        gt[0:10, 0:5] = True
        seg = segment_from_pixels([(x, 4) for x in range(10)])  # 5 in, 5 out
        assert annotate(seg, gt) == "positive"

    def test_monotone_in_gt(self, rng):
        pixels = [(int(x), int(y)) for x, y in rng.integers(0, 20, (30, 2))]
        seg = segment_from_pixels(list(set(pixels)))
        gt = rng.random((20, 20)) > 0.6
        grown = gt | (rng.random((20, 20)) > 0.7)
        if annotate(seg, gt) == "positive":
            assert annotate(seg, grown) == "positive"

    def test_dimension_mismatch(self):
        seg = segment_from_pixels([(15, 15)])
        with pytest.raises(ValueError):
            annotate(seg, np.zeros((10, 10), dtype=bool))


class TestConfusion:
    def test_hand_count(self):
        counts = confusion(
            ["positive", "positive", "negative", "negative"],
            ["positive", "negative", "negative", "positive"],
        )
        assert (counts.tp, counts.fp, counts.tn, counts.fn) == (1, 1, 1, 1)

    def test_all_correct(self):
        counts = confusion([True, False, True], [True, False, True])
        assert counts.fp == 0 and counts.fn == 0 and counts.total == 3

    def test_matches_second_tally(self, rng):
        preds = rng.random(1000) > 0.5
        labels = rng.random(1000) > 0.5
        counts = confusion(list(preds), list(labels))
        tp = int((preds & labels).sum())
        fp = int((preds & ~labels).sum())
        tn = int((~preds & ~labels).sum())
        fn = int((~preds & labels).sum())
        assert (counts.tp, counts.fp, counts.tn, counts.fn) == (tp, fp, tn, fn)
        assert counts.total == 1000

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([True], [True, False])


class TestRates:
    def test_sensitivity(self):
        assert sensitivity(ConfusionCounts(tp=9, fn=1)) == 0.9

    def test_specificity(self):
        assert specificity(ConfusionCounts(tn=97, fp=3)) == 0.97

    def test_undefined_marker(self):
        assert sensitivity(ConfusionCounts(tn=5, fp=5)) is None
        assert specificity(ConfusionCounts(tp=5, fn=5)) is None

    def test_rates_in_unit_interval(self, rng):
        for _ in range(50):
            c = ConfusionCounts(*(int(v) for v in rng.integers(0, 50, 4)))
            se, sp = sensitivity(c), specificity(c)
            assert se is None or 0.0 <= se <= 1.0
            assert sp is None or 0.0 <= sp <= 1.0


class TestSplit:
    def test_dataset_of_89(self):
        ids = [f"image{i:03d}" for i in range(1, 90)]
        split = make_split(ids, test_n=20, seed=5)
        assert len(split.test) == 20
        assert len(split.validation) == 10
        assert len(split.train) == 59

    def test_same_seed_identical(self):
        ids = [f"img{i}" for i in range(40)]
        a = make_split(ids, test_n=10, seed=3)
        b = make_split(ids, test_n=10, seed=3)
        assert a == b

    def test_disjoint_any_seed(self):
        ids = [f"img{i}" for i in range(30)]
        for seed in range(10):
            split = make_split(ids, test_n=5, seed=seed)
            combined = split.train + split.validation + split.test
            assert sorted(combined) == sorted(ids)

    def test_too_few_images(self):
        with pytest.raises(ValueError):
            make_split(["a", "b"], test_n=20)

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            make_split(["a"] * 30, test_n=3)

    def test_roundtrip(self, tmp_path):
        split = make_split([f"i{k}" for k in range(30)], test_n=5, seed=1)
        evaluate.save_split(split, tmp_path / "split.json")
        assert evaluate.load_split(tmp_path / "split.json") == split


class TestComparisonTable:
    def test_four_rows_two_decimals(self):
        table = render_comparison(
            {
                "conventional": ConfusionCounts(tp=89, fn=11, tn=97, fp=3),
                "vgg16": ConfusionCounts(tp=96, fn=4, tn=95, fp=5),
                "resnet50": ConfusionCounts(tp=92, fn=8, tn=98, fp=2),
                "alexnet": ConfusionCounts(tp=92, fn=8, tn=98, fp=2),
            }
        )
        lines = table.splitlines()
        assert len(lines) == 5
        assert lines[1].startswith("SVM")
        assert "89.00" in lines[1] and "97.00" in lines[1]
        assert lines[2].startswith("VGG16") and "96.00" in lines[2]

    def test_subset_renders_fewer_rows(self):
        table = render_comparison(
            {
                "conventional": ConfusionCounts(tp=1, fn=1, tn=1, fp=1),
                "alexnet": ConfusionCounts(tp=1, fn=1, tn=1, fp=1),
            }
        )
        assert len(table.splitlines()) == 3

    def test_undefined_rates_render(self):
        table = render_comparison({"conventional": ConfusionCounts(tn=3, fp=1)})
        assert "n/a" in table
