import numpy as np
import pytest

from oracles import best_sigma_b_oracle, sigma_b_oracle

from fundus_he.segmentation import (
    STATUS_CLIPPED,
    STATUS_COMPLETE,
    DegenerateWindowError,
    NoObjectError,
    SegmentConfig,
    adaptive_thresholds,
    binarize_min,
    border_flags,
    expand_window,
    multilevel_otsu,
    prune_objects,
    segment_window,
    segment_window_states,
)


def hist_from_pairs(pairs):
    hist = np.zeros(256)
    for level, count in pairs:
        hist[level] = count
    return hist


THREE_CLUSTERS = hist_from_pairs([(30, 100), (128, 100), (220, 100)])


class TestMultilevelOtsu:
    def test_two_point_closed_form(self):
        hist = hist_from_pairs([(10, 50), (200, 50)])
        result = multilevel_otsu(hist, 2)
        assert result.thresholds == (10,)
        assert result.sigma_b2 == pytest.approx(9025.0, abs=1e-9)
        assert result.sigma_t2 == pytest.approx(9025.0, abs=1e-9)
        assert result.eta == pytest.approx(1.0, abs=1e-12)

    def test_uniform_8_levels_matches_bruteforce(self):
        hist = np.zeros(256)
        hist[: 8] = 10
        result = multilevel_otsu(hist, 2)
        assert result.sigma_b2 == pytest.approx(best_sigma_b_oracle(hist, 2, 8), abs=1e-9)

    def test_constant_histogram_errors(self):
        with pytest.raises(DegenerateWindowError):
            multilevel_otsu(hist_from_pairs([(77, 123)]), 2)

    def test_too_few_bins_errors(self):
        with pytest.raises(ValueError):
            multilevel_otsu(hist_from_pairs([(10, 5), (20, 5)]), 3)

    @pytest.mark.parametrize("regions", [2, 3, 4])
    def test_matches_bruteforce_random(self, rng, regions):
        for _ in range(25):
            hist = np.zeros(256)
            hist[:16] = rng.integers(0, 30, 16)
            if np.count_nonzero(hist) < regions:
                continue
            result = multilevel_otsu(hist, regions)
            expected = best_sigma_b_oracle(hist, regions, 16)
            assert result.sigma_b2 == pytest.approx(expected, abs=1e-9)
            # the returned tuple reproduces the claimed value
            assert sigma_b_oracle(hist, result.thresholds) == pytest.approx(
                result.sigma_b2, abs=1e-9
            )

    def test_lexicographic_tie(self):
        # thresholds 10..19 all tie; the smallest wins
        hist = hist_from_pairs([(10, 50), (20, 50)])
        assert multilevel_otsu(hist, 2).thresholds == (10,)

    def test_eta_monotone_in_regions(self, rng):
        for _ in range(10):
            hist = np.zeros(256)
            hist[rng.choice(256, size=10, replace=False)] = rng.integers(1, 40, 10)
            previous = 0.0
            for regions in range(2, 7):
                eta = multilevel_otsu(hist, regions).eta
                assert eta >= previous - 1e-9
                previous = eta

    def test_dp_matches_exhaustive_path(self, rng):
        # regions >= 4 runs the DP; cross-check against the R=3 exhaustive
        # path by adding a level that earns its own region.
        hist = np.zeros(256)
        hist[[5, 60, 130, 210]] = (40, 30, 20, 10)
        result = multilevel_otsu(hist, 4)
        assert result.thresholds == (5, 60, 130)
        assert result.eta == pytest.approx(1.0, abs=1e-9)


class TestAdaptiveThresholds:
    def test_two_point_stops_immediately(self):
        result = adaptive_thresholds(hist_from_pairs([(10, 50), (200, 50)]))
        assert len(result.thresholds) == 1 and result.eta >= 0.8

    def test_three_clusters_need_three_regions(self):
        eta2 = multilevel_otsu(THREE_CLUSTERS, 2).eta
        result = adaptive_thresholds(THREE_CLUSTERS)
        assert eta2 < 0.8
        assert len(result.thresholds) == 2 and result.eta >= 0.8
        # both values against the exhaustive oracle
        sigma_t2 = result.sigma_t2
        assert eta2 == pytest.approx(best_sigma_b_oracle(THREE_CLUSTERS, 2) / sigma_t2, abs=1e-9)
        assert result.eta == pytest.approx(
            best_sigma_b_oracle(THREE_CLUSTERS, 3) / sigma_t2, abs=1e-9
        )

    def test_region_count_hard_bound(self):
        hist = np.ones(256)
        strict = SegmentConfig(eta_stop=0.9999999)
        result = adaptive_thresholds(hist, strict)
        assert len(result.thresholds) + 1 == strict.max_regions

    def test_terminates_on_uniform(self):
        result = adaptive_thresholds(np.ones(256))
        assert result.eta >= 0.8 and len(result.thresholds) + 1 <= 20

    def test_stops_when_bins_run_out(self):
        hist = hist_from_pairs([(0, 1), (100, 1), (255, 1000)])
        result = adaptive_thresholds(hist)
        assert len(result.thresholds) + 1 <= 3


class TestBinarizeMin:
    def test_spec_matrix(self):
        window = np.array([[5, 100], [200, 5]], dtype=np.uint8)
        assert np.array_equal(
            binarize_min(window, (50, 120)), np.array([[True, False], [False, True]])
        )

    def test_threshold_above_max(self):
        window = np.array([[5, 10]], dtype=np.uint8)
        assert binarize_min(window, (10,)).all()

    def test_threshold_below_min(self):
        window = np.array([[5, 10]], dtype=np.uint8)
        assert not binarize_min(window, (4,)).any()

    def test_empty_vector_errors(self):
        with pytest.raises(ValueError):
            binarize_min(np.zeros((2, 2), dtype=np.uint8), ())


class TestPruneObjects:
    def test_nearest_of_two(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[0, 0] = True            # d = sqrt(8)
        mask[3, 2] = True            # pixel (x=2, y=3): d = 1
        kept, comp = prune_objects(mask)
        assert comp.pixels.tolist() == [[2, 3]]
        assert kept.sum() == 1 and kept[3, 2]

    def test_smallest_discarded_before_distance(self):
        mask = np.zeros((30, 30), dtype=bool)
        mask[0:10, 0:10] = True        # area 100, far corner
        mask[0:5, 20:30] = True        # area 50, far corner
        mask[14:15, 14:24] = True      # area 10, crosses the center
        _, comp = prune_objects(mask)
        assert comp.area in (100, 50)  # the central 10-pixel object lost anyway

    def test_single_object_kept(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:4, 2:4] = True
        kept, comp = prune_objects(mask)
        assert comp.area == 4 and np.array_equal(kept, mask)

    def test_empty_errors(self):
        with pytest.raises(NoObjectError):
            prune_objects(np.zeros((4, 4), dtype=bool))

    def test_kept_among_two_largest(self, rng):
        for _ in range(10):
            mask = rng.random((20, 20)) > 0.7
            if not mask.any():
                continue
            from fundus_he.raster import connected_components

            comps = sorted(connected_components(mask), key=lambda c: -c.area)
            _, kept = prune_objects(mask)
            top2 = {c.area for c in comps[:2]}
            assert kept.area in top2


class TestBorderFlags:
    def test_interior(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[2:4, 2:4] = True
        assert border_flags(mask) == (0, 0, 0, 0)

    def test_left_only(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[2:4, 0] = True
        assert border_flags(mask) == (1, 0, 0, 0)

    def test_full_width(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[3, :] = True
        assert border_flags(mask) == (1, 0, 1, 0)


class TestExpandWindow:
    def setup_method(self):
        self.search = np.ones((100, 100), dtype=bool)

    def test_left_step(self):
        bbox, ok = expand_window((50, 50, 60, 60), (1, 0, 0, 0), self.search)
        assert ok and bbox == (45, 50, 60, 60)

    def test_right_bottom_step(self):
        bbox, ok = expand_window((50, 50, 60, 60), (0, 0, 1, 1), self.search)
        assert ok and bbox == (50, 50, 70, 70)

    def test_blocked_at_search_boundary(self):
        search = np.zeros((100, 100), dtype=bool)
        search[:, 50:] = True
        bbox, ok = expand_window((50, 50, 60, 60), (1, 0, 0, 0), search)
        assert not ok and bbox == (50, 50, 60, 60)

    def test_blocked_at_image_edge(self):
        bbox, ok = expand_window((0, 50, 10, 60), (1, 0, 0, 0), self.search)
        assert not ok and bbox == (0, 50, 10, 60)

    def test_clip_to_image_bounds(self):
        bbox, ok = expand_window((3, 50, 10, 60), (1, 0, 0, 0), self.search)
        assert ok and bbox == (0, 50, 10, 60)

    def test_requires_a_flag(self):
        with pytest.raises(ValueError):
            expand_window((10, 10, 20, 20), (0, 0, 0, 0), self.search)


def bright_field_with_disk(size, center, radius, field=200, depth=60):
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.full((size, size), field, dtype=np.uint8)
    disk = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius * radius
    img[disk] = depth
    return img, disk


class TestSegmentWindow:
    def test_interior_disk_complete_first_iteration(self):
        img, disk = bright_field_with_disk(120, (60, 60), 15)
        search = np.ones_like(disk)
        seed = (30, 30, 90, 90)
        seg, states = segment_window_states(img, seed, search)
        assert seg.status == STATUS_COMPLETE
        assert seg.iterations == 1
        got = seg.object.mask(img.shape)
        iou = (got & disk).sum() / (got | disk).sum()
        assert iou >= 0.9

    def test_large_disk_grows_window(self):
        # Matched-filter seeds sit on the blob's response ring, so a seed
        # window overlaps the boundary; from there the window must grow
        # until the whole 80 px disk fits.
        img, disk = bright_field_with_disk(200, (100, 100), 40)
        search = np.ones_like(disk)
        seed = (50, 90, 70, 110)  # 21 px window straddling the left edge
        seg = segment_window(img, seed, search)
        assert seg.status == STATUS_COMPLETE
        v1, v2, v3, v4 = seg.window
        assert v1 <= 60 and v2 <= 60 and v3 >= 140 and v4 >= 140
        got = seg.object.mask(img.shape)
        assert (disk & ~got).sum() == 0  # the whole disk was captured
        iou = (got & disk).sum() / (got | disk).sum()
        assert iou >= 0.95

    def test_vessel_leaving_search_space_clips(self):
        size = 150
        img = np.full((size, size), 200, dtype=np.uint8)
        img[73:76, :] = 60  # long horizontal dark line crossing everything
        search = np.zeros((size, size), dtype=bool)
        search[:, 30:120] = True
        seg = segment_window(img, (70, 65, 90, 85), search)
        assert seg.status == STATUS_CLIPPED

    def test_constant_window_discarded(self):
        img = np.full((60, 60), 99, dtype=np.uint8)
        with pytest.raises(DegenerateWindowError):
            segment_window(img, (10, 10, 40, 40), np.ones_like(img, dtype=bool))

    def test_seed_outside_search_space(self):
        img, _ = bright_field_with_disk(80, (40, 40), 10)
        search = np.zeros((80, 80), dtype=bool)
        with pytest.raises(ValueError):
            segment_window(img, (10, 10, 30, 30), search)

    def test_object_within_window(self):
        img, _ = bright_field_with_disk(120, (70, 55), 22)
        seg = segment_window(img, (42, 45, 62, 65), np.ones((120, 120), dtype=bool))
        v1, v2, v3, v4 = seg.window
        assert (seg.object.pixels[:, 0] >= v1).all() and (seg.object.pixels[:, 0] <= v3).all()
        assert (seg.object.pixels[:, 1] >= v2).all() and (seg.object.pixels[:, 1] <= v4).all()

    def test_iteration_cap_status(self):
        img, _ = bright_field_with_disk(200, (100, 100), 40)
        cfg = SegmentConfig(max_iter=2)
        seg = segment_window(img, (50, 90, 70, 110), np.ones_like(img, dtype=bool), cfg)
        assert seg.status == "iteration_cap"
        assert seg.iterations == 2
