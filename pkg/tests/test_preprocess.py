import numpy as np
import pytest

import fundus_he.preprocess as pp
from fundus_he.raster import RasterError, green_channel


CFG = pp.PreprocessConfig()


class TestClahe:
    def test_constant_stays_constant(self):
        img = np.full((64, 64), 90, dtype=np.uint8)
        out = pp.clahe(img, CFG)
        assert out.min() == out.max()

    def test_two_tone_ordering(self, rng):
        img = np.where(rng.random((64, 64)) > 0.5, 192, 64).astype(np.uint8)
        out = pp.clahe(img, CFG)
        assert out[img == 64].max() <= out[img == 192].min()

    def test_low_contrast_ramp_widens(self):
        img = np.tile(np.linspace(100, 130, 64).astype(np.uint8), (64, 1))
        out = pp.clahe(img, CFG)
        assert int(out.max()) - int(out.min()) > int(img.max()) - int(img.min())

    def test_tiles_must_fit(self):
        with pytest.raises(RasterError):
            pp.clahe(np.zeros((4, 4), dtype=np.uint8), CFG)

    def test_output_range(self, rng):
        img = rng.integers(0, 256, (80, 70), dtype=np.uint8)
        out = pp.clahe(img, CFG)
        assert out.dtype == np.uint8


class TestAdaptiveGamma:
    def test_balanced_edges_identity(self):
        # A clean 0|255 step weights both sides of the edge equally, putting
        # the gradient-weighted anchor exactly at 0.5, so gamma is 1.
        img = np.zeros((32, 32), dtype=np.uint8)
        img[:, 16:] = 255
        out = pp.adaptive_gamma(img, CFG)
        assert np.array_equal(out, img)

    def test_dark_image_brightens(self, rng):
        img = rng.integers(10, 70, (40, 40), dtype=np.uint8)
        out = pp.adaptive_gamma(img, CFG)
        assert out.mean() > img.mean()

    def test_monotone_mapping(self, rng):
        img = rng.integers(0, 256, (50, 50), dtype=np.uint8)
        out = pp.adaptive_gamma(img, CFG)
        flat_in, flat_out = img.ravel(), out.ravel()
        order = np.argsort(flat_in, kind="stable")
        assert (np.diff(flat_out[order].astype(int)) >= 0).all()

    def test_flat_image_uses_plain_mean(self):
        img = np.full((20, 20), 40, dtype=np.uint8)
        out = pp.adaptive_gamma(img, CFG)  # anchor 40/255 < 0.5 -> brighten
        assert out[0, 0] > 40

    def test_gamma_clamped(self):
        # Nearly-white edges push the raw gamma above the configured bound.
        img = np.full((32, 32), 250, dtype=np.uint8)
        img[:, :16] = 240
        out = pp.adaptive_gamma(img, CFG)
        lut_hi = 255.0 * (240 / 255.0) ** CFG.gamma_bounds[1]
        assert out[img == 240].min() >= int(lut_hi) - 1


class TestFuzzyUnsharp:
    def test_constant_unchanged(self):
        img = np.full((16, 16), 123, dtype=np.uint8)
        assert np.array_equal(pp.fuzzy_unsharp(img, CFG), img)

    def test_step_contrast_increases(self):
        height = int(2 * CFG.sharpen_threshold)
        img = np.full((20, 20), 100, dtype=np.uint8)
        img[:, 10:] = 100 + height
        out = pp.fuzzy_unsharp(img, CFG)
        step_in = int(img[:, 10].mean()) - int(img[:, 9].mean())
        step_out = float(out[:, 10].mean()) - float(out[:, 9].mean())
        assert step_out > step_in

    def test_small_noise_barely_amplified(self):
        cfg = pp.PreprocessConfig(sharpen_threshold=40.0)
        amplitude = int(cfg.sharpen_threshold / 10)
        img = np.full((11, 11), 60, dtype=np.uint8)
        img[5, 5] = 60 + amplitude
        out = pp.fuzzy_unsharp(img, cfg)
        assert out[5, 5] - 60 <= amplitude * (1 + cfg.sharpen_strength / 10)

    def test_zero_detail_untouched(self, rng):
        img = rng.integers(0, 256, (30, 30), dtype=np.uint8)
        out = pp.fuzzy_unsharp(img, CFG)
        local_mean = np.zeros_like(img, dtype=float)
        from scipy import ndimage

        local_mean = ndimage.uniform_filter(img.astype(float), size=3, mode="nearest")
        flat = np.abs(img.astype(float) - local_mean) < 1e-12
        assert np.array_equal(out[flat], img[flat])


class TestComposite:
    def test_constant_pipeline(self):
        img = np.full((64, 64, 3), 77, dtype=np.uint8)
        out = pp.preprocess(img, CFG)
        assert out.min() == out.max()

    def test_enhancement_increases_spread(self, fundus_image):
        out = pp.preprocess(fundus_image.rgb, CFG)
        assert out.std() >= green_channel(fundus_image.rgb).std()

    def test_deterministic(self, fundus_image):
        a = pp.preprocess(fundus_image.rgb, CFG)
        b = pp.preprocess(fundus_image.rgb, CFG)
        assert np.array_equal(a, b)

    def test_stages_preserve_range(self, rng):
        img = rng.integers(0, 256, (64, 64), dtype=np.uint8)
        for stage in (pp.clahe, pp.adaptive_gamma, pp.fuzzy_unsharp):
            out = stage(img, CFG)
            assert out.dtype == np.uint8 and out.shape == img.shape


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"clahe_tiles": 0},
            {"clahe_clip": 0.0},
            {"gamma_bounds": (2.0, 1.0)},
            {"sharpen_strength": 3.0},
            {"sharpen_threshold": 0.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            pp.PreprocessConfig(**kwargs)
