"""Region preprocessing: denoise, contrast equalization, binarization."""

import numpy as np
import pytest

from broadsheet import (
    ImageTooSmall,
    PreprocessConfig,
    adaptive_mean_threshold,
    clahe,
    median_denoise,
    preprocess,
)


def _noise_image(rng, h=64, w=64):
    return rng.integers(0, 256, (h, w), dtype=np.uint8)


class TestMedianDenoise:
    def test_constant_image_unchanged(self):
        img = np.full((40, 60), 120, np.uint8)
        assert np.array_equal(median_denoise(img), img)

    def test_isolated_salt_pixel_removed(self):
        img = np.full((21, 21), 50, np.uint8)
        img[10, 10] = 255
        out = median_denoise(img)
        assert out[10, 10] == 50

    def test_shape_and_dtype_preserved(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            img = _noise_image(rng, int(rng.integers(8, 40)), int(rng.integers(8, 40)))
            out = median_denoise(img)
            assert out.shape == img.shape and out.dtype == np.uint8


class TestClahe:
    def test_shape_and_dtype_preserved(self):
        rng = np.random.default_rng(5)
        img = _noise_image(rng, 48, 80)
        out = clahe(img)
        assert out.shape == img.shape and out.dtype == np.uint8

    def test_constant_image_stays_constant(self):
        img = np.full((64, 64), 120, np.uint8)
        assert len(np.unique(clahe(img))) == 1

    def test_low_contrast_gradient_stretched(self):
        grad = np.tile(np.linspace(100, 140, 64).astype(np.uint8), (64, 1))
        out = clahe(grad)
        assert int(out.max()) - int(out.min()) > int(grad.max()) - int(grad.min())

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        img = _noise_image(rng)
        assert np.array_equal(clahe(img), clahe(img.copy()))


class TestAdaptiveMeanThreshold:
    def test_constant_image_all_white(self):
        img = np.full((64, 64), 120, np.uint8)
        assert np.array_equal(adaptive_mean_threshold(img), np.full_like(img, 255))

    def test_output_is_binary(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            out = adaptive_mean_threshold(_noise_image(rng))
            assert set(np.unique(out)) <= {0, 255}

    def test_dark_stripe_goes_to_ink(self):
        img = np.full((64, 64), 220, np.uint8)
        img[:, 30:34] = 20
        out = adaptive_mean_threshold(img, window=31, offset=10.0)
        assert np.all(out[:, 31:33] == 0)
        assert np.all(out[:, :10] == 255)

    def test_image_smaller_than_window_raises(self):
        with pytest.raises(ImageTooSmall):
            adaptive_mean_threshold(np.zeros((20, 64), np.uint8), window=31)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            adaptive_mean_threshold(np.zeros((64, 64), np.uint8), window=30)


class TestPreprocess:
    def test_output_binary_and_shape_preserved(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            img = _noise_image(rng, 70, 50)
            out = preprocess(img)
            assert out.shape == img.shape
            assert set(np.unique(out)) <= {0, 255}

    def test_too_small_for_adaptive_window_raises(self):
        with pytest.raises(ImageTooSmall):
            preprocess(np.zeros((16, 100), np.uint8))

    def test_config_window_respected(self):
        img = np.full((24, 24), 120, np.uint8)
        cfg = PreprocessConfig(adaptive_window=15)
        assert preprocess(img, cfg).shape == img.shape

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            PreprocessConfig(adaptive_window=4)
        with pytest.raises(ValueError):
            PreprocessConfig(clahe_clip_limit=0.5)
