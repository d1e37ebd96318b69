"""
資料增強：轉換、預設流程與逐樣本種子
"""

import numpy as np
import pytest

from augment import (
    PRESETS,
    BrightnessAdditive,
    HorizontalFlip,
    RandomResizedCrop,
    Rotate,
    derive_sample_seed,
    preset_build,
)
from errors import ConfigError


@pytest.fixture
def image(rng):
    return rng.uniform(0, 1, (3, 16, 16))


class TestTransforms:
    def test_hflip_twice_is_identity(self, image):
        flip = HorizontalFlip(p=1.0)
        params = {"flip": True}
        np.testing.assert_array_equal(flip.apply(flip.apply(image, params), params), image)

    def test_rotate_zero_is_identity(self, image):
        np.testing.assert_array_equal(Rotate().apply(image, {"degrees": 0.0}), image)

    def test_brightness_additive(self):
        constant = np.full((1, 4, 4), 0.5)
        out = BrightnessAdditive().apply(constant, {"delta": 0.2})
        np.testing.assert_allclose(out, np.full((1, 4, 4), 0.7))

    def test_crop_fallback_when_impossible(self, rng):
        crop = RandomResizedCrop(scale=(0.9, 1.0), ratio=(20.0, 30.0), output_size=(8, 8))
        params = crop.sample(rng, (3, 16, 16))
        assert params["fallback"] is True
        assert crop.apply(np.zeros((3, 16, 16)), params).shape == (3, 8, 8)

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            HorizontalFlip().with_overrides({"probability": 1.0})


class TestPipeline:
    @pytest.mark.parametrize("name", PRESETS)
    def test_presets_produce_fixed_shape_in_range(self, name, image):
        out = preset_build(name, (12, 12)).apply_array(image, 99)
        assert out.shape == (3, 12, 12)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_same_seed_is_bitwise_identical(self, image):
        pipeline = preset_build("derm_pretrain", (16, 16))
        np.testing.assert_array_equal(pipeline.apply_array(image, 5), pipeline.apply_array(image, 5))

    def test_resize_only_pipeline(self, image):
        overrides = {"random_resized_crop": {"scale": [1.0, 1.0]}, "hflip": {"p": 0.0},
                     "vflip": {"p": 0.0}, "color_jitter": {"p": 0.0}, "grayscale": {"p": 0.0},
                     "gaussian_blur": {"p": 0.0}}
        pipeline = preset_build("derm_pretrain", (16, 16), overrides)
        np.testing.assert_allclose(pipeline.apply_array(image, 3), image, atol=1e-12)

    def test_override_of_missing_transform(self):
        with pytest.raises(ConfigError):
            preset_build("micle_partial", (16, 16), {"rotate": {"max_degrees": 5}})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_build("imagenet", (16, 16))

    def test_seed_independence(self):
        pipeline = preset_build("derm_pretrain", (16, 16))
        vectors = {pipeline.sample_params(seed, (3, 16, 16)) for seed in range(1000)}
        assert len(vectors) >= 990


class TestSampleSeed:
    def test_stable(self):
        assert derive_sample_seed(1, 2, "bag", 0, "simclr") == derive_sample_seed(1, 2, "bag", 0, "simclr")

    @pytest.mark.parametrize("changed", [
        (2, 2, "bag", 0, "simclr"),
        (1, 3, "bag", 0, "simclr"),
        (1, 2, "bag2", 0, "simclr"),
        (1, 2, "bag", 1, "simclr"),
        (1, 2, "bag", 0, "micle"),
    ])
    def test_every_component_matters(self, changed):
        assert derive_sample_seed(*changed) != derive_sample_seed(1, 2, "bag", 0, "simclr")
