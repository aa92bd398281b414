import numpy as np
import pytest

from exposure.images import (
    FeatureTriple,
    ImageError,
    LinearImage,
    crop_patches,
    downsample,
    global_features,
    hsl_saturation_map,
    linear_to_srgb,
    load_image,
    luminance_map,
    save_image,
    srgb_to_linear,
)


def rand_image(rng, h=16, w=16):
    return LinearImage(rng.uniform(0.0, 1.0, (h, w, 3)))


class TestLinearImage:
    def test_shape_and_dims(self):
        img = LinearImage(np.zeros((4, 6, 3)))
        assert img.height == 4 and img.width == 6

    def test_rejects_bad_shape(self):
        with pytest.raises(Exception):
            LinearImage(np.zeros((4, 6)))

    def test_rejects_non_finite(self):
        data = np.zeros((2, 2, 3))
        data[0, 0, 0] = np.nan
        with pytest.raises(Exception):
            LinearImage(data)


class TestSrgb:
    def test_roundtrip(self):
        x = np.linspace(0.0, 1.0, 257)
        assert np.allclose(srgb_to_linear(linear_to_srgb(x)), x, atol=1e-12)

    def test_known_value(self):
        # linear value of 8-bit sRGB 128, via the official EOTF
        s = 128 / 255
        expect = ((s + 0.055) / 1.055) ** 2.4
        assert np.isclose(srgb_to_linear(s), expect)
        assert np.isclose(float(srgb_to_linear(np.array([128 / 255]))[0]), 0.2158, atol=1e-3)

    def test_linear_segment(self):
        assert np.isclose(srgb_to_linear(0.04), 0.04 / 12.92)
        assert np.isclose(linear_to_srgb(0.003), 0.003 * 12.92)

    def test_monotone(self):
        x = np.linspace(0, 1, 1001)
        assert np.all(np.diff(srgb_to_linear(x)) > 0)
        assert np.all(np.diff(linear_to_srgb(x)) > 0)


class TestIO:
    def test_ppm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rand_image(rng, 8, 5)
        path = tmp_path / "x.ppm"
        save_image(img, path)
        back = load_image(path)
        # 8-bit quantization in sRGB space; bound the linear error
        assert back.data.shape == img.data.shape
        assert np.abs(linear_to_srgb(back.data) - linear_to_srgb(img.data)).max() <= 0.5 / 255 + 1e-9

    def test_pfm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rand_image(rng, 7, 9)
        path = tmp_path / "x.pfm"
        save_image(img, path)
        back = load_image(path)
        assert np.abs(back.data - img.data).max() < 1e-6

    def test_ppm_comment_header(self, tmp_path):
        payload = bytes(27)
        raw = b"P6\n# a comment\n3 3\n255\n" + payload
        path = tmp_path / "c.ppm"
        path.write_bytes(raw)
        img = load_image(path)
        assert img.width == 3 and img.height == 3
        assert np.all(img.data == 0)

    def test_truncated_ppm_rejected(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
        with pytest.raises(ImageError):
            load_image(path)

    def test_unknown_magic_rejected(self, tmp_path):
        path = tmp_path / "u.ppm"
        path.write_bytes(b"GIF89a....")
        with pytest.raises(ImageError):
            load_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageError):
            load_image(tmp_path / "nope.ppm")

    def test_save_clamps(self, tmp_path):
        img = LinearImage(np.full((2, 2, 3), 1.7))
        path = tmp_path / "c.pfm"
        save_image(img, path)
        assert np.all(load_image(path).data == 1.0)


class TestDownsample:
    def test_mean_preserving(self):
        rng = np.random.default_rng(2)
        img = rand_image(rng, 128, 96)
        small = downsample(img, 64)
        assert small.data.shape == (64, 64, 3)
        # box averaging with exact fractional overlap preserves the mean
        assert np.allclose(small.data.mean(axis=(0, 1)), img.data.mean(axis=(0, 1)), atol=1e-12)

    def test_constant_invariant(self):
        img = LinearImage(np.full((100, 70, 3), 0.37))
        assert np.allclose(downsample(img, 64).data, 0.37, atol=1e-12)

    def test_integer_factor_is_block_mean(self):
        rng = np.random.default_rng(3)
        img = rand_image(rng, 8, 8)
        small = downsample(img, 4)
        blocks = img.data.reshape(4, 2, 4, 2, 3).mean(axis=(1, 3))
        assert np.allclose(small.data, blocks, atol=1e-12)

    def test_noop_size(self):
        rng = np.random.default_rng(4)
        img = rand_image(rng, 64, 64)
        assert np.allclose(downsample(img, 64).data, img.data, atol=1e-12)


class TestFeatures:
    def test_luminance_weights(self):
        data = np.zeros((1, 1, 3))
        data[0, 0] = [1.0, 0.0, 0.0]
        assert np.isclose(luminance_map(data)[0, 0], 0.27)
        data[0, 0] = [0.0, 1.0, 0.0]
        assert np.isclose(luminance_map(data)[0, 0], 0.67)
        data[0, 0] = [0.0, 0.0, 1.0]
        assert np.isclose(luminance_map(data)[0, 0], 0.06)

    def test_gray_has_zero_saturation(self):
        data = np.full((3, 3, 3), 0.4)
        assert np.all(hsl_saturation_map(data) == 0.0)

    def test_primary_has_full_saturation(self):
        data = np.zeros((1, 1, 3))
        data[0, 0] = [1.0, 0.0, 0.0]
        assert np.isclose(hsl_saturation_map(data)[0, 0], 1.0)

    def test_hsl_saturation_formula(self):
        data = np.array([[[0.6, 0.3, 0.2]]])
        mx, mn = 0.6, 0.2
        expect = (mx - mn) / (1.0 - abs(mx + mn - 1.0))
        assert np.isclose(hsl_saturation_map(data)[0, 0], expect)

    def test_global_features_constant_image(self):
        img = LinearImage(np.full((8, 8, 3), 0.5))
        f = global_features(img)
        assert np.isclose(f.luminance, 0.5)
        assert np.isclose(f.contrast, 0.0)
        assert np.isclose(f.saturation, 0.0)

    def test_contrast_is_twice_variance(self):
        rng = np.random.default_rng(5)
        img = rand_image(rng, 16, 16)
        lum = luminance_map(img.data)
        assert np.isclose(global_features(img).contrast, 2.0 * lum.var())

    def test_features_clip_out_of_range(self):
        img = LinearImage(np.full((4, 4, 3), 3.0))
        f = global_features(img)
        assert np.isclose(f.luminance, 1.0)
        assert np.isclose(f.contrast, 0.0)

    def test_feature_triple_array(self):
        t = FeatureTriple(0.1, 0.2, 0.3)
        assert np.allclose(t.as_array(), [0.1, 0.2, 0.3])


class TestCrops:
    def test_count_and_side(self):
        rng = np.random.default_rng(6)
        img = rand_image(rng, 40, 30)
        patches = crop_patches(img, 16, np.random.default_rng(0))
        assert len(patches) == 16
        assert all(p.data.shape == (15, 15, 3) for p in patches)

    def test_seeded_reproducibility(self):
        rng = np.random.default_rng(7)
        img = rand_image(rng, 40, 30)
        a = crop_patches(img, 8, np.random.default_rng(5))
        b = crop_patches(img, 8, np.random.default_rng(5))
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))

    def test_crops_are_subregions(self):
        img = LinearImage(np.arange(2700, dtype=np.float64).reshape(30, 30, 3) / 2700)
        for p in crop_patches(img, 4, np.random.default_rng(1)):
            assert p.data.min() >= img.data.min()
            assert p.data.max() <= img.data.max()
