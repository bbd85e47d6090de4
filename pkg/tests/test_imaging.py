"""Colour conversion, resizing, degradations, Sobel, geometry, and file I/O."""

import numpy as np
import pytest
from PIL import Image

from epsr import imaging as I
from epsr import tensor as T
from epsr.tensor import ConfigError


def checker(h, w, a=40, b=200):
    """High-contrast deterministic test image."""
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.where((yy // 4 + xx // 4) % 2 == 0, a, b).astype(np.uint8)
    return I.ImageRGB(np.stack([img, 255 - img, np.roll(img, 3, 0)], axis=2))


def smooth_image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.uniform(40, 215, (h // 8 + 2, w // 8 + 2, 3))
    up = I.imresize(base, h, w)
    return I.image_from_float(up)


class TestYcbcr:
    def test_black_is_16(self):
        img = I.ImageRGB(np.zeros((2, 2, 3), np.uint8))
        np.testing.assert_allclose(I.rgb_to_ycbcr_y(img), 16.0)

    def test_white_is_235(self):
        img = I.ImageRGB(np.full((2, 2, 3), 255, np.uint8))
        np.testing.assert_allclose(I.rgb_to_ycbcr_y(img), 235.0, atol=1e-3)

    def test_mid_gray(self):
        # 16 + 219*128/255 with BT.601 coefficients summing to exactly 219.
        img = I.ImageRGB(np.full((1, 1, 3), 128, np.uint8))
        np.testing.assert_allclose(I.rgb_to_ycbcr_y(img), 125.92941176470588,
                                   rtol=1e-9)


class TestResize:
    def test_identity_resize_unchanged(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 255, (9, 11, 3))
        np.testing.assert_array_equal(I.imresize(x, 9, 11), x)

    def test_constant_partition_of_unity(self):
        c = np.full((24, 30, 3), 77.25)
        for dims in [(12, 15), (8, 10), (48, 60), (17, 23)]:
            out = I.imresize(c, *dims)
            np.testing.assert_allclose(out, 77.25, atol=1e-4)

    def test_halving_weights_match_hand_derivation(self):
        # For in=4 -> out=2 at scale 1/2 the antialiased kernel contributions
        # per source pixel are exact dyadic rationals; derived by expanding
        # 0.5*cubic(0.5*(u - idx)) at u = 1.5 and normalising.
        weights, indices = I.resize_weights(4, 2, 0.5)
        combined = np.zeros((2, 4))
        for row in range(2):
            for w, idx in zip(weights[row], indices[row]):
                combined[row, idx] += w
        np.testing.assert_allclose(
            combined[0], [0.546875, 0.3984375, 0.1015625, -0.046875], atol=1e-12)
        np.testing.assert_allclose(combined[0], combined[1][::-1], atol=1e-12)

    def test_weight_rows_sum_to_one(self):
        for args in [(48, 16, 1 / 3), (16, 48, 3.0), (50, 25, 0.5), (25, 100, 4.0)]:
            weights, _ = I.resize_weights(*args)
            np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)

    def test_interior_matches_pil_downscale(self):
        # PIL's float bicubic uses the same a=-0.5 kernel with antialiasing;
        # only the border handling differs, so interiors must agree.
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 255, (64, 64)).astype(np.float32)
        pil = np.asarray(Image.fromarray(img, mode="F")
                         .resize((16, 16), Image.Resampling.BICUBIC), np.float64)
        mine = I.imresize(img.astype(np.float64), 16, 16)
        assert np.abs(pil - mine)[2:-2, 2:-2].max() < 1e-4

    def test_interior_matches_pil_upscale(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 255, (32, 32)).astype(np.float32)
        pil = np.asarray(Image.fromarray(img, mode="F")
                         .resize((64, 64), Image.Resampling.BICUBIC), np.float64)
        mine = I.imresize(img.astype(np.float64), 64, 64)
        assert np.abs(pil - mine)[4:-4, 4:-4].max() < 1e-4

    def test_bicubic_resize_accepts_images(self):
        img = checker(16, 12)
        out = I.bicubic_resize(img, 6, 8)
        assert out.shape == (8, 6, 3)


class TestGaussianBlur:
    def test_kernel_normalised(self):
        k = I.gaussian_kernel(7, 1.6)
        assert abs(k.sum() - 1.0) < 1e-9

    def test_kernel_center_weight(self):
        # e^0 / sum of e^(-(x^2+y^2)/(2*1.6^2)) over the 7x7 grid.
        k = I.gaussian_kernel(7, 1.6)
        np.testing.assert_allclose(k[3, 3], 0.06555563052616416, rtol=1e-9)

    def test_constant_image_unchanged(self):
        c = np.full((12, 12, 3), 99.5)
        np.testing.assert_allclose(I.gaussian_blur(c), 99.5, rtol=1e-12)

    def test_impulse_recovers_kernel(self):
        x = np.zeros((15, 15))
        x[7, 7] = 1.0
        out = I.gaussian_blur(x, 7, 1.6)
        np.testing.assert_allclose(out[4:11, 4:11], I.gaussian_kernel(7, 1.6),
                                   atol=1e-12)

    def test_mean_preserved_with_reflective_borders(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 255, (20, 24, 3))
        out = I.gaussian_blur(x)
        assert abs(out.mean() - x.mean()) < 1e-3 * 255

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            I.gaussian_blur(np.zeros((8, 8)), kernel_size=6)


class TestNoise:
    def test_sigma_zero_identity(self):
        x = np.full((8, 8, 3), 120.0)
        np.testing.assert_array_equal(I.add_gaussian_noise(x, 0.0, 1), x)

    def test_same_seed_identical(self):
        x = np.full((16, 16, 3), 128.0)
        a = I.add_gaussian_noise(x, 30.0, 99)
        b = I.add_gaussian_noise(x, 30.0, 99)
        np.testing.assert_array_equal(a, b)

    def test_clipping_to_valid_range(self):
        x = np.full((32, 32, 3), 250.0)
        out = I.add_gaussian_noise(x, 30.0, 5)
        assert out.max() <= 255.0 and out.min() >= 0.0


class TestDegrade:
    def test_bi_x2_shape(self):
        lr = I.degrade(checker(48, 48), I.DegradationSpec.bi(2))
        assert (lr.height, lr.width) == (24, 24)

    def test_bd_dims_floor_after_crop(self):
        lr = I.degrade(checker(50, 52), I.DegradationSpec.bd())
        assert (lr.height, lr.width) == (16, 17)

    def test_dn_deterministic_bytes(self):
        img = checker(30, 30)
        a = I.degrade(img, I.DegradationSpec.dn(), seed=7)
        b = I.degrade(img, I.DegradationSpec.dn(), seed=7)
        np.testing.assert_array_equal(a.pixels, b.pixels)
        c = I.degrade(img, I.DegradationSpec.dn(), seed=8)
        assert np.any(a.pixels != c.pixels)

    def test_bd_decimate_mode(self):
        lr = I.degrade(checker(30, 30), I.DegradationSpec.bd(downsample="decimate"))
        assert (lr.height, lr.width) == (10, 10)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            I.DegradationSpec.bi(5)
        with pytest.raises(ConfigError):
            I.DegradationSpec(tag="bd", scale=2)
        with pytest.raises(ConfigError):
            I.DegradationSpec(tag="xx", scale=2)

    def test_too_small_image_rejected(self):
        tiny = I.ImageRGB(np.zeros((2, 2, 3), np.uint8))
        with pytest.raises(ConfigError):
            I.degrade(tiny, I.DegradationSpec.bi(4))


class TestSobel:
    def test_constant_image_zero_interior(self):
        x = T.Tensor(np.full((1, 3, 8, 8), 0.5, np.float32))
        out = I.sobel_gradients(x)
        assert out.shape == (1, 6, 8, 8)
        np.testing.assert_allclose(out.data[:, :, 1:-1, 1:-1], 0.0, atol=1e-6)

    def test_vertical_step_response_is_four(self):
        img = np.zeros((1, 3, 9, 10), np.float64)
        img[:, :, :, 5:] = 1.0
        out = I.sobel_gradients(T.Tensor(img)).data
        # Horizontal kernel [[-1,0,1],[-2,0,2],[-1,0,1]] summed over the step.
        np.testing.assert_allclose(out[0, 0, 1:-1, 4], 4.0)
        np.testing.assert_allclose(out[0, 0, 1:-1, 5], 4.0)
        np.testing.assert_allclose(out[0, 0, 1:-1, 2], 0.0, atol=1e-12)

    def test_matches_manual_correlation(self):
        rng = np.random.default_rng(4)
        img = rng.standard_normal((1, 3, 6, 6))
        out = I.sobel_gradients(T.Tensor(img)).data
        kx = np.array([[-1.0, 0, 1], [-2, 0, 2], [-1, 0, 1]])
        for c in range(3):
            padded = np.zeros((8, 8))
            padded[1:-1, 1:-1] = img[0, c]
            ref_h = np.zeros((6, 6))
            ref_v = np.zeros((6, 6))
            for y in range(6):
                for x in range(6):
                    ref_h[y, x] = (padded[y:y + 3, x:x + 3] * kx).sum()
                    ref_v[y, x] = (padded[y:y + 3, x:x + 3] * kx.T).sum()
            np.testing.assert_allclose(out[0, c], ref_h, atol=1e-6)
            np.testing.assert_allclose(out[0, 3 + c], ref_v, atol=1e-6)

    def test_linear_ramp_constant_interior(self):
        xx = np.tile(np.arange(10, dtype=np.float64), (10, 1))
        img = np.stack([xx] * 3)[None]
        out = I.sobel_gradients(T.Tensor(img)).data
        interior = out[0, 0, 1:-1, 1:-1]
        assert np.allclose(interior, interior[0, 0])


class TestDihedral:
    def test_id0_is_identity(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((5, 7, 3))
        np.testing.assert_array_equal(I.apply_dihedral(x, 0), x)

    def test_inverse_roundtrip_all_eight(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 6, 3))
        for tid in range(8):
            back = I.invert_dihedral(I.apply_dihedral(x, tid), tid)
            np.testing.assert_array_equal(back, x)

    def test_rotation_four_times_identity(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((5, 5))
        out = x
        for _ in range(4):
            out = I.apply_dihedral(out, 1)
        np.testing.assert_array_equal(out, x)

    def test_transforms_are_distinct(self):
        x = np.arange(16, dtype=np.float64).reshape(4, 4)
        seen = {I.apply_dihedral(x, tid).tobytes() for tid in range(8)}
        assert len(seen) == 8

    def test_augment_applies_same_transform(self):
        rng = np.random.default_rng(8)
        hr = rng.standard_normal((8, 8, 3))
        lr = hr[::2, ::2]
        hr2, lr2 = I.augment(hr, lr, 3)
        np.testing.assert_array_equal(hr2, I.apply_dihedral(hr, 3))
        np.testing.assert_array_equal(lr2, I.apply_dihedral(lr, 3))

    def test_bad_id_rejected(self):
        with pytest.raises(ConfigError):
            I.apply_dihedral(np.zeros((2, 2)), 8)


class TestPngIO:
    def test_round_trip_lossless(self, tmp_path):
        img = checker(12, 9)
        path = tmp_path / "img.png"
        I.save_png(img, path)
        loaded = I.load_png(path)
        np.testing.assert_array_equal(loaded.pixels, img.pixels)

    def test_grayscale_expanded_by_replication(self, tmp_path):
        gray = np.arange(64, dtype=np.uint8).reshape(8, 8)
        path = tmp_path / "gray.png"
        Image.fromarray(gray, mode="L").save(path)
        loaded = I.load_png(path)
        for c in range(3):
            np.testing.assert_array_equal(loaded.pixels[:, :, c], gray)

    def test_16bit_rejected(self, tmp_path):
        deep = (np.arange(64, dtype=np.uint16) * 512).reshape(8, 8)
        path = tmp_path / "deep.png"
        Image.fromarray(deep).save(path)
        with pytest.raises(I.ImageFormatError):
            I.load_png(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            I.load_png(tmp_path / "absent.png")

    def test_quantize_half_up(self):
        arr = np.array([[[0.4, 0.5, 254.5]]])
        np.testing.assert_array_equal(I.quantize_u8(arr), [[[0, 1, 255]]])
        np.testing.assert_array_equal(I.quantize_u8(np.array([[[-3.0, 260.0, 12.2]]])),
                                      [[[0, 255, 12]]])


class TestManifest:
    def test_round_trip_with_pairs(self, tmp_path):
        m = tmp_path / "list.txt"
        I.write_manifest(m, [("a.png", None), ("b.png", "lr/b.png")])
        entries = I.read_manifest(m)
        assert entries[0][0] == tmp_path / "a.png"
        assert entries[0][1] is None
        assert entries[1][1] == tmp_path / "lr/b.png"

    def test_comments_and_blanks_skipped(self, tmp_path):
        m = tmp_path / "list.txt"
        m.write_text("# header\n\nx.png\n")
        entries = I.read_manifest(m)
        assert len(entries) == 1
