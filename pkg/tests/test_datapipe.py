"""Loading, splitting, rotation, gamma, flips, and the 108x expansion."""

import numpy as np
import pytest
from PIL import Image

from edgenet.datapipe import (
    AugmentPlan,
    Sample,
    expand,
    flip,
    gamma_correct,
    load_dataset,
    rotate_center_crop,
    split_halves,
    write_samples,
)
from edgenet.errors import ConfigError, DataError


def make_sample(h=32, w=48, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.random((3, h, w)).astype(np.float32)
    gt = (rng.random((h, w)) < 0.2).astype(np.float32)
    return Sample(image, gt, "src")


class TestSplitHalves:
    def test_even_width(self):
        left, right = split_halves(make_sample(w=1280, h=8))
        assert left.image.shape[2] == 640 and right.image.shape[2] == 640

    def test_odd_width_floor_split(self):
        left, right = split_halves(make_sample(w=7))
        assert left.image.shape[2] == 3 and right.image.shape[2] == 4

    def test_pixels_preserved(self):
        s = make_sample()
        left, right = split_halves(s)
        np.testing.assert_array_equal(left.image, s.image[:, :, :24])
        np.testing.assert_array_equal(right.gt, s.gt[:, 24:])


class TestRotateCenterCrop:
    def test_zero_angle_is_pure_crop(self):
        s = make_sample(h=20, w=20)
        out = rotate_center_crop(s, 0.0, 12)
        np.testing.assert_allclose(out.image, s.image[:, 4:16, 4:16], atol=1e-6)
        np.testing.assert_array_equal(out.gt, s.gt[4:16, 4:16])

    def test_180_degrees_equals_double_flip(self):
        s = make_sample(h=24, w=24, seed=1)
        rot = rotate_center_crop(s, 180.0, 16)
        crop = rotate_center_crop(s, 0.0, 16)
        np.testing.assert_allclose(rot.image, crop.image[:, ::-1, ::-1], atol=1e-6)
        np.testing.assert_array_equal(rot.gt, crop.gt[::-1, ::-1])

    def test_gt_stays_binary_for_any_angle(self):
        s = make_sample(h=30, w=30, seed=2)
        for angle in (17.0, 24.0, 133.7, 301.0):
            out = rotate_center_crop(s, angle, 16)
            assert set(np.unique(out.gt)).issubset({0.0, 1.0})

    def test_crop_too_large_rejected(self):
        with pytest.raises(ConfigError):
            rotate_center_crop(make_sample(h=10, w=10), 0.0, 11)

    def test_marker_pixel_alignment(self):
        # a bright marker in image and gt must land within 1 pixel of each
        # other under rotation (bilinear vs nearest resampling)
        for angle in (0.0, 24.0, 48.0, 96.0, 168.0):
            image = np.zeros((3, 41, 41), dtype=np.float32)
            gt = np.zeros((41, 41), dtype=np.float32)
            image[:, 12, 26] = 1.0
            gt[12, 26] = 1.0
            out = rotate_center_crop(Sample(image, gt, "m"), angle, 31)
            img_pos = np.unravel_index(np.argmax(out.image[0]), out.image[0].shape)
            assert out.image[0][img_pos] > 0.1
            gt_pos = np.argwhere(out.gt)
            assert len(gt_pos) >= 1
            nearest = np.abs(gt_pos - np.array(img_pos)).sum(axis=1).min()
            assert nearest <= 2  # 1 px in each axis


class TestGamma:
    def test_identity(self):
        img = make_sample().image
        np.testing.assert_allclose(gamma_correct(img, 1.0), img, atol=1e-7)

    def test_closed_form_quarter(self):
        out = gamma_correct(np.full((3, 2, 2), 0.25, dtype=np.float32), 0.5)
        np.testing.assert_allclose(out, 0.5, atol=1e-6)

    def test_mid_gray_first_gamma(self):
        out = gamma_correct(np.full((3, 1, 1), 0.5, dtype=np.float32), 0.3030)
        assert out[0, 0, 0] == pytest.approx(0.5 ** 0.3030, abs=1e-4)
        assert out[0, 0, 0] == pytest.approx(0.8106, abs=1e-3)

    def test_nonpositive_gamma_rejected(self):
        with pytest.raises(ConfigError):
            gamma_correct(make_sample().image, 0.0)


class TestExpand:
    def test_default_plan_factor_is_108(self):
        assert AugmentPlan(crop_size=8).factor == 108

    def test_one_source_gives_108_distinct_ids(self):
        plan = AugmentPlan(crop_size=10)
        out = expand(make_sample(h=24, w=48, seed=3), plan)
        assert len(out) == 108
        assert len({s.id for s in out}) == 108

    def test_id_grammar(self):
        plan = AugmentPlan(crop_size=10)
        ids = {s.id for s in expand(make_sample(h=24, w=48, seed=4), plan)}
        assert "src#0.orig.flipi" in ids
        assert "src#1.rot24.fliph" in ids
        assert "src#0.gamma0.303.flipv" in ids

    def test_every_gt_stays_binary(self):
        plan = AugmentPlan(crop_size=10, rotations=5)
        for s in expand(make_sample(h=24, w=48, seed=5), plan):
            assert set(np.unique(s.gt)).issubset({0.0, 1.0})

    def test_deterministic(self):
        plan = AugmentPlan(crop_size=10)
        a = expand(make_sample(seed=6), plan)
        b = expand(make_sample(seed=6), plan)
        for x, y in zip(a, b):
            assert x.id == y.id
            np.testing.assert_array_equal(x.image, y.image)

    def test_custom_plan_reports_own_factor(self):
        plan = AugmentPlan(rotations=3, gammas=(0.5,), crop_size=8)
        assert plan.factor == 2 * (1 + 3 + 1) * 3
        out = expand(make_sample(seed=7), plan)
        assert len(out) == plan.factor


class TestLoadDataset:
    def _write_pair(self, tmp_path, name, size=(20, 16), gt_size=None, bits=8):
        rng = np.random.default_rng(hash(name) % 2 ** 31)
        img = Image.fromarray(
            (rng.random((size[1], size[0], 3)) * 255).astype(np.uint8), "RGB"
        )
        img_path = tmp_path / f"{name}.png"
        img.save(img_path)
        gh, gw = gt_size or (size[1], size[0])
        gt_values = (rng.random((gh, gw)) < 0.5)
        if bits == 16:
            gt_img = Image.fromarray((gt_values * 65535).astype(np.uint16))
        else:
            gt_img = Image.fromarray((gt_values * 255).astype(np.uint8), "L")
        gt_path = tmp_path / f"{name}.gt.png"
        gt_img.save(gt_path)
        return img_path.name, gt_path.name, gt_values

    def test_two_valid_pairs(self, tmp_path):
        lines = []
        for name in ("a", "b"):
            img, gt, _ = self._write_pair(tmp_path, name)
            lines.append(f"{img}\t{gt}")
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n")
        samples = load_dataset(manifest)
        assert len(samples) == 2
        assert samples[0].image.shape == (3, 16, 20)
        assert set(np.unique(samples[0].gt)).issubset({0.0, 1.0})

    def test_size_mismatch_rejected(self, tmp_path):
        img, gt, _ = self._write_pair(tmp_path, "bad", size=(20, 16), gt_size=(10, 10))
        manifest = tmp_path / "manifest.txt"
        manifest.write_text(f"{img}\t{gt}\n")
        with pytest.raises(DataError):
            load_dataset(manifest)

    def test_missing_file_rejected(self, tmp_path):
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("nope.png\tnope.gt.png\n")
        with pytest.raises(DataError):
            load_dataset(manifest)

    def test_16bit_gt_binarizes_like_8bit(self, tmp_path):
        _, gt8, values = self._write_pair(tmp_path, "deep", bits=8)
        # rewrite the same boolean map at 16 bits
        Image.fromarray((values * 65535).astype(np.uint16)).save(tmp_path / "deep16.png")
        from edgenet.datapipe import load_gt

        a = load_gt(tmp_path / gt8)
        b = load_gt(tmp_path / "deep16.png")
        np.testing.assert_array_equal(a, b)

    def test_write_samples_round_trip(self, tmp_path):
        plan = AugmentPlan(crop_size=10, rotations=2)
        out = expand(make_sample(h=24, w=48, seed=8), plan)
        manifest = write_samples(out, tmp_path / "aug")
        reloaded = load_dataset(manifest)
        assert len(reloaded) == len(out)
        # 8-bit PNG quantization: 1/255 half-step tolerance
        np.testing.assert_allclose(reloaded[0].image, out[0].image, atol=0.5 / 255 + 1e-6)
        np.testing.assert_array_equal(reloaded[0].gt, out[0].gt)
