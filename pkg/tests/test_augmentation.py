"""
Tests for geometric augmentation and the transform sampler
"""

import math

import numpy as np
import pytest

from backend.services.augmentation import (
    TECHNIQUES,
    AugmentationPolicy,
    AugmentationSampler,
    TransformInstance,
    apply,
    contact_sheet,
    flip,
    grid_shape,
    identity_policy,
    preview_tiles,
    rescale,
    rotate,
    sample_transform,
    shear,
    single_technique_policy,
    translate,
)
from backend.services.errors import InvalidTransform

# 0.99 quantile of chi-square with 9 degrees of freedom
CHI2_CRITICAL_DF9 = 21.666


def _random_image(rng, shape=(32, 48, 3)):
    return rng.integers(0, 256, size=shape, dtype=np.uint8)


def _bilinear_oracle(image, forward, fill=0.0):
    """Per-pixel inverse mapping with bilinear interpolation"""
    inverse = np.linalg.inv(forward)
    height, width = image.shape
    out = np.zeros_like(image, dtype=float)

    def pixel(r, c):
        return float(image[r, c]) if 0 <= r < height and 0 <= c < width else fill

    for y in range(height):
        for x in range(width):
            sx, sy, _ = inverse @ np.array([x, y, 1.0])
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            out[y, x] = (
                pixel(y0, x0) * (1 - fx) * (1 - fy)
                + pixel(y0, x0 + 1) * fx * (1 - fy)
                + pixel(y0 + 1, x0) * (1 - fx) * fy
                + pixel(y0 + 1, x0 + 1) * fx * fy
            )
    return out


class TestTransforms:
    """Test individual transforms"""

    def test_identities_exact(self, rng):
        """Test zero-parameter transforms return the image unchanged"""
        image = _random_image(rng)

        assert np.array_equal(rotate(image, 0), image)
        assert np.array_equal(shear(image, 0, 0), image)
        assert np.array_equal(rescale(image, 1.0), image)
        assert np.array_equal(translate(image, 0, 0), image)
        assert np.array_equal(apply(image, TransformInstance()), image)

    def test_flip_involution(self, rng):
        """Test flipping twice restores the image"""
        image = _random_image(rng)
        for axis in ("horizontal", "vertical"):
            assert np.array_equal(flip(flip(image, axis), axis), image)

    def test_flip_index_oracle(self, rng):
        """Test a horizontal flip moves every pixel to its mirrored column"""
        image = _random_image(rng, (5, 7, 3))
        mirrored = flip(image, "horizontal")
        width = image.shape[1]
        for r in range(image.shape[0]):
            for c in range(width):
                assert np.array_equal(mirrored[r, c], image[r, width - 1 - c])

    def test_flip_of_symmetric_image(self, rng):
        """Test a mirror-symmetric image is its own flip"""
        half = _random_image(rng, (6, 4, 3))
        symmetric = np.concatenate([half, half[:, ::-1]], axis=1)
        assert np.array_equal(flip(symmetric, "horizontal"), symmetric)

    def test_unknown_flip_axis(self, rng):
        """Test an unknown flip axis is rejected"""
        with pytest.raises(InvalidTransform):
            flip(_random_image(rng), "diagonal")

    def test_rotate_half_turn_twice(self, rng):
        """Test two half turns come back within interpolation error"""
        image = _random_image(rng, (31, 31, 3))
        back = rotate(rotate(image, 180), 180)
        assert np.abs(back.astype(int) - image.astype(int)).max() <= 2

    def test_shear_matches_affine_oracle(self, rng):
        """Test shear against an explicit affine warp"""
        image = rng.integers(0, 256, size=(16, 20), dtype=np.uint8)
        cx, cy = (20 - 1) / 2, (16 - 1) / 2
        linear = np.array([[1, math.tan(math.radians(10)), 0], [math.tan(math.radians(5)), 1, 0], [0, 0, 1]])
        to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]])
        back = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]])

        expected = _bilinear_oracle(image, back @ linear @ to_origin)
        out = shear(image, 10, 5)

        assert np.abs(out.astype(float) - expected).max() <= 2

    def test_shear_boundary(self, rng):
        """Test shear angles must stay below 90 degrees"""
        image = _random_image(rng)
        assert shear(image, 89.99, 0).shape == image.shape
        with pytest.raises(InvalidTransform):
            shear(image, 90, 0)

    def test_rescale_half(self):
        """Test halving leaves the content inside the central half"""
        image = np.full((64, 64), 255, dtype=np.uint8)
        out = rescale(image, 0.5)

        inside = np.zeros_like(out, dtype=bool)
        inside[16:48, 16:48] = True
        assert (out[inside] == 255).all()
        assert (out[~inside] == 0).all()

    def test_rescale_round_trip_central(self):
        """Test doubling then halving restores the center"""
        rows, cols = np.mgrid[0:64, 0:64]
        image = (2 * cols + rows).astype(np.uint8)

        back = rescale(rescale(image, 2.0), 0.5)

        assert np.abs(back[20:44, 20:44].astype(int) - image[20:44, 20:44].astype(int)).max() <= 4

    def test_rescale_rejects_nonpositive(self, rng):
        """Test a nonpositive scale is rejected"""
        with pytest.raises(InvalidTransform):
            rescale(_random_image(rng), 0.0)

    def test_translate_index_oracle(self, rng):
        """Test translation shifts pixels and fills the exposed band"""
        image = _random_image(rng)
        out = translate(image, 3, 2)
        assert np.array_equal(out[2:, 3:], image[:-2, :-3])
        assert (out[:2] == 0).all() and (out[:, :3] == 0).all()

    def test_translate_round_trip_overlap(self, rng):
        """Test shifting back restores the overlapping region"""
        image = _random_image(rng)
        back = translate(translate(image, 3, 0), -3, 0)
        assert np.array_equal(back[:, :-3], image[:, :-3])

    def test_translate_out_of_range(self, rng):
        """Test shifts beyond half the image are rejected"""
        with pytest.raises(InvalidTransform):
            translate(_random_image(rng, (32, 48, 3)), 25, 0)

    def test_fill_value(self, rng):
        """Test the fill value is used for exposed pixels"""
        out = translate(_random_image(rng), 4, 0, fill_value=77)
        assert (out[:, :4] == 77).all()


class TestApply:
    """Test composed application"""

    def test_dimension_and_range_preservation(self, rng):
        """Test random transforms keep shape, dtype and range"""
        policy = AugmentationPolicy()
        for _ in range(100):
            height, width = int(rng.integers(8, 40)), int(rng.integers(8, 40))
            image = _random_image(rng, (height, width, 3))
            t = sample_transform(policy, rng, (height, width))

            out = apply(image, t)

            assert out.shape == image.shape
            assert out.dtype == np.uint8

    def test_pure(self, rng):
        """Test applying a transform has no hidden state"""
        image = _random_image(rng)
        t = TransformInstance(rotation_deg=3.0, flip_x=True, shear_x_deg=2.0, scale=1.05, translate_x_px=2)
        assert np.array_equal(apply(image, t), apply(image, t))

    def test_flips_applied_first(self, rng):
        """Test both flips together equal a half turn of the array"""
        image = _random_image(rng)
        t = TransformInstance(flip_x=True, flip_y=True)
        assert np.array_equal(apply(image, t), image[::-1, ::-1])


class TestSampler:
    """Test transform sampling"""

    def test_collapsed_policy(self, rng):
        """Test the identity policy only draws identity transforms"""
        for _ in range(20):
            assert sample_transform(identity_policy(), rng, (64, 64)).is_identity

    def test_equal_seeds_equal_streams(self):
        """Test equal seeds give equal transform streams"""
        first = AugmentationSampler(AugmentationPolicy(), base_seed=7, worker_index=1)
        second = AugmentationSampler(AugmentationPolicy(), base_seed=7, worker_index=1)
        assert [first.sample((64, 64)) for _ in range(1000)] == [second.sample((64, 64)) for _ in range(1000)]

    def test_worker_index_changes_stream(self):
        """Test worker indices give different streams"""
        first = AugmentationSampler(AugmentationPolicy(), base_seed=7, worker_index=0)
        second = AugmentationSampler(AugmentationPolicy(), base_seed=7, worker_index=1)
        assert [first.sample((64, 64)) for _ in range(10)] != [second.sample((64, 64)) for _ in range(10)]

    def test_rotation_range_and_uniformity(self):
        """Test rotation angles stay in range and fill it evenly"""
        sampler = AugmentationSampler(AugmentationPolicy(), base_seed=2024)
        angles = np.array([sampler.sample((64, 64)).rotation_deg for _ in range(10_000)])

        assert angles.min() >= -5 and angles.max() <= 5
        observed, _ = np.histogram(angles, bins=10, range=(-5, 5))
        expected = len(angles) / 10
        chi2 = float(((observed - expected) ** 2 / expected).sum())
        assert chi2 < CHI2_CRITICAL_DF9

    def test_flip_frequency(self):
        """Test each flip is drawn about half the time"""
        sampler = AugmentationSampler(AugmentationPolicy(), base_seed=99)
        draws = [sampler.sample((64, 64)) for _ in range(10_000)]
        for field in ("flip_x", "flip_y"):
            frequency = sum(getattr(t, field) for t in draws) / len(draws)
            assert 0.47 <= frequency <= 0.53

    def test_fields_within_ranges(self, rng):
        """Test every drawn field stays inside the policy ranges"""
        policy = AugmentationPolicy()
        for _ in range(500):
            t = sample_transform(policy, rng, (100, 200))
            assert -5 <= t.shear_x_deg <= 5 and -5 <= t.shear_y_deg <= 5
            assert 0.9 <= t.scale <= 1.1
            assert abs(t.translate_x_px) <= 10 and abs(t.translate_y_px) <= 5

    def test_disabled_flips_never_drawn(self, rng):
        """Test disabled flips are never drawn"""
        policy = AugmentationPolicy(x_reflection=False, y_reflection=False)
        assert not any(sample_transform(policy, rng, (32, 32)).flip_x for _ in range(200))


class TestPolicies:
    """Test policy helpers"""

    @pytest.mark.parametrize("field,bad", [
        ("rotation_range_deg", (5.0, -5.0)),
        ("scale_range", (0.0, 1.0)),
        ("translation_range_frac", (-0.6, 0.1)),
        ("shear_range_deg", (-90.0, 0.0)),
    ])
    def test_invalid_ranges(self, field, bad):
        """Test inverted or out-of-bounds ranges are rejected"""
        with pytest.raises(ValueError):
            AugmentationPolicy(**{field: bad})

    def test_single_technique(self):
        """Test a single-technique policy keeps only that range"""
        policy = AugmentationPolicy()
        rotation_only = single_technique_policy(policy, "rotation")

        assert rotation_only.rotation_range_deg == (-5.0, 5.0)
        assert rotation_only.scale_range == (1.0, 1.0)
        assert not rotation_only.x_reflection and not rotation_only.y_reflection
        assert single_technique_policy(policy, None) == identity_policy()
        assert single_technique_policy(policy, "reflection").y_reflection

    def test_all_techniques_known(self):
        """Test every named technique builds and unknown ones fail"""
        for technique in TECHNIQUES:
            single_technique_policy(AugmentationPolicy(), technique)
        with pytest.raises(InvalidTransform):
            single_technique_policy(AugmentationPolicy(), "elastic")


class TestPreview:
    """Test contact sheets"""

    def test_grid_shape(self):
        """Test the preview grid is as square as possible"""
        assert grid_shape(9) == (3, 3)
        assert grid_shape(10) == (3, 4)

    def test_contact_sheet_size(self, rng):
        """Test tile placement and gutters on the sheet"""
        tiles = [_random_image(rng, (10, 12, 3)) for _ in range(9)]
        sheet = contact_sheet(tiles, cols=3, gutter=2)
        assert sheet.shape == (3 * 10 + 4, 3 * 12 + 4, 3)
        assert np.array_equal(sheet[12:22, 14:26], tiles[4])

    def test_identity_preview_tiles_equal_source(self, rng):
        """Test identity preview tiles equal the source"""
        image = _random_image(rng)
        for tile in preview_tiles(image, identity_policy(), 4, seed=1):
            assert np.array_equal(tile, image)
