"""Synthetic bi-temporal scene generator."""

import numpy as np
import pytest

from structcd import (
    ChangeRegion,
    SceneSpec,
    acceptance_scene,
    extract_cfog,
    generate,
    to_intensity,
)


def plain_spec(**overrides):
    defaults = dict(width=32, height=32, bands=2, seed=5)
    defaults.update(overrides)
    return SceneSpec(**defaults)


class TestRegions:
    def test_rect_pixel_count(self):
        region = ChangeRegion("rect", (10, 12), 6)
        assert region.rasterize(32, 32).sum() == 36

    def test_rect_placement_is_top_left_anchored_at_half_size(self):
        plane = ChangeRegion("rect", (10, 12), 6).rasterize(32, 32)
        ys, xs = np.nonzero(plane)
        assert xs.min() == 10 - 3 and xs.max() == 10 + 2
        assert ys.min() == 12 - 3 and ys.max() == 12 + 2

    def test_disk_membership_rule(self):
        region = ChangeRegion("disk", (16, 14), 9)
        plane = region.rasterize(32, 32)
        yy, xx = np.mgrid[0:32, 0:32]
        expected = (xx - 16) ** 2 + (yy - 14) ** 2 <= 4.5**2
        assert np.array_equal(plane, expected)

    def test_rect_out_of_bounds(self):
        with pytest.raises(ValueError, match="leaves"):
            ChangeRegion("rect", (2, 16), 8).rasterize(32, 32)

    def test_disk_touching_edge_rejected(self):
        with pytest.raises(ValueError, match="leaves"):
            ChangeRegion("disk", (31, 16), 4).rasterize(32, 32)

    def test_bad_shape_name(self):
        with pytest.raises(ValueError):
            ChangeRegion("triangle", (5, 5), 3)

    def test_zero_size(self):
        with pytest.raises(ValueError):
            ChangeRegion("rect", (5, 5), 0)


class TestSceneSpecValidation:
    def test_too_small(self):
        with pytest.raises(ValueError):
            SceneSpec(width=2, height=10)

    def test_zero_bands(self):
        with pytest.raises(ValueError):
            plain_spec(bands=0)

    def test_nonpositive_gain(self):
        with pytest.raises(ValueError):
            plain_spec(gain=0.0)

    def test_negative_noise(self):
        with pytest.raises(ValueError):
            plain_spec(noise_sigma=-1.0)

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            plain_spec(seed=-1)

    def test_changes_coerced_to_tuple(self):
        spec = plain_spec(changes=[ChangeRegion("rect", (16, 16), 4)])
        assert isinstance(spec.changes, tuple)


class TestGenerate:
    def test_deterministic_bit_for_bit(self):
        spec = plain_spec(
            gain=1.2,
            bias=5.0,
            noise_sigma=3.0,
            changes=(ChangeRegion("disk", (16, 16), 10, delta=20.0),),
        )
        a1, a2, at = generate(spec)
        b1, b2, bt = generate(spec)
        assert np.array_equal(a1.data, b1.data)
        assert np.array_equal(a2.data, b2.data)
        assert np.array_equal(at.labels, bt.labels)

    def test_seed_changes_texture(self):
        t1a, _, _ = generate(plain_spec(seed=1))
        t1b, _, _ = generate(plain_spec(seed=2))
        assert not np.array_equal(t1a.data, t1b.data)

    def test_base_texture_spans_0_to_255_per_band(self):
        t1, _, _ = generate(plain_spec())
        for b in range(t1.bands):
            assert t1.band(b).min() == 0.0
            assert t1.band(b).max() == 255.0

    def test_null_distortion_copies_t1(self):
        _, t2, truth = generate(plain_spec(gain=1.0, bias=0.0, noise_sigma=0.0))
        t1, _, _ = generate(plain_spec(gain=1.0, bias=0.0, noise_sigma=0.0))
        assert np.array_equal(t2.data, t1.data)
        assert truth.changed_count() == 0

    def test_pure_distortion_without_noise_is_affine(self):
        spec = plain_spec(gain=1.3, bias=15.0, noise_sigma=0.0)
        t1, t2, _ = generate(spec)
        assert np.allclose(t2.data, 1.3 * t1.data + 15.0, atol=1e-12)

    def test_truth_equals_union_of_regions(self):
        regions = (
            ChangeRegion("rect", (8, 8), 6, delta=10.0),
            ChangeRegion("disk", (22, 22), 9, delta=-10.0),
        )
        spec = plain_spec(changes=regions)
        _, _, truth = generate(spec)
        expected = np.zeros((32, 32), dtype=bool)
        for region in regions:
            expected |= region.rasterize(32, 32)
        assert np.array_equal(truth.labels.astype(bool), expected)

    def test_rect_region_changes_exact_pixel_count(self):
        spec = SceneSpec(
            width=64,
            height=64,
            bands=1,
            seed=9,
            changes=(ChangeRegion("rect", (32, 32), 20, delta=30.0),),
        )
        _, _, truth = generate(spec)
        assert truth.changed_count() == 400

    def test_out_of_bounds_region_fails_generation(self):
        spec = plain_spec(changes=(ChangeRegion("rect", (0, 0), 10),))
        with pytest.raises(ValueError, match="leaves"):
            generate(spec)

    def test_later_region_paints_over_earlier(self):
        # Same seed => same textures; adding a second overlapping region only
        # re-paints the overlap, shifting it by the delta difference.
        r1 = ChangeRegion("rect", (14, 14), 10, delta=10.0)
        r2 = ChangeRegion("rect", (18, 14), 10, delta=50.0)
        _, t2_one, _ = generate(plain_spec(changes=(r1,)))
        _, t2_two, _ = generate(plain_spec(changes=(r1, r2)))
        overlap = r1.rasterize(32, 32) & r2.rasterize(32, 32)
        assert overlap.any()
        diff = t2_two.data[:, overlap] - t2_one.data[:, overlap]
        assert np.allclose(diff, 50.0 - 10.0, atol=1e-12)
        only_r1 = r1.rasterize(32, 32) & ~r2.rasterize(32, 32)
        assert np.array_equal(t2_two.data[:, only_r1], t2_one.data[:, only_r1])

    def test_replaced_pixels_carry_no_sensor_noise(self):
        # Inside a region t2 is the replacement texture (bounded to
        # [0, 255] plus delta) even when the scene noise is enormous.
        region = ChangeRegion("rect", (16, 16), 8, delta=0.0)
        spec = plain_spec(noise_sigma=1000.0, changes=(region,))
        _, t2, _ = generate(spec)
        member = region.rasterize(32, 32)
        inside = t2.data[:, member]
        assert inside.min() >= 0.0 and inside.max() <= 255.0


class TestStructuralConsequences:
    def test_radiometric_distortion_preserves_structure_features(self):
        spec = plain_spec(bands=1, gain=1.3, bias=15.0, noise_sigma=0.0)
        t1, t2, _ = generate(spec)
        s1 = extract_cfog(to_intensity(t1).band(0))
        s2 = extract_cfog(to_intensity(t2).band(0))
        assert np.allclose(s1.data, s2.data, atol=1e-6)


class TestAcceptanceScene:
    def test_shape_and_regions(self):
        spec = acceptance_scene()
        assert (spec.width, spec.height, spec.bands) == (256, 256, 4)
        assert len(spec.changes) == 5
        assert spec.gain == 1.3 and spec.bias == 15.0 and spec.noise_sigma == 5.0

    def test_changed_fraction_is_moderate(self):
        _, _, truth = generate(acceptance_scene())
        fraction = truth.changed_count() / truth.labels.size
        assert 0.04 < fraction < 0.15
