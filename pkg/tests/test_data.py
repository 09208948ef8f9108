"""Synthetic task generators: determinism, label consistency, statistics."""

import numpy as np
import pytest

from paka.data import (
    DIRECTIONS,
    SHAPES_AREA_FRACTION,
    box_downsample,
    gen_depth_scenes,
    gen_direction_copy,
    gen_shapes_seg,
    seg_to_arrays,
)


class TestDirectionCopy:
    def test_shapes_and_one_hot(self):
        xs, ys = gen_direction_copy(0, 3, 16)
        assert xs.shape == (3, 9, 16, 16) and ys.shape == (3, 1, 16, 16)
        # beacon channels are one-hot at every pixel
        np.testing.assert_array_equal(xs[:, 1:].sum(axis=1), np.ones((3, 16, 16)))
        assert set(np.unique(xs[:, 1:])) <= {0.0, 1.0}

    @pytest.mark.parametrize("d", range(8))
    def test_target_is_shifted_value(self, d):
        xs, ys = gen_direction_copy(5, 1, 12, fixed_direction=d)
        v = xs[0, 0]
        dy, dx = DIRECTIONS[d]
        vp = np.pad(v, 1)
        yy, xx = np.meshgrid(np.arange(12), np.arange(12), indexing="ij")
        np.testing.assert_array_equal(ys[0, 0], vp[1 + yy + dy, 1 + xx + dx])

    def test_border_targets_are_zero_padded(self):
        # with the beacon pointing up, the top row reads outside the image
        _, ys = gen_direction_copy(2, 1, 8, fixed_direction=1)  # (-1, 0)
        assert np.all(ys[0, 0, 0] == 0.0)

    def test_beacons_constant_on_blocks(self):
        xs, _ = gen_direction_copy(3, 1, 16, block=8)
        d = xs[0, 1:].argmax(axis=0)
        for by in range(2):
            for bx in range(2):
                block = d[8 * by : 8 * by + 8, 8 * bx : 8 * bx + 8]
                assert np.unique(block).size == 1

    def test_deterministic(self):
        a = gen_direction_copy(7, 2, 16)
        b = gen_direction_copy(7, 2, 16)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        c = gen_direction_copy(8, 2, 16)
        assert not np.array_equal(a[0], c[0])

    def test_size_validation(self):
        with pytest.raises(ValueError):
            gen_direction_copy(0, 1, 4)


class TestShapesSeg:
    def test_labels_and_shapes(self):
        samples = gen_shapes_seg(0, 4, 32, 4)
        xs, ys = seg_to_arrays(samples)
        assert xs.shape == (4, 1, 32, 32) and ys.shape == (4, 32, 32)
        assert ys.min() >= 0 and ys.max() <= 3
        for s in samples:
            assert set(np.unique(s.label)) == {0, 1, 2, 3}

    def test_classes_confined_to_quadrants(self):
        half = 16
        for s in gen_shapes_seg(1, 8, 32, 4):
            for c in (1, 2, 3):
                ysc, xsc = np.where(s.label == c)
                assert ysc.max() - ysc.min() < half
                assert xsc.max() - xsc.min() < half
                # the class fits inside a single quadrant
                assert (ysc.min() // half) == (ysc.max() // half)
                assert (xsc.min() // half) == (xsc.max() // half)

    def test_mean_class_area_matches_target(self):
        # expected per-class area is the mean of the sampled fraction range;
        # continuous sizes/positions make the pixel count unbiased, so the
        # Monte Carlo mean over many scenes must sit close to it
        size, n = 48, 400
        samples = gen_shapes_seg(2, n, size, 4)
        target = np.mean(SHAPES_AREA_FRACTION) * size * size
        for c in (1, 2, 3):
            mean_area = np.mean([(s.label == c).sum() for s in samples])
            assert abs(mean_area - target) / target < 0.02

    def test_class_count_validation(self):
        with pytest.raises(ValueError):
            gen_shapes_seg(0, 1, 32, 1)
        with pytest.raises(ValueError):
            gen_shapes_seg(0, 1, 32, 6)

    def test_deterministic(self):
        a = seg_to_arrays(gen_shapes_seg(3, 2, 32, 3))
        b = seg_to_arrays(gen_shapes_seg(3, 2, 32, 3))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestBoxDownsample:
    def test_exact_block_mean(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        got = box_downsample(x, 2)
        np.testing.assert_array_equal(got, [[[[2.5, 4.5], [10.5, 12.5]]]])

    def test_inverse_of_constant_upsample(self):
        x = np.full((2, 1, 8, 8), 0.3)
        np.testing.assert_allclose(box_downsample(x, 4), 0.3)


class TestDepthScenes:
    def test_shapes_and_ranges(self):
        lr, guide, hr = gen_depth_scenes(0, 3, 32, 4)
        assert lr.shape == (3, 1, 8, 8)
        assert guide.shape == (3, 1, 32, 32) and hr.shape == (3, 1, 32, 32)
        for arr in (lr, guide, hr):
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_lr_is_box_downsampled_hr(self):
        lr, _, hr = gen_depth_scenes(1, 2, 32, 4)
        np.testing.assert_allclose(lr, box_downsample(hr, 4), atol=1e-14)

    def test_guide_edges_align_with_depth_edges(self):
        # every region boundary carries an albedo contrast, so strong depth
        # edges must show up in the guide as well
        _, guide, hr = gen_depth_scenes(2, 8, 64, 4)
        gd = np.abs(np.diff(hr[:, 0], axis=-1))
        gg = np.abs(np.diff(guide[:, 0], axis=-1))
        strong = gd > 0.05
        assert strong.sum() > 100  # scenes actually contain discontinuities
        aligned = (gg > 0.02)[strong]
        assert aligned.mean() > 0.90

    def test_scale_validation(self):
        with pytest.raises(ValueError):
            gen_depth_scenes(0, 1, 32, 3)
        with pytest.raises(ValueError):
            gen_depth_scenes(0, 1, 30, 4)

    def test_deterministic(self):
        a = gen_depth_scenes(4, 2, 32, 2)
        b = gen_depth_scenes(4, 2, 32, 2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
