import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pedcascade.channels import (
    CHANNEL_COUNTS,
    ChannelConfig,
    ChannelStack,
    compute_channels,
    gradient_channels,
    integral_image,
    rect_sum,
    rgb_to_luv,
)
from pedcascade.geometry import Box


def rand_rgb(rng, h=24, w=18):
    return rng.random((h, w, 3))


class TestChannelConfig:
    def test_counts_per_kind(self):
        for kind, n in CHANNEL_COUNTS.items():
            assert ChannelConfig(kind).n_channels == n

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            ChannelConfig("YUV")

    def test_orientation_bins_change_count(self):
        assert ChannelConfig("HOG_LUV", orientation_bins=8).n_channels == 12
        assert ChannelConfig("HOG_L", orientation_bins=4).n_channels == 5


class TestIntegralImage:
    def test_zero_border(self):
        ii = integral_image(np.ones((3, 4)))
        assert np.all(ii[0, :] == 0)
        assert np.all(ii[:, 0] == 0)
        assert ii[-1, -1] == 12

    @given(
        hnp.arrays(
            np.float64,
            hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12),
            elements=st.floats(-10, 10),
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_corner_is_total(self, plane):
        ii = integral_image(plane)
        assert ii[-1, -1] == pytest.approx(plane.sum(), abs=1e-9)


class TestRectSum:
    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(0)
        stack = ChannelStack([rng.random((20, 16)) for _ in range(3)])
        for _ in range(100):
            c = int(rng.integers(0, 3))
            w = int(rng.integers(1, 10))
            h = int(rng.integers(1, 12))
            x = int(rng.integers(0, 16 - w + 1))
            y = int(rng.integers(0, 20 - h + 1))
            got = rect_sum(stack, c, Box(x, y, w, h))
            want = 0.0
            for i in range(y, y + h):
                for j in range(x, x + w):
                    want += stack.channels[c][i, j]
            assert got == pytest.approx(want, abs=1e-9 * max(1.0, w * h))

    def test_rejects_misaligned(self):
        stack = ChannelStack([np.ones((5, 5))])
        with pytest.raises(ValueError):
            rect_sum(stack, 0, Box(0.5, 0, 2, 2))

    def test_rejects_out_of_bounds(self):
        stack = ChannelStack([np.ones((5, 5))])
        with pytest.raises(ValueError):
            rect_sum(stack, 0, Box(3, 3, 4, 4))

    def test_full_plane_equals_total(self):
        rng = np.random.default_rng(1)
        plane = rng.random((7, 9))
        stack = ChannelStack([plane])
        assert rect_sum(stack, 0, Box(0, 0, 9, 7)) == pytest.approx(plane.sum())


class TestLuv:
    def test_output_in_unit_range(self):
        rng = np.random.default_rng(2)
        luv = rgb_to_luv(rand_rgb(rng))
        assert luv.min() >= -1e-9
        assert luv.max() <= 1.0 + 1e-9

    def test_white_has_max_lightness(self):
        luv = rgb_to_luv(np.ones((1, 1, 3)))
        assert luv[0, 0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_black_is_zero_lightness(self):
        luv = rgb_to_luv(np.zeros((1, 1, 3)))
        assert luv[0, 0, 0] == pytest.approx(0.0)

    def test_gray_axis_has_neutral_chroma(self):
        # u*, v* vanish on the achromatic axis; rescaled that is a constant
        g = np.full((1, 1, 3), 0.4)
        luv = rgb_to_luv(g)
        assert luv[0, 0, 1] == pytest.approx(134.0 / 354.0, abs=1e-3)
        assert luv[0, 0, 2] == pytest.approx(140.0 / 262.0, abs=1e-3)

    def test_lightness_monotone_in_gray_level(self):
        levels = np.linspace(0, 1, 16).reshape(-1, 1, 1) * np.ones((16, 1, 3))
        l = rgb_to_luv(levels)[..., 0].ravel()
        assert np.all(np.diff(l) > 0)


class TestGradientChannels:
    def test_hard_binning_conservation(self):
        rng = np.random.default_rng(3)
        lum = rng.random((30, 25))
        mag, oriented = gradient_channels(lum, 6)
        total = np.sum(oriented, axis=0)
        assert np.max(np.abs(total - mag)) <= 1e-9

    def test_each_pixel_in_exactly_one_bin(self):
        rng = np.random.default_rng(4)
        lum = rng.random((12, 12))
        mag, oriented = gradient_channels(lum, 6)
        nonzero_count = sum((o > 0).astype(int) for o in oriented)
        assert np.all(nonzero_count[mag > 0] == 1)

    def test_vertical_edge_lands_in_horizontal_gradient_bin(self):
        lum = np.zeros((10, 10))
        lum[:, 5:] = 1.0
        _, oriented = gradient_channels(lum, 6)
        # gradient points along +x, orientation 0 -> first bin
        assert oriented[0].sum() > 0
        for o in oriented[1:]:
            assert o.sum() == 0

    def test_horizontal_edge_lands_in_middle_bin(self):
        lum = np.zeros((10, 10))
        lum[5:, :] = 1.0
        _, oriented = gradient_channels(lum, 6)
        # gradient along +y, orientation pi/2 -> bin 3 of 6
        hot = int(np.argmax([o.sum() for o in oriented]))
        assert hot == 3

    def test_constant_image_has_zero_magnitude(self):
        mag, oriented = gradient_channels(np.full((8, 8), 0.7), 6)
        assert np.all(mag == 0)


class TestComputeChannels:
    @pytest.mark.parametrize("kind", sorted(CHANNEL_COUNTS))
    def test_channel_counts(self, kind):
        rng = np.random.default_rng(5)
        stack = compute_channels(rand_rgb(rng), ChannelConfig(kind))
        assert stack.n_channels == CHANNEL_COUNTS[kind]

    def test_rgb_passthrough(self):
        rng = np.random.default_rng(6)
        img = rand_rgb(rng)
        stack = compute_channels(img, ChannelConfig("RGB"))
        for c in range(3):
            assert np.array_equal(stack.channels[c], img[..., c])

    def test_hog_luv_layout_conservation(self):
        rng = np.random.default_rng(7)
        stack = compute_channels(rand_rgb(rng), ChannelConfig("HOG_LUV"))
        mag = stack.channels[0]
        total = sum(stack.channels[1:7])
        assert np.max(np.abs(total - mag)) <= 1e-9

    def test_pre_blur_keeps_conservation(self):
        rng = np.random.default_rng(8)
        stack = compute_channels(rand_rgb(rng), ChannelConfig("HOG_LUV", pre_blur=True))
        total = sum(stack.channels[1:7])
        assert np.max(np.abs(total - stack.channels[0])) <= 1e-9

    def test_rejects_gray_input_for_color_kinds(self):
        with pytest.raises(ValueError):
            compute_channels(np.zeros((10, 10)), ChannelConfig("LUV"))

    def test_crop_matches_recompute_of_integrals(self):
        rng = np.random.default_rng(9)
        stack = compute_channels(rand_rgb(rng, 30, 30), ChannelConfig("G_LUV"))
        sub = stack.crop(4, 6, 10, 12)
        assert sub.height == 12 and sub.width == 10
        got = rect_sum(sub, 0, Box(0, 0, 10, 12))
        want = rect_sum(stack, 0, Box(4, 6, 10, 12))
        assert got == pytest.approx(want, abs=1e-9)


class TestChannelStack:
    def test_rejects_mismatched_planes(self):
        with pytest.raises(ValueError):
            ChannelStack([np.zeros((4, 4)), np.zeros((5, 4))])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ChannelStack([])

    def test_as_array_shape(self):
        stack = ChannelStack([np.zeros((4, 6)) for _ in range(3)])
        assert stack.as_array().shape == (4, 6, 3)
