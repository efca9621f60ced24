"""Image container, PPM/PNG codecs, resize, blending, colormap."""

import numpy as np
import pytest

from ensel import imaging
from ensel.errors import DecodeError, InvalidArgument
from ensel.imaging import (
    Heatmap,
    ImageU8,
    alpha_blend,
    clamp_box,
    colormap,
    crop,
    decode,
    encode,
    resize_bilinear,
    resize_bilinear_f64,
    round_half_up_u8,
    sniff_format,
)
from ensel.rng import Rng


def random_image(seed, h=13, w=17):
    rng = Rng(seed)
    px = rng.int_array(h * w * 3, 0, 255).reshape(h, w, 3).astype(np.uint8)
    return ImageU8(px)


class TestImageU8:
    def test_basic_properties(self):
        img = ImageU8(np.zeros((4, 6, 3), dtype=np.uint8))
        assert img.height == 4
        assert img.width == 6

    def test_rejects_wrong_shape(self):
        with pytest.raises(InvalidArgument):
            ImageU8(np.zeros((4, 6), dtype=np.uint8))
        with pytest.raises(InvalidArgument):
            ImageU8(np.zeros((4, 6, 4), dtype=np.uint8))

    def test_coerces_dtype_to_uint8(self):
        img = ImageU8(np.full((4, 6, 3), 7.0))
        assert img.pixels.dtype == np.uint8

    def test_copy_is_independent(self):
        img = random_image(1)
        dup = img.copy()
        dup.pixels[0, 0, 0] ^= 0xFF
        assert img.pixels[0, 0, 0] != dup.pixels[0, 0, 0]


def test_round_half_up_u8_rule():
    vals = np.array([-3.0, -0.4, 0.0, 0.5, 1.49, 1.5, 2.5, 254.5, 255.2, 300.0])
    out = round_half_up_u8(vals)
    assert out.dtype == np.uint8
    # .5 always rounds up, results clipped to [0, 255]
    np.testing.assert_array_equal(out, [0, 0, 0, 1, 1, 2, 3, 255, 255, 255])


class TestPpmCodec:
    def test_round_trip_is_byte_exact(self):
        img = random_image(7)
        data = encode(img, "ppm")
        again = encode(decode(data, "ppm"), "ppm")
        assert data == again

    def test_round_trip_preserves_pixels(self):
        img = random_image(8, h=1, w=1)
        back = decode(encode(img, "ppm"), "ppm")
        np.testing.assert_array_equal(back.pixels, img.pixels)

    def test_header_layout(self):
        img = ImageU8(np.full((2, 3, 3), 9, dtype=np.uint8))
        data = encode(img, "ppm")
        assert data.startswith(b"P6\n3 2\n255\n")
        assert len(data) == len(b"P6\n3 2\n255\n") + 2 * 3 * 3

    def test_decode_rejects_bad_magic(self):
        with pytest.raises(DecodeError):
            decode(b"P5\n1 1\n255\n\x00", "ppm")

    def test_decode_rejects_truncated_pixels(self):
        good = encode(random_image(3), "ppm")
        with pytest.raises(DecodeError):
            decode(good[:-1], "ppm")

    def test_decode_rejects_bad_maxval(self):
        with pytest.raises(DecodeError):
            decode(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00", "ppm")

    def test_decode_accepts_comment_lines(self):
        data = b"P6\n# a comment\n1 1\n255\nabc"
        img = decode(data, "ppm")
        np.testing.assert_array_equal(img.pixels.ravel(), [97, 98, 99])


class TestPngCodec:
    def test_round_trip_preserves_pixels(self):
        img = random_image(9)
        back = decode(encode(img, "png"), "png")
        np.testing.assert_array_equal(back.pixels, img.pixels)

    def test_garbage_raises_decode_error(self):
        with pytest.raises(DecodeError):
            decode(b"\x89PNG\r\n\x1a\nnot really a png", "png")


def test_unknown_format_rejected():
    img = random_image(2)
    with pytest.raises(InvalidArgument):
        encode(img, "jpeg")
    with pytest.raises(InvalidArgument):
        decode(b"anything", "bmp")


def test_sniff_format():
    img = random_image(4)
    assert sniff_format(encode(img, "ppm")) == "ppm"
    assert sniff_format(encode(img, "png")) == "png"
    assert sniff_format(b"GIF89a...") is None
    assert sniff_format(b"") is None


class TestResize:
    def test_identity_when_size_unchanged(self):
        img = random_image(5)
        out = resize_bilinear(img, img.height, img.width)
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_constant_image_stays_constant(self):
        img = ImageU8(np.full((5, 7, 3), 123, dtype=np.uint8))
        out = resize_bilinear(img, 64, 64)
        assert (out.pixels == 123).all()

    def test_2x_upscale_of_step_edge(self):
        # single row [0, 100]; with half-pixel centers the four output
        # samples sit at source x = -0.25, 0.25, 0.75, 1.25 -> clamped
        # interpolation gives 0, 25, 75, 100
        vals = np.array([[0.0, 100.0]])
        out = resize_bilinear_f64(vals, 1, 4)
        np.testing.assert_allclose(out, [[0.0, 25.0, 75.0, 100.0]])

    def test_downscale_averages(self):
        vals = np.array([[0.0, 10.0, 20.0, 30.0]])
        out = resize_bilinear_f64(vals, 1, 2)
        # centers at source x = 0.5 and 2.5: exact midpoints
        np.testing.assert_allclose(out, [[5.0, 25.0]])

    def test_f64_shape_and_range(self):
        rng = Rng(10)
        vals = rng.f64_array(30).reshape(5, 6)
        out = resize_bilinear_f64(vals, 9, 4)
        assert out.shape == (9, 4)
        assert out.min() >= vals.min() - 1e-12
        assert out.max() <= vals.max() + 1e-12

    def test_rejects_empty_output(self):
        with pytest.raises(InvalidArgument):
            resize_bilinear(random_image(1), 0, 4)


class TestBoxOps:
    def test_clamp_box_clips_to_bounds(self):
        assert clamp_box((-5, -2, 30, 40), 20, 10) == (0, 0, 20, 10)

    def test_clamp_box_keeps_interior(self):
        assert clamp_box((2, 3, 8, 9), 20, 10) == (2, 3, 8, 9)

    def test_crop_extracts_half_open_region(self):
        img = random_image(6)
        out = crop(img, (2, 1, 5, 4))
        assert (out.height, out.width) == (3, 3)
        np.testing.assert_array_equal(out.pixels, img.pixels[1:4, 2:5])

    def test_crop_rejects_empty(self):
        with pytest.raises(InvalidArgument):
            crop(random_image(6), (5, 5, 5, 9))


class TestAlphaBlend:
    def test_closed_form_single_pixel(self):
        base = ImageU8(np.array([[[100, 150, 200]]], dtype=np.uint8))
        out = alpha_blend(base, (255, 0, 0), np.ones((1, 1)), 0.4)
        # out = round(alpha*color + (1-alpha)*base)
        np.testing.assert_array_equal(out.pixels[0, 0], [162, 90, 120])

    def test_zero_mask_leaves_base_untouched(self):
        base = random_image(11)
        out = alpha_blend(base, (0, 255, 0), np.zeros((base.height, base.width)), 0.9)
        np.testing.assert_array_equal(out.pixels, base.pixels)

    def test_alpha_zero_is_identity(self):
        base = random_image(12)
        out = alpha_blend(base, (255, 255, 255), np.ones((base.height, base.width)), 0.0)
        np.testing.assert_array_equal(out.pixels, base.pixels)

    def test_alpha_one_full_mask_paints_solid(self):
        base = random_image(13)
        out = alpha_blend(base, (10, 20, 30), np.ones((base.height, base.width)), 1.0)
        assert (out.pixels == [10, 20, 30]).all()

    def test_fractional_mask_scales_alpha(self):
        base = ImageU8(np.array([[[0, 0, 0]]], dtype=np.uint8))
        out = alpha_blend(base, (200, 200, 200), np.full((1, 1), 0.5), 0.8)
        # effective weight 0.4 -> 80 on every channel
        np.testing.assert_array_equal(out.pixels[0, 0], [80, 80, 80])

    def test_rejects_alpha_outside_unit_interval(self):
        base = random_image(14)
        with pytest.raises(InvalidArgument):
            alpha_blend(base, (1, 2, 3), np.ones((base.height, base.width)), 1.5)

    def test_rejects_mask_shape_mismatch(self):
        base = random_image(15)
        with pytest.raises(InvalidArgument):
            alpha_blend(base, (1, 2, 3), np.ones((2, 2)), 0.5)


class TestColormap:
    def test_endpoint_colors(self):
        heat = Heatmap(np.array([[0.0, 1.0]]))
        img = colormap(heat)
        np.testing.assert_array_equal(img.pixels[0, 0], [0, 0, 255])   # cold blue
        np.testing.assert_array_equal(img.pixels[0, 1], [255, 0, 0])   # hot red

    def test_stop_colors(self):
        heat = Heatmap(np.array([[1 / 3, 2 / 3]]))
        img = colormap(heat)
        np.testing.assert_array_equal(img.pixels[0, 0], [0, 255, 255])  # cyan
        np.testing.assert_array_equal(img.pixels[0, 1], [255, 255, 0])  # yellow

    def test_midpoint_of_first_segment(self):
        heat = Heatmap(np.array([[1 / 6]]))
        img = colormap(heat)
        np.testing.assert_array_equal(img.pixels[0, 0], [0, 128, 255])

    def test_output_shape_matches(self):
        heat = Heatmap(np.linspace(0, 1, 12).reshape(3, 4))
        assert colormap(heat).pixels.shape == (3, 4, 3)


def test_heatmap_validates_range():
    with pytest.raises(InvalidArgument):
        Heatmap(np.array([[0.0, 1.2]]))
    with pytest.raises(InvalidArgument):
        Heatmap(np.array([[-0.1]]))
