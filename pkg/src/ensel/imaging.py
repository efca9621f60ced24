"""Image ingestion, geometry, blending, and colormapping.

All rasters are 8-bit RGB. Two byte formats are supported: binary PPM (P6,
maxval 255), which is the bit-exact baseline used by golden tests, and
non-interlaced 8-bit RGB PNG for the service and UI path.

Conventions frozen for cross-implementation reproducibility:

* resize uses pixel-center mapping `src = (dst + 0.5) * (in / out) - 0.5`
  with coordinates clamped to `[0, in - 1]`;
* every float-to-u8 conversion rounds half-up (`floor(x + 0.5)`);
* boxes are half-open `[x0, x1) x [y0, y1)` and are clamped to the image
  rectangle rather than rejected.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InvalidArgument

FORMATS = ("ppm", "png")


@dataclass
class ImageU8:
    """H x W x 3 8-bit raster, channel order R, G, B."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgument(f"expected HxWx3 pixel array, got shape {px.shape}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def full(cls, height: int, width: int, color: tuple[int, int, int]) -> "ImageU8":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:, :] = color
        return cls(px)

    def copy(self) -> "ImageU8":
        return ImageU8(self.pixels.copy())


@dataclass
class Heatmap:
    """H x W map of values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidArgument(f"expected HxW value array, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise InvalidArgument("heatmap values must be finite and within [0, 1]")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def round_half_up_u8(values: np.ndarray) -> np.ndarray:
    """Round nonnegative floats half-up and clip into the u8 range."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# codecs


def _ppm_decode(data: bytes) -> ImageU8:
    if data[:2] != b"P6":
        raise DecodeError("not a binary PPM (P6) stream", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and '#' comment lines between header fields
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            raise DecodeError("truncated PPM header", offset=pos)
        token = data[start:pos]
        if not token.isdigit():
            raise DecodeError(f"malformed PPM header field {token!r}", offset=start)
        fields.append(int(token))
    if pos >= len(data):
        raise DecodeError("missing whitespace after PPM maxval", offset=pos)
    pos += 1  # single whitespace byte separating header from raster
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DecodeError(f"invalid PPM dimensions {width}x{height}", offset=2)
    if maxval != 255:
        raise DecodeError(f"unsupported PPM maxval {maxval}", offset=2)
    need = width * height * 3
    body = data[pos : pos + need]
    if len(body) < need:
        raise DecodeError(
            f"truncated PPM body: expected {need} bytes, got {len(body)}",
            offset=pos + len(body),
        )
    px = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return ImageU8(px.copy())


def _ppm_encode(img: ImageU8) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def _png_decode(data: bytes) -> ImageU8:
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format != "PNG":
                raise DecodeError(f"declared png but stream is {im.format}", offset=0)
            rgb = im.convert("RGB")
            px = np.asarray(rgb, dtype=np.uint8)
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"invalid PNG stream: {exc}", offset=0) from exc
    return ImageU8(px)


def _png_encode(img: ImageU8) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode(data: bytes, format: str) -> ImageU8:
    """Decode a PPM (P6) or PNG byte stream into a raster."""
    if format not in FORMATS:
        raise InvalidArgument(f"unknown format {format!r}, expected one of {FORMATS}")
    if not data:
        raise DecodeError("empty byte stream", offset=0)
    return _ppm_decode(data) if format == "ppm" else _png_decode(data)


def encode(img: ImageU8, format: str) -> bytes:
    """Encode a raster as PPM (P6) or non-interlaced 8-bit RGB PNG."""
    if format not in FORMATS:
        raise InvalidArgument(f"unknown format {format!r}, expected one of {FORMATS}")
    return _ppm_encode(img) if format == "ppm" else _png_encode(img)


def sniff_format(data: bytes) -> str | None:
    """Best-effort container detection for service uploads."""
    if data[:2] == b"P6":
        return "ppm"
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return "png"
    return None


# ---------------------------------------------------------------------------
# geometry


def _axis_coords(out_size: int, in_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel-center source coordinates for one axis: lower index, upper index,
    and the fractional weight of the upper neighbor."""
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear_f64(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D float map under the frozen pixel-center mapping."""
    if out_h < 1 or out_w < 1:
        raise InvalidArgument("output dimensions must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    y0, y1, fy = _axis_coords(out_h, v.shape[0])
    x0, x1, fx = _axis_coords(out_w, v.shape[1])
    fy = fy[:, None]
    fx = fx[None, :]
    top = v[y0][:, x0] * (1.0 - fx) + v[y0][:, x1] * fx
    bot = v[y1][:, x0] * (1.0 - fx) + v[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(img: ImageU8, out_h: int, out_w: int) -> ImageU8:
    """Per-channel bilinear resize, rounding half-up back to u8."""
    if out_h < 1 or out_w < 1:
        raise InvalidArgument("output dimensions must be >= 1")
    if out_h == img.height and out_w == img.width:
        return img.copy()
    src = img.pixels.astype(np.float64)
    y0, y1, fy = _axis_coords(out_h, img.height)
    x0, x1, fx = _axis_coords(out_w, img.width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    return ImageU8(round_half_up_u8(top * (1.0 - fy) + bot * fy))


def clamp_box(box, width: int, height: int) -> tuple[int, int, int, int]:
    """Clamp a half-open box to the image rectangle."""
    x0, y0, x1, y1 = (
        (box[0], box[1], box[2], box[3])
        if isinstance(box, (tuple, list))
        else (box.x0, box.y0, box.x1, box.y1)
    )
    return (
        max(0, min(int(x0), width)),
        max(0, min(int(y0), height)),
        max(0, min(int(x1), width)),
        max(0, min(int(y1), height)),
    )


def crop(img: ImageU8, box) -> ImageU8:
    """Copy the pixels of a half-open box, clamped to the image bounds.

    `box` may be a BBox-like object or an (x0, y0, x1, y1) tuple.
    """
    x0, y0, x1, y1 = clamp_box(box, img.width, img.height)
    if x1 <= x0 or y1 <= y0:
        raise InvalidArgument(f"box {box} is empty after clamping to {img.width}x{img.height}")
    return ImageU8(img.pixels[y0:y1, x0:x1].copy())


# ---------------------------------------------------------------------------
# blending and colormapping


def alpha_blend(base: ImageU8, overlay_color: tuple[int, int, int], mask, alpha: float) -> ImageU8:
    """Blend a solid color onto the base through a mask.

    Where the mask value m is positive each channel becomes
    `round(alpha*m*overlay + (1 - alpha*m)*base)`; elsewhere the base pixel is
    returned untouched. `mask` is a Heatmap or an H x W array of weights.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha {alpha} outside [0, 1]")
    m = mask.values if isinstance(mask, Heatmap) else np.asarray(mask, dtype=np.float64)
    if m.shape != (base.height, base.width):
        raise InvalidArgument(
            f"mask shape {m.shape} does not match image {base.height}x{base.width}"
        )
    weight = alpha * m
    out = base.pixels.astype(np.float64)
    color = np.asarray(overlay_color, dtype=np.float64)
    blended = weight[:, :, None] * color[None, None, :] + (1.0 - weight)[:, :, None] * out
    result = np.where((m > 0.0)[:, :, None], round_half_up_u8(blended), base.pixels)
    return ImageU8(result.astype(np.uint8))


_COLORMAP_STOPS = np.array(
    [
        [0.0, 0.0, 255.0],  # heat 0
        [0.0, 255.0, 255.0],  # heat 1/3
        [255.0, 255.0, 0.0],  # heat 2/3
        [255.0, 0.0, 0.0],  # heat 1
    ]
)


def colormap(heat: Heatmap) -> ImageU8:
    """Blue-cyan-yellow-red piecewise-linear colormap of a heatmap."""
    v = heat.values * 3.0
    seg = np.minimum(np.floor(v).astype(np.int64), 2)
    t = (v - seg)[:, :, None]
    lo = _COLORMAP_STOPS[seg]
    hi = _COLORMAP_STOPS[seg + 1]
    return ImageU8(round_half_up_u8(lo * (1.0 - t) + hi * t))
