"""Image decoding, luminance projection, region statistics and resizing.

Everything downstream (patching, filtering, training batches) consumes
only these primitives. All operations are pure functions over immutable
inputs and are safe to call from multiple threads.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, RectOutOfBounds

# Rec.601 luma weights; applied to 8-bit RGB and normalized to [0, 1].
REC601_WEIGHTS = (0.299, 0.587, 0.114)

# Keeps Michelson contrast finite (and zero) on all-black regions.
MICHELSON_EPS = 1e-6


@dataclass(frozen=True)
class ImageBuffer:
    """Decoded RGB pixels, row-major uint8 with shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(f"ImageBuffer needs (h, w, 3) uint8, got {p.shape} {p.dtype}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("ImageBuffer needs width >= 1 and height >= 1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class LuminancePlane:
    """Single-channel projection of an ImageBuffer, values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"LuminancePlane needs a 2-d array, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("luminance samples must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle; x, y is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("Rect needs w >= 1 and h >= 1")
        if self.x < 0 or self.y < 0:
            raise ValueError("Rect origin must be non-negative")


@dataclass(frozen=True)
class RegionStats:
    """Luminance statistics of one region.

    Percentiles use the nearest-rank rule index = floor(p * n) on the
    ascending sort (clamped to n - 1), so they are reproducible by a
    brute-force sort. Michelson contrast is computed on p05/p95 rather
    than raw min/max to shrug off single hot or dead pixels:
    (p95 - p05) / (p95 + p05 + eps), hence always in [0, 1).
    """

    mean: float
    min: float
    max: float
    p05: float
    p95: float
    michelson: float


def decode_image(data: bytes) -> ImageBuffer:
    """Decode a JPEG or PNG byte stream to an RGB buffer.

    Grayscale sources are replicated to three channels; alpha is
    dropped. Raises DecodeError on corrupt or unsupported streams.
    """
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            rgb.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image stream: {exc}") from exc
    return ImageBuffer(np.asarray(rgb, dtype=np.uint8))


def encode_png(img: ImageBuffer) -> bytes:
    """Encode losslessly; filter decisions stay reproducible bit-for-bit."""
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_image(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def save_png(img: ImageBuffer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


def to_luminance(img: ImageBuffer) -> LuminancePlane:
    """Per-pixel Rec.601 luma: (0.299 R + 0.587 G + 0.114 B) / 255."""
    r, g, b = REC601_WEIGHTS
    pix = img.pixels.astype(np.float64)
    lum = (r * pix[:, :, 0] + g * pix[:, :, 1] + b * pix[:, :, 2]) / 255.0
    return LuminancePlane(np.clip(lum, 0.0, 1.0))


def _nearest_rank(sorted_values: np.ndarray, percent: int) -> float:
    # Integer arithmetic so 5% of 100 samples indexes exactly 5.
    n = sorted_values.size
    idx = min((percent * n) // 100, n - 1)
    return float(sorted_values[idx])


def region_stats(plane: LuminancePlane, rect: Rect) -> RegionStats:
    """Exact min/max/mean plus nearest-rank p05/p95 over one rectangle."""
    if rect.x + rect.w > plane.width or rect.y + rect.h > plane.height:
        raise RectOutOfBounds(
            f"rect {rect} exceeds plane {plane.width}x{plane.height}"
        )
    samples = plane.values[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w]
    flat = np.sort(samples, axis=None)
    p05 = _nearest_rank(flat, 5)
    p95 = _nearest_rank(flat, 95)
    return RegionStats(
        mean=float(samples.mean()),
        min=float(flat[0]),
        max=float(flat[-1]),
        p05=p05,
        p95=p95,
        michelson=(p95 - p05) / (p95 + p05 + MICHELSON_EPS),
    )


def full_rect(plane_or_img) -> Rect:
    return Rect(0, 0, plane_or_img.width, plane_or_img.height)


def _axis_taps(src: int, dst: int):
    # Half-pixel-center sampling; coordinates clamped to the source.
    centers = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    centers = np.clip(centers, 0.0, src - 1.0)
    lo = np.floor(centers).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = centers - lo
    return lo, hi, frac


def resize_bilinear(img: ImageBuffer, w: int, h: int) -> ImageBuffer:
    """Bilinear resample with half-pixel centers.

    Resizing to the identical dimensions is a byte-exact copy. Output
    values are convex combinations of the four neighbouring taps, so
    they never overshoot the source range. Final quantization rounds
    half to even (numpy rint), e.g. the 4-tap average 127.5 stores 128.
    """
    if w < 1 or h < 1:
        raise ValueError("target dimensions must be >= 1")
    if w == img.width and h == img.height:
        return ImageBuffer(img.pixels.copy())
    x0, x1, fx = _axis_taps(img.width, w)
    y0, y1, fy = _axis_taps(img.height, h)
    pix = img.pixels.astype(np.float64)
    top = pix[y0][:, x0] * (1 - fx)[None, :, None] + pix[y0][:, x1] * fx[None, :, None]
    bot = pix[y1][:, x0] * (1 - fx)[None, :, None] + pix[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return ImageBuffer(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def resize_to_unit(img: ImageBuffer, size: int) -> np.ndarray:
    """Resize to size x size and scale to float32 in [0, 1] (model input)."""
    resized = resize_bilinear(img, size, size)
    return resized.pixels.astype(np.float32) / np.float32(255.0)
