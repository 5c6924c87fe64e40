"""
8-bit RGB images: PNG I/O, tensor conversion and bicubic degradation.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from mcan.exceptions import ImageIOError, ShapeError
from mcan.tensor import Tensor

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# 8-bit modes that convert to RGB without loss of meaning
CONVERTIBLE_MODES = ("RGB", "L", "P")
CUBIC_A = -0.5


@dataclass(frozen=True)
class Image:
    """Row-major 8-bit RGB pixels of shape (height, width, 3)"""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = self.pixels
        if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeError(f"image pixels must be uint8 (h, w, 3), got {pixels.dtype} {pixels.shape}")
        pixels = np.ascontiguousarray(pixels)
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def size(self) -> Tuple[int, int]:
        return self.height, self.width

    def crop(self, top: int, left: int, height: int, width: int) -> "Image":
        return Image(self.pixels[top:top + height, left:left + width])

    def equals(self, other: "Image") -> bool:
        return np.array_equal(self.pixels, other.pixels)


def load_png(path: PathLike) -> Image:
    path = Path(path)
    try:
        with PILImage.open(path) as img:
            if img.format != "PNG":
                raise ImageIOError(f"{path.name}: not a PNG file (found {img.format})")
            if img.mode not in CONVERTIBLE_MODES:
                raise ImageIOError(f"{path.name}: unsupported color type/bit depth (mode {img.mode})")
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: no such file") from exc
    except UnidentifiedImageError as exc:
        raise ImageIOError(f"{path.name}: not a readable image") from exc
    except OSError as exc:
        raise ImageIOError(f"{path.name}: {exc}") from exc
    return Image(pixels)


def save_png(image: Image, path: PathLike):
    path = Path(path)
    try:
        PILImage.fromarray(image.pixels, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc
    logger.debug(f"Wrote {image.width}x{image.height} image to {path}")


def list_pngs(directory: PathLike) -> List[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.is_file() and p.suffix.lower() == ".png")


def to_tensor(image: Image) -> Tensor:
    """[0, 255] pixels to a (1, 3, h, w) tensor in [0, 1]"""
    chw = image.pixels.transpose(2, 0, 1)[None].astype(np.float32)
    return Tensor.wrap(np.ascontiguousarray(chw / np.float32(255)))


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clamp to uint8"""
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def to_image(t: Tensor) -> Image:
    shape = t.shape
    if len(shape) != 4 or shape[0] != 1:
        raise ShapeError(f"to_image: expected a (1, 3, h, w) tensor, got shape {shape}")
    if shape[1] != 3:
        raise ShapeError(f"to_image: dimension c is {shape[1]}, expected 3")
    values = t.data[0].transpose(1, 2, 0) * np.float32(255)
    return Image(quantize(values))


def center_crop(image: Image, multiple: int) -> Image:
    """Crop so both dimensions are multiples of `multiple`, dropping the excess symmetrically"""
    h = image.height - image.height % multiple
    w = image.width - image.width % multiple
    if h == image.height and w == image.width:
        return image
    if h == 0 or w == 0:
        raise ShapeError(f"image {image.width}x{image.height} is smaller than the scale {multiple}")
    top = (image.height - h) // 2
    left = (image.width - w) // 2
    return image.crop(top, left, h, w)


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_taps(in_len: int, scale: int, upscale: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Source indices and weights for resizing one axis by an integer factor.

    When downscaling the cubic kernel is stretched by the factor
    (antialiasing). Taps are sampled at half-pixel centers, normalized per
    output pixel, and reflected symmetrically at the borders.
    """
    factor = float(scale) if upscale else 1.0 / scale
    out_len = in_len * scale if upscale else in_len // scale
    stretch = min(factor, 1.0)
    width = 4.0 / stretch
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / factor + 0.5 * (1 - 1 / factor)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    indices = left[:, None] + np.arange(taps, dtype=np.float64)[None, :]
    weights = stretch * cubic(stretch * (u[:, None] - indices))
    weights /= weights.sum(axis=1, keepdims=True)

    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    indices = mirror[np.mod(indices.astype(np.int64) - 1, 2 * in_len)]

    keep = np.any(weights != 0, axis=0)
    return indices[:, keep], weights[:, keep].astype(np.float32)


def _resize_axis(values: np.ndarray, scale: int, axis: int, upscale: bool = False) -> np.ndarray:
    indices, weights = resize_taps(values.shape[axis], scale, upscale)
    moved = np.moveaxis(values, axis, 0)
    out = np.zeros((indices.shape[0],) + moved.shape[1:], dtype=np.float32)
    extra = (slice(None),) + (None,) * (moved.ndim - 1)
    for p in range(indices.shape[1]):
        out += weights[:, p][extra] * moved[indices[:, p]]
    return np.moveaxis(out, 0, axis)


def bicubic_downscale(hr: Image, scale: int) -> Image:
    """Antialiased bicubic downscale by an integer factor after a center crop"""
    if scale < 1:
        raise ShapeError(f"scale must be >= 1, got {scale}")
    hr = center_crop(hr, scale)
    if scale == 1:
        return hr
    values = hr.pixels.astype(np.float32)
    values = _resize_axis(values, scale, 0)
    values = _resize_axis(values, scale, 1)
    return Image(quantize(values))


def bicubic_upscale(lr: Image, scale: int) -> Image:
    """Plain bicubic interpolation by an integer factor; the classical baseline"""
    if scale < 1:
        raise ShapeError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return lr
    values = lr.pixels.astype(np.float32)
    values = _resize_axis(values, scale, 0, upscale=True)
    values = _resize_axis(values, scale, 1, upscale=True)
    return Image(quantize(values))
