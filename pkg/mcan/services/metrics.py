"""
Y-channel PSNR and SSIM with the usual super-resolution border shave.
"""

import math
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mcan.exceptions import ShapeError
from mcan.services.imaging import Image
from mcan.tensor import Tensor

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * PEAK) ** 2
SSIM_C2 = (0.03 * PEAK) ** 2

# BT.601 luma for R, G, B in [0, 1]
LUMA_OFFSET = 16.0
LUMA_WEIGHTS = (65.481, 128.553, 24.966)


def luma(rgb: np.ndarray) -> np.ndarray:
    """Y of an (..., 3, h, w) array in [0, 1], as float64 in [16, 235]"""
    r, g, b = (rgb[..., i, :, :].astype(np.float64) for i in range(3))
    return LUMA_OFFSET + LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


def _image_luma(image: Image) -> np.ndarray:
    return luma(image.pixels.transpose(2, 0, 1) / 255.0)


def rgb_to_y(x: Union[Image, Tensor]) -> Tensor:
    """Single-channel (n, 1, h, w) luma tensor"""
    if isinstance(x, Image):
        return Tensor(_image_luma(x)[None, None])
    if len(x.shape) != 4 or x.shape[1] != 3:
        raise ShapeError(f"rgb_to_y: expected (n, 3, h, w), got shape {x.shape}")
    return Tensor(luma(x.data)[:, None])


def _shaved_pair(a: Image, b: Image, shave: int):
    if a.size != b.size:
        raise ShapeError(f"images differ in size: {a.width}x{a.height} vs {b.width}x{b.height}")
    ya, yb = _image_luma(a), _image_luma(b)
    if shave:
        ya = ya[shave:-shave, shave:-shave]
        yb = yb[shave:-shave, shave:-shave]
    if ya.size == 0:
        raise ShapeError(f"nothing left of {a.width}x{a.height} after shaving {shave} pixels")
    return ya, yb


def psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def psnr(a: Image, b: Image, scale: int) -> float:
    ya, yb = _shaved_pair(a, b, scale)
    return psnr_from_mse(float(np.mean((ya - yb) ** 2)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D window is its outer product"""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim(a: Image, b: Image, scale: int) -> float:
    x, y = _shaved_pair(a, b, scale)
    if min(x.shape) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels after shaving, got {x.shape[1]}x{x.shape[0]}")
    g = gaussian_window()
    mu1, mu2 = _filter_valid(x, g), _filter_valid(y, g)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    sigma1_sq = _filter_valid(x * x, g) - mu1_sq
    sigma2_sq = _filter_valid(y * y, g) - mu2_sq
    sigma12 = _filter_valid(x * y, g) - mu12
    numerator = (2 * mu12 + SSIM_C1) * (2 * sigma12 + SSIM_C2)
    denominator = (mu1_sq + mu2_sq + SSIM_C1) * (sigma1_sq + sigma2_sq + SSIM_C2)
    return float(np.clip(np.mean(numerator / denominator), -1.0, 1.0))
