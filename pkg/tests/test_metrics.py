import math

import numpy as np
import pytest

from mcan.exceptions import ShapeError
from mcan.services.imaging import Image, to_tensor
from mcan.services.metrics import gaussian_window, psnr, psnr_from_mse, rgb_to_y, ssim


def solid(h, w, rgb):
    return Image(np.tile(np.array(rgb, dtype=np.uint8), (h, w, 1)))


@pytest.fixture
def textured():
    """A 40x40 image with structure in every channel"""
    rng = np.random.default_rng(3)
    return Image(rng.integers(0, 256, (40, 40, 3), dtype=np.uint8))


def test_rgb_to_y_reference_colors():
    """Test black 16, white 235 and pure red 81.481"""
    assert rgb_to_y(solid(2, 2, (0, 0, 0))).data[0, 0, 0, 0] == pytest.approx(16.0)
    assert rgb_to_y(solid(2, 2, (255, 255, 255))).data[0, 0, 0, 0] == pytest.approx(235.0, abs=1e-4)
    assert rgb_to_y(solid(2, 2, (255, 0, 0))).data[0, 0, 0, 0] == pytest.approx(81.481, abs=1e-4)


def test_rgb_to_y_accepts_tensors(textured):
    """Test that images and their tensors give the same luma"""
    from_image = rgb_to_y(textured)
    from_tensor = rgb_to_y(to_tensor(textured))
    assert from_tensor.shape == (1, 1, 40, 40)
    np.testing.assert_allclose(from_tensor.data, from_image.data, atol=1e-3)
    with pytest.raises(ShapeError):
        rgb_to_y(to_tensor(textured).channel_slice(0, 1))


def test_psnr_identical_is_infinite(textured):
    """Test zero error"""
    assert math.isinf(psnr(textured, textured, 4))
    assert psnr_from_mse(0.0) == math.inf


def test_psnr_unit_mse():
    """Test 10*log10(255^2) for MSE 1"""
    assert psnr_from_mse(1.0) == pytest.approx(48.1308, abs=1e-4)


def test_psnr_gray_offset():
    """Test PSNR of two flat gray images against the closed form"""
    a, b = solid(20, 20, (100, 100, 100)), solid(20, 20, (104, 104, 104))
    diff = 219.0 * 4 / 255
    assert psnr(a, b, 2) == pytest.approx(20 * math.log10(255 / diff), abs=1e-6)


def test_psnr_shaves_border(textured):
    """Test that differences inside the shaved border are ignored"""
    pixels = textured.pixels.copy()
    pixels[:2] = 0
    pixels[:, -2:] = 255
    assert math.isinf(psnr(textured, Image(pixels), 2))
    assert not math.isinf(psnr(textured, Image(pixels), 1))


def test_psnr_symmetric_and_size_checked(textured):
    """Test argument symmetry and the size check"""
    other = Image(textured.pixels[::-1].copy())
    assert psnr(textured, other, 3) == psnr(other, textured, 3)
    with pytest.raises(ShapeError):
        psnr(textured, solid(40, 39, (0, 0, 0)), 2)


def test_gaussian_window():
    """Test normalization and symmetry of the 11-tap sigma 1.5 window"""
    g = gaussian_window()
    assert g.shape == (11,)
    assert g.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(g, g[::-1])
    assert g.argmax() == 5


def test_ssim_identical_is_one(textured):
    """Test SSIM of an image with itself"""
    assert ssim(textured, textured, 4) == 1.0


def test_ssim_inverted_is_low(textured):
    """Test that an inverted image scores poorly"""
    inverted = Image(255 - textured.pixels)
    assert ssim(textured, inverted, 2) < 0.5


def test_ssim_symmetric_and_bounded(textured):
    """Test argument symmetry and the [-1, 1] range"""
    rng = np.random.default_rng(11)
    noisy = Image(np.clip(textured.pixels + rng.integers(-20, 21, textured.pixels.shape), 0, 255).astype(np.uint8))
    forward, reverse = ssim(textured, noisy, 2), ssim(noisy, textured, 2)
    assert forward == pytest.approx(reverse, abs=1e-12)
    assert -1.0 <= forward < 1.0


def test_ssim_too_small():
    """Test that fewer than 11x11 pixels after shaving are rejected"""
    small = solid(16, 16, (10, 20, 30))
    with pytest.raises(ShapeError):
        ssim(small, small, 3)
