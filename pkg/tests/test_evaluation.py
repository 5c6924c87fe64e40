import math

import numpy as np
import pytest

from mcan.exceptions import ConfigError, DatasetError, ShapeError
from mcan.models.network import build, forward, zero_weights
from mcan.schemas import ModelConfig
from mcan.services.evaluation import discover, evaluate, self_ensemble, upscale_image
from mcan.services.imaging import Image, bicubic_downscale, bicubic_upscale, load_png, save_png, to_image, to_tensor
from mcan.services.metrics import psnr, ssim
from mcan.tensor import Tensor, bilinear_resize, dihedral


def tiny_config() -> ModelConfig:
    return ModelConfig(name="tiny", scale=2, scales=(2, 3), D=1, K=1, M=2,
                       n_fe=(8, 4), n_mim=4, n_eff=(4, 4), n_l=8, r=2)


def smooth_image(rng, h, w) -> Image:
    yy, xx = np.mgrid[0:h, 0:w]
    channels = []
    for _ in range(3):
        fx, fy, phase = rng.uniform(0.1, 0.5, 3)
        channels.append(127.5 + 100 * np.sin(fx * xx + fy * yy + phase))
    return Image(np.stack(channels, axis=-1).astype(np.uint8))


@pytest.fixture
def model():
    """Randomly initialized tiny model"""
    return build(tiny_config(), seed=1)


@pytest.fixture
def zero_model(model):
    """Tiny model whose output is the bilinear skip"""
    return zero_weights(model)


@pytest.fixture
def dataset(tmp_path):
    """Three 24x26 HR images in a flat directory"""
    rng = np.random.default_rng(5)
    root = tmp_path / "Set3"
    root.mkdir()
    for name in ("c.png", "a.png", "b.png"):
        save_png(smooth_image(rng, 24, 26), root / name)
    return root


def bilinear_baseline(hr: Image, scale: int) -> Image:
    lr = bicubic_downscale(hr, scale)
    return to_image(bilinear_resize(to_tensor(lr), scale))


def test_self_ensemble_of_zero_model_is_bilinear(zero_model):
    """Test that averaging transformed bilinear upscales gives the bilinear upscale"""
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 8, 10)))
    out = self_ensemble(zero_model, x)
    np.testing.assert_allclose(out.data, bilinear_resize(x, 2).data, atol=1e-6)


def test_self_ensemble_identity_only_equals_forward(model):
    """Test the single-transform ensemble against a plain forward pass"""
    x = Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 8, 8)))
    assert self_ensemble(model, x, transforms=[0]).equals(forward(model, x))


def test_self_ensemble_is_equivariant(model):
    """Test that every flip and rotation of the input moves the ensemble output the same way"""
    rng = np.random.default_rng(2)
    for trial in range(10):
        scale = 2 + trial % 2
        x = Tensor(rng.uniform(0, 1, (1, 3, 8, int(rng.integers(8, 13)))))
        base = self_ensemble(model, x, scale=scale)
        for g in range(8):
            moved = self_ensemble(model, dihedral(x, g), scale=scale)
            np.testing.assert_allclose(moved.data, dihedral(base, g).data, atol=1e-5)


def test_self_ensemble_needs_a_transform(model):
    """Test that an empty transform list is rejected"""
    with pytest.raises(ValueError):
        self_ensemble(model, Tensor.zeros((1, 3, 8, 8)), transforms=[])


def test_upscale_image_size(model):
    """Test output size at both tails"""
    image = smooth_image(np.random.default_rng(3), 9, 11)
    assert upscale_image(model, image).size == (18, 22)
    assert upscale_image(model, image, 3, ensemble=True).size == (27, 33)


def test_discover_layouts(tmp_path, dataset):
    """Test the flat and the HR/LR layouts"""
    assert [s.name for s in discover(dataset)] == ["a.png", "b.png", "c.png"]
    paired = tmp_path / "paired"
    (paired / "HR").mkdir(parents=True)
    (paired / "LR").mkdir()
    image = smooth_image(np.random.default_rng(4), 24, 24)
    save_png(image, paired / "HR" / "one.png")
    save_png(bicubic_downscale(image, 2), paired / "LR" / "one.png")
    samples = discover(paired)
    assert len(samples) == 1
    assert samples[0].lr == paired / "LR" / "one.png"


def test_discover_rejects_empty(tmp_path):
    """Test empty and missing dataset directories"""
    with pytest.raises(DatasetError):
        discover(tmp_path)
    with pytest.raises(DatasetError):
        discover(tmp_path / "absent")


def test_evaluate_zero_model_matches_bilinear(zero_model, dataset):
    """Test per-image scores against an independently computed bilinear baseline"""
    report = evaluate(zero_model, dataset, scale=2)
    assert [row.name for row in report.rows] == ["a.png", "b.png", "c.png"]
    assert report.dataset == "Set3"
    assert report.shave == 2
    for row in report.rows:
        hr = load_png(dataset / row.name)
        sr = bilinear_baseline(hr, 2)
        assert row.psnr == pytest.approx(psnr(sr, hr, 2), abs=1e-9)
        assert row.ssim == pytest.approx(ssim(sr, hr, 2), abs=1e-9)
    assert report.mean_psnr == pytest.approx(sum(r.psnr for r in report.rows) / 3)
    assert math.isfinite(report.mean_ssim)


def test_evaluate_is_thread_independent(model, dataset):
    """Test that worker count does not change results"""
    one = evaluate(model, dataset, scale=3, threads=1)
    many = evaluate(model, dataset, scale=3, threads=4)
    assert one == many
    assert one.to_records().splitlines()[-1].startswith("MEAN,")


def test_evaluate_skips_unreadable(zero_model, dataset):
    """Test that a corrupt file is skipped and reported"""
    (dataset / "broken.png").write_bytes(b"\x89PNG not really")
    report = evaluate(zero_model, dataset)
    assert report.skipped == ["broken.png"]
    assert len(report.rows) == 3
    assert "skipped: broken.png" in report.to_table()


def test_evaluate_skips_undersized(zero_model, dataset, caplog):
    """Test that an image too small to upscale is skipped like an unreadable one"""
    save_png(smooth_image(np.random.default_rng(8), 10, 10), dataset / "tiny.png")
    report = evaluate(zero_model, dataset, scale=2)
    assert report.skipped == ["tiny.png"]
    assert [row.name for row in report.rows] == ["a.png", "b.png", "c.png"]
    assert "tiny.png" in caplog.text


def test_evaluate_all_unreadable(zero_model, tmp_path):
    """Test that a dataset with no readable image fails"""
    (tmp_path / "x.png").write_bytes(b"nope")
    with pytest.raises(DatasetError):
        evaluate(zero_model, tmp_path)


def test_evaluate_paired_layout(zero_model, tmp_path):
    """Test that provided LR images are used and HR is cropped to match"""
    rng = np.random.default_rng(6)
    hr = smooth_image(rng, 25, 27)
    root = tmp_path / "pairs"
    (root / "HR").mkdir(parents=True)
    (root / "LR").mkdir()
    save_png(hr, root / "HR" / "img.png")
    lr = bicubic_downscale(hr, 2)
    save_png(lr, root / "LR" / "img.png")
    report = evaluate(zero_model, root, scale=2)
    target = hr.crop(0, 0, 24, 26)
    sr = to_image(bilinear_resize(to_tensor(lr), 2))
    assert report.rows[0].psnr == pytest.approx(psnr(sr, target, 2), abs=1e-9)


def test_evaluate_unknown_scale(dataset):
    """Test that a scale without a tail is rejected"""
    model = build(tiny_config().model_copy(update={"scales": (2,)}), seed=0)
    with pytest.raises(ShapeError):
        evaluate(model, dataset, scale=4)


def test_evaluate_self_ensemble_flag(zero_model, dataset):
    """Test that the ensemble is recorded and scores stay close to the plain run"""
    plain = evaluate(zero_model, dataset)
    ensembled = evaluate(zero_model, dataset, ensemble=True)
    assert ensembled.ensemble
    assert ensembled.mean_psnr == pytest.approx(plain.mean_psnr, abs=0.05)


def test_evaluate_bicubic_baseline(model, dataset):
    """Test that the baseline scores plain bicubic upscaling of the same LR inputs"""
    report = evaluate(model, dataset, scale=2, baseline=True)
    assert report.baseline
    assert "bicubic" in report.to_table().splitlines()[0]
    for row in report.rows:
        hr = load_png(dataset / row.name)
        sr = bicubic_upscale(bicubic_downscale(hr, 2), 2)
        assert row.psnr == pytest.approx(psnr(sr, hr, 2), abs=1e-9)
    with pytest.raises(ConfigError):
        evaluate(model, dataset, baseline=True, ensemble=True)
