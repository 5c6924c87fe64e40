"""
Geometric self-ensemble and benchmark evaluation.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np

from mcan.config import settings
from mcan.exceptions import ConfigError, DatasetError, ImageIOError, ShapeError
from mcan.models.network import Model, forward
from mcan.schemas import EvalReport, ImageScore
from mcan.services.imaging import (
    Image,
    PathLike,
    bicubic_downscale,
    bicubic_upscale,
    center_crop,
    list_pngs,
    load_png,
    to_image,
    to_tensor,
)
from mcan.services.metrics import psnr, ssim
from mcan.tensor import Tensor, dihedral, inverse_dihedral

logger = logging.getLogger(__name__)

ALL_TRANSFORMS = tuple(range(8))


def self_ensemble(model: Model, I_LR: Tensor, transforms: Iterable[int] = ALL_TRANSFORMS, scale: Optional[int] = None) -> Tensor:
    """Mean of the inverse-transformed outputs over dihedral transforms of the input"""
    transforms = tuple(transforms)
    if not transforms:
        raise ValueError("self_ensemble needs at least one transform")
    total = None
    for g in transforms:
        out = inverse_dihedral(forward(model, dihedral(I_LR, g), scale), g).data
        total = out.copy() if total is None else total + out
    return Tensor.wrap(total / np.float32(len(transforms)))


def upscale_image(model: Model, image: Image, scale: Optional[int] = None, ensemble: bool = False) -> Image:
    x = to_tensor(image)
    out = self_ensemble(model, x, scale=scale) if ensemble else forward(model, x, scale)
    return to_image(out)


@dataclass(frozen=True)
class Sample:
    name: str
    hr: Path
    lr: Optional[Path] = None


def discover(dataset_dir: PathLike) -> List[Sample]:
    """Flat directory of HR PNGs, or HR/ and LR/ subdirectories with matching names"""
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    hr_dir, lr_dir = root / "HR", root / "LR"
    if hr_dir.is_dir() and lr_dir.is_dir():
        samples = [Sample(path.name, path, lr_dir / path.name) for path in list_pngs(hr_dir)]
    else:
        samples = [Sample(path.name, path) for path in list_pngs(root)]
    if not samples:
        raise DatasetError(f"{root}: no PNG images found")
    return sorted(samples, key=lambda s: s.name)


def _pair(sample: Sample, scale: int) -> Tuple[Image, Image]:
    hr = load_png(sample.hr)
    if sample.lr is None:
        hr = center_crop(hr, scale)
        return bicubic_downscale(hr, scale), hr
    lr = load_png(sample.lr)
    h, w = lr.height * scale, lr.width * scale
    if hr.height < h or hr.width < w:
        raise ShapeError(f"{sample.name}: HR {hr.width}x{hr.height} is smaller than x{scale} of LR {lr.width}x{lr.height}")
    top, left = (hr.height - h) // 2, (hr.width - w) // 2
    return lr, hr.crop(top, left, h, w)


def score_sample(
    model: Model,
    sample: Sample,
    scale: int,
    ensemble: bool,
    baseline: bool = False,
) -> Union[ImageScore, str]:
    """Score one image; unreadable or undersized images come back as their name"""
    try:
        lr, hr = _pair(sample, scale)
        sr = bicubic_upscale(lr, scale) if baseline else upscale_image(model, lr, scale, ensemble)
        return ImageScore(name=sample.name, psnr=psnr(sr, hr, scale), ssim=ssim(sr, hr, scale))
    except (ImageIOError, ShapeError) as exc:
        logger.warning(f"Skipping {sample.name}: {exc.detail}")
        return sample.name


def evaluate(
    model: Model,
    dataset_dir: PathLike,
    scale: Optional[int] = None,
    ensemble: bool = False,
    threads: Optional[int] = None,
    baseline: bool = False,
) -> EvalReport:
    """
    Per-image and mean Y-channel PSNR/SSIM, ordered by filename.

    With ``baseline`` the LR inputs are upscaled by plain bicubic
    interpolation instead of the model.
    """
    if baseline and ensemble:
        raise ConfigError("the bicubic baseline has no self-ensemble")
    scale = scale or model.config.scale
    if scale not in model.config.scales:
        raise ShapeError(f"model has no x{scale} tail (tails: {model.config.scales})")
    samples = discover(dataset_dir)
    workers = max(1, min(threads or settings.THREADS, len(samples)))
    logger.info(f"Evaluating {len(samples)} images from {dataset_dir} at x{scale} on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda s: score_sample(model, s, scale, ensemble, baseline), samples))
    rows = [r for r in results if isinstance(r, ImageScore)]
    skipped = [r for r in results if isinstance(r, str)]
    if not rows:
        raise DatasetError(f"{dataset_dir}: none of {len(samples)} images could be read and upscaled")
    return EvalReport(
        dataset=Path(dataset_dir).name,
        scale=scale,
        shave=scale,
        ensemble=ensemble,
        baseline=baseline,
        rows=rows,
        skipped=skipped,
    )
