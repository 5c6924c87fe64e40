import math
from typing import List

from pydantic import BaseModel, Field


def _giga(value: int) -> str:
    return f"{value / 1e9:.2f}G"


class LayerCost(BaseModel):
    name: str
    params: int
    mult_adds: int


class CostReport(BaseModel):
    model: str
    scale: int
    hr_size: tuple[int, int]
    params: int
    mult_adds: int
    sigmoid_count: int
    per_layer: List[LayerCost] = Field(default_factory=list)

    def to_table(self, per_layer: bool = False) -> str:
        lines = [
            f"model       {self.model} x{self.scale}",
            f"hr size     {self.hr_size[1]}x{self.hr_size[0]}",
            f"params      {self.params:,} ({self.params / 1e3:.0f}K)",
            f"mult-adds   {self.mult_adds:,} ({_giga(self.mult_adds)})",
            f"sigmoids    {self.sigmoid_count:,}",
        ]
        if per_layer:
            width = max((len(row.name) for row in self.per_layer), default=4)
            lines.append("")
            lines.append(f"{'layer':<{width}}  {'params':>10}  {'mult-adds':>16}")
            for row in self.per_layer:
                lines.append(f"{row.name:<{width}}  {row.params:>10,}  {row.mult_adds:>16,}")
        return "\n".join(lines)

    def to_records(self, per_layer: bool = False) -> str:
        lines = [
            f"model={self.model}",
            f"scale={self.scale}",
            f"hr={self.hr_size[1]}x{self.hr_size[0]}",
            f"params={self.params}",
            f"mult_adds={self.mult_adds}",
            f"sigmoids={self.sigmoid_count}",
        ]
        if per_layer:
            lines.extend(f"layer={row.name},{row.params},{row.mult_adds}" for row in self.per_layer)
        return "\n".join(lines)


class ImageScore(BaseModel):
    name: str
    psnr: float
    ssim: float = Field(..., ge=-1.0, le=1.0)


def _fmt_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


class EvalReport(BaseModel):
    """Per-image and mean Y-channel PSNR/SSIM for one dataset and scale"""
    dataset: str
    scale: int
    shave: int
    ensemble: bool = False
    baseline: bool = False
    rows: List[ImageScore] = Field(default_factory=list)
    skipped: List[str] = Field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return math.fsum(row.psnr for row in self.rows) / len(self.rows) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return math.fsum(row.ssim for row in self.rows) / len(self.rows) if self.rows else float("nan")

    def to_table(self) -> str:
        width = max([len(row.name) for row in self.rows] + [len("MEAN")])
        suffix = "+" if self.ensemble else ""
        if self.baseline:
            suffix += " bicubic"
        lines = [f"{self.dataset} x{self.scale}{suffix} (shave {self.shave})",
                 f"{'image':<{width}}  {'PSNR':>9}  {'SSIM':>7}"]
        lines.extend(f"{row.name:<{width}}  {_fmt_psnr(row.psnr):>9}  {row.ssim:>7.4f}" for row in self.rows)
        lines.append(f"{'MEAN':<{width}}  {_fmt_psnr(self.mean_psnr):>9}  {self.mean_ssim:>7.4f}")
        lines.extend(f"skipped: {name}" for name in self.skipped)
        return "\n".join(lines)

    def to_records(self) -> str:
        lines = [f"{row.name},{_fmt_psnr(row.psnr)},{row.ssim:.6f}" for row in self.rows]
        lines.append(f"MEAN,{_fmt_psnr(self.mean_psnr)},{self.mean_ssim:.6f}")
        return "\n".join(lines)
