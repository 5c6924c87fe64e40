from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from mcan.schemas.model import SUPPORTED_SCALES


class TrainConfig(BaseModel):
    """Optimization recipe; step counts default to 1/100 of the full-length schedule"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(2e-4, gt=0, description="Initial learning rate")
    halve_every: int = Field(4000, gt=0, description="Steps between learning-rate halvings")
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    batch: int = Field(64, ge=1)
    max_steps: int = Field(12000, ge=0)
    patch: int = Field(64, ge=8, description="LR patch size in pixels")
    scales: Tuple[int, ...] = Field((2,), description="Scales sampled uniformly per batch")
    seed: int = 0
    log_every: int = Field(100, ge=1)
    checkpoint_every: int = Field(0, ge=0, description="0 disables periodic checkpoints")
    prefetch: int = Field(0, ge=0, description="Bounded queue depth of the background loader; 0 loads inline")

    @model_validator(mode="after")
    def check_scales(self) -> "TrainConfig":
        if not self.scales:
            raise ValueError("scales must not be empty")
        for s in self.scales:
            if s not in SUPPORTED_SCALES:
                raise ValueError(f"unsupported training scale {s}")
        return self


class LossRecord(BaseModel):
    step: int
    loss: float
    lr: float

    def to_csv(self) -> str:
        return f"{self.step},{self.loss:.8g},{self.lr:.8g}"
