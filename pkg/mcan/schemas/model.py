from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

SUPPORTED_SCALES = (2, 3, 4)


class ModelConfig(BaseModel):
    """Architecture hyperparameters of one MCAN network"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field("custom", description="Preset name or free-form label")
    scale: Literal[2, 3, 4] = Field(4, description="Default upscaling factor for inference")
    scales: Tuple[int, ...] = Field(SUPPORTED_SCALES, description="Scales with a reconstruction tail")
    D: int = Field(3, ge=1, description="MCACs in the MIM block")
    K: int = Field(3, ge=1, description="MCABs per MCAC")
    M: int = Field(3, ge=1, description="RCABs per MCAB")
    n_fe: Tuple[int, int] = Field((64, 32), description="Filters of the two feature-extraction convs")
    n_mim: int = Field(32, ge=1, description="Filters inside MIM")
    n_eff: Tuple[int, int] = Field((96, 32), description="Filters of the fusion and reduction convs of EFF")
    n_l: int = Field(256, ge=1, description="Filters of the last conv before the first pixel shuffle")
    n_up: Optional[int] = Field(None, ge=1, description="Channels after each pixel shuffle; n_l // 4 when unset")
    r: int = Field(8, ge=1, description="Channel-attention reduction factor")
    rcab_groups: int = Field(1, ge=1, description="Groups of the two 3x3 convs inside RCAB")
    sigmoid_variant: Literal["standard", "fast"] = "standard"
    mim_connections: bool = True
    eff_enabled: bool = True

    @model_validator(mode="after")
    def check_invariants(self) -> "ModelConfig":
        if not self.scales:
            raise ValueError("scales must not be empty")
        for s in self.scales:
            if s not in SUPPORTED_SCALES:
                raise ValueError(f"unsupported scale {s}; expected one of {SUPPORTED_SCALES}")
        if len(set(self.scales)) != len(self.scales):
            raise ValueError(f"duplicate entries in scales {self.scales}")
        if self.scale not in self.scales:
            raise ValueError(f"scale {self.scale} has no tail in scales {self.scales}")
        if min(self.n_fe) < 1 or min(self.n_eff) < 1:
            raise ValueError("all widths must be positive")
        if self.n_mim % self.r:
            raise ValueError(f"n_mim={self.n_mim} is not divisible by r={self.r}")
        if self.n_mim % self.rcab_groups:
            raise ValueError(f"n_mim={self.n_mim} is not divisible by rcab_groups={self.rcab_groups}")
        if self.n_fe[1] != self.n_mim:
            raise ValueError(f"n_fe[1]={self.n_fe[1]} must equal n_mim={self.n_mim} (F_0 joins the MIM output)")
        if self.n_eff[0] != self.D * self.n_mim:
            raise ValueError(f"n_eff[0]={self.n_eff[0]} must equal D*n_mim={self.D * self.n_mim}")
        if self.n_eff[1] != self.n_mim:
            raise ValueError(f"n_eff[1]={self.n_eff[1]} must equal n_mim={self.n_mim}")
        if self.n_up is None and self.n_l < 4:
            raise ValueError(f"n_l={self.n_l} is too small to derive n_up; set n_up explicitly")
        return self

    @property
    def upsample_width(self) -> int:
        return self.n_up if self.n_up is not None else self.n_l // 4

    @property
    def attention_width(self) -> int:
        return self.n_mim // self.r
