from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


class RunConfig(BaseModel):
    """Parsed command line, validated before any work starts"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Literal["count", "upscale", "train", "eval", "inspect-weights"]
    model: Optional[str] = None
    config_path: Optional[str] = None
    scale: Optional[int] = Field(None, ge=2, le=4)
    weights: Optional[str] = None
    input: Optional[str] = None
    output: Optional[str] = None
    dataset: Optional[str] = None
    self_ensemble: bool = False
    sigmoid_variant: Optional[Literal["standard", "fast"]] = None
    mim_connections: bool = True
    eff_enabled: bool = True
    seed: int = 0
    hr_size: Tuple[int, int] = (720, 1280)
    output_format: Literal["table", "records"] = "table"
    per_layer: bool = False
