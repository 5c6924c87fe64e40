from .model import ModelConfig, SUPPORTED_SCALES
from .training import TrainConfig, LossRecord
from .reports import LayerCost, CostReport, ImageScore, EvalReport
from .run import RunConfig

__all__ = [
    "ModelConfig", "SUPPORTED_SCALES",
    "TrainConfig", "LossRecord",
    "LayerCost", "CostReport", "ImageScore", "EvalReport",
    "RunConfig",
]
