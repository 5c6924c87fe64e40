from . import count, evaluate, inspect_weights, train, upscale

__all__ = ["count", "evaluate", "inspect_weights", "train", "upscale"]
