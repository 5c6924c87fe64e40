from .network import Model, WeightStore, build, forward, preset

__all__ = ["Model", "WeightStore", "build", "forward", "preset"]
