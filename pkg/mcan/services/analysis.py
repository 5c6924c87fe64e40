"""
Static cost accounting: parameters, convolution mult-adds and gate counts.

Only convolution MACs are counted; biases, activations, pooling, pixel shuffle,
the bilinear skip and the per-image attention convs on pooled maps are free.
Mult-adds are normalized to a target HR size: a layer running at resolution
factor f (relative to the LR input) sees f^2 * (hr_h * hr_w / s^2) pixels.
"""

import logging
from typing import Optional, Sequence, Tuple

from mcan.exceptions import ConfigError
from mcan.models.graph import Node
from mcan.models.network import Model
from mcan.schemas import CostReport, LayerCost, ModelConfig
from mcan.tensor import ConvSpec

logger = logging.getLogger(__name__)

HR_720P = (720, 1280)


def conv_params(spec: ConvSpec) -> int:
    kh, kw = spec.kernel
    weights = kh * kw * (spec.in_channels // spec.groups) * spec.out_channels
    return weights + (spec.out_channels if spec.has_bias else 0)


def conv_macs_per_pixel(spec: ConvSpec) -> int:
    kh, kw = spec.kernel
    return kh * kw * (spec.in_channels // spec.groups) * spec.out_channels


def lr_area(hr_size: Tuple[int, int], scale: int) -> int:
    """LR pixel count for an HR target; the HR area must be a multiple of scale^2"""
    h, w = hr_size
    if h < 1 or w < 1:
        raise ConfigError(f"HR size must be positive, got {w}x{h}")
    if (h * w) % (scale * scale):
        raise ConfigError(f"HR area {w}x{h} is not divisible by {scale}^2")
    return h * w // (scale * scale)


def _node_macs(node: Node, area: int) -> int:
    if node.pooled:
        # attention convs run once per image on the pooled 1x1 map
        return 0
    return conv_macs_per_pixel(node.conv) * node.res * node.res * area


def count_params(model: Model) -> int:
    """Every weight and bias of the model, all reconstruction tails included"""
    return sum(conv_params(node.conv) for node in model.conv_nodes())


def count_mult_adds(model: Model, hr_size: Tuple[int, int] = HR_720P, scale: Optional[int] = None) -> int:
    scale = scale or model.config.scale
    area = lr_area(hr_size, scale)
    return sum(_node_macs(node, area) for node in model.conv_nodes(scale))


def count_sigmoids(config: ModelConfig) -> int:
    """One gate per channel of every RCAB's attention: D*K*M*n_mim"""
    return config.D * config.K * config.M * config.n_mim


def count_conv_stack(specs: Sequence[ConvSpec], hr_size: Tuple[int, int] = HR_720P) -> Tuple[int, int]:
    """Params and mult-adds of a plain conv stack run entirely at HR resolution"""
    pixels = hr_size[0] * hr_size[1]
    params = sum(conv_params(spec) for spec in specs)
    mult_adds = sum(conv_macs_per_pixel(spec) * pixels for spec in specs)
    return params, mult_adds


def report(model: Model, hr_size: Tuple[int, int] = HR_720P, scale: Optional[int] = None) -> CostReport:
    """Totals plus a row per conv; tails of other scales appear with zero mult-adds"""
    scale = scale or model.config.scale
    area = lr_area(hr_size, scale)
    rows = []
    for node in model.conv_nodes():
        active = node.scale is None or node.scale == scale
        rows.append(LayerCost(
            name=node.name,
            params=conv_params(node.conv),
            mult_adds=_node_macs(node, area) if active else 0,
        ))
    result = CostReport(
        model=model.config.name,
        scale=scale,
        hr_size=tuple(hr_size),
        params=sum(row.params for row in rows),
        mult_adds=sum(row.mult_adds for row in rows),
        sigmoid_count=count_sigmoids(model.config),
        per_layer=rows,
    )
    logger.debug(f"Cost report for {result.model} x{scale}: {result.params:,} params, {result.mult_adds:,} mult-adds")
    return result
