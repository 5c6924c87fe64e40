"""
Graph evaluation and reverse-mode differentiation over the primitive set.

The executor works on raw numpy arrays so the same code path serves float32
inference and float64 gradient checking.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, MutableMapping, Optional, Sequence

import numpy as np

from mcan import kernels
from mcan.exceptions import ShapeError
from mcan.models.graph import GATE_OPS, Node


@dataclass
class Trace:
    """Records which nodes a forward pass evaluated"""
    evaluated: List[str] = field(default_factory=list)
    gate_channels: int = 0
    batch: int = 0

    @property
    def gate_count(self) -> int:
        """Sigmoid evaluations per image"""
        return self.gate_channels // self.batch if self.batch else 0


def _conv(node: Node, x: np.ndarray, params: Mapping[str, np.ndarray]) -> np.ndarray:
    spec = node.conv
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"{node.name}: input has {x.shape[1]} channels, expected {spec.in_channels}")
    weight = params[node.weight_name]
    bias = params.get(node.bias_name) if spec.has_bias else None
    return kernels.conv2d(x, weight, bias, spec.groups, spec.padding)


def evaluate(
    nodes: Sequence[Node],
    params: Mapping[str, np.ndarray],
    env: MutableMapping[str, np.ndarray],
    trace: Optional[Trace] = None,
) -> MutableMapping[str, np.ndarray]:
    """Evaluate nodes in order; env must already hold every external input"""
    for node in nodes:
        if node.op == "input":
            if node.name not in env:
                raise ShapeError(f"graph input {node.name} was not provided")
            continue
        args = [env[ref] for ref in node.inputs]
        op = node.op
        if op == "conv":
            out = _conv(node, args[0], params)
        elif op == "relu":
            out = kernels.relu(args[0])
        elif op == "sigmoid":
            out = kernels.sigmoid(args[0])
        elif op == "fast_sigmoid":
            out = kernels.fast_sigmoid(args[0])
        elif op == "pool":
            out = kernels.global_avg_pool(args[0])
        elif op == "scale":
            out = kernels.scale_channels(args[0], args[1])
        elif op == "add":
            if args[0].shape != args[1].shape:
                raise ShapeError(f"{node.name}: cannot add shapes {args[0].shape} and {args[1].shape}")
            out = args[0] + args[1]
        elif op == "concat":
            out = kernels.concat_channels(args)
        elif op == "shuffle":
            out = kernels.pixel_shuffle(args[0], node.factor)
        elif op == "bilinear":
            out = kernels.bilinear_resize(args[0], node.factor)
        else:
            raise ValueError(f"unknown op {op!r} at {node.name}")
        env[node.name] = out
        if trace is not None:
            trace.evaluated.append(node.name)
            if op in GATE_OPS:
                trace.gate_channels += out.shape[0] * out.shape[1]
                trace.batch = out.shape[0]
    return env


def backpropagate(
    nodes: Sequence[Node],
    params: Mapping[str, np.ndarray],
    env: Mapping[str, np.ndarray],
    seeds: Mapping[str, np.ndarray],
) -> Dict[str, np.ndarray]:
    """
    Reverse sweep over evaluated nodes.

    ``env`` is the forward environment (every node output), ``seeds`` maps output
    names to upstream gradients. Returns gradients keyed by weight/bias name.
    Contributions to a shared input are accumulated in reverse node order.
    """
    grads: Dict[str, np.ndarray] = dict(seeds)
    graph_inputs = {node.name for node in nodes if node.op == "input"}
    param_grads: Dict[str, np.ndarray] = {}

    def push(name: str, value: np.ndarray):
        if name in grads:
            grads[name] = grads[name] + value
        else:
            grads[name] = value

    for node in reversed(nodes):
        g = grads.pop(node.name, None)
        if g is None or node.op == "input":
            continue
        op = node.op
        args = [env[ref] for ref in node.inputs]
        if op == "conv":
            spec = node.conv
            src = node.inputs[0]
            needs_input = src not in graph_inputs
            gx, gw, gb = kernels.conv2d_backward(
                g, args[0], params[node.weight_name], spec.groups, spec.padding, need_input_grad=needs_input
            )
            param_grads[node.weight_name] = gw
            if spec.has_bias:
                param_grads[node.bias_name] = gb
            if gx is not None:
                push(src, gx)
        elif op == "relu":
            push(node.inputs[0], kernels.relu_backward(g, args[0]))
        elif op == "sigmoid":
            push(node.inputs[0], kernels.sigmoid_backward(g, env[node.name]))
        elif op == "fast_sigmoid":
            push(node.inputs[0], kernels.fast_sigmoid_backward(g, args[0]))
        elif op == "pool":
            push(node.inputs[0], kernels.global_avg_pool_backward(g, args[0].shape))
        elif op == "scale":
            gx, gs = kernels.scale_channels_backward(g, args[0], args[1])
            push(node.inputs[0], gx)
            push(node.inputs[1], gs)
        elif op == "add":
            push(node.inputs[0], g)
            push(node.inputs[1], g)
        elif op == "concat":
            for ref, part in zip(node.inputs, kernels.concat_channels_backward(g, [a.shape[1] for a in args])):
                push(ref, part)
        elif op == "shuffle":
            push(node.inputs[0], kernels.pixel_unshuffle(g, node.factor))
        elif op == "bilinear":
            # parameter-free skip path; the network input needs no gradient
            continue
        else:
            raise ValueError(f"unknown op {op!r} at {node.name}")
    return param_grads
