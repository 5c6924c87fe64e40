"""
MCAN network construction and the staged forward pass.

The network is a static graph (see ``mcan.models.graph``) plus a WeightStore.
Stage functions evaluate slices of that graph, so the staged composition and
``forward`` run exactly the same nodes.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from mcan.exceptions import ConfigError, ShapeError
from mcan.models import executor
from mcan.models.executor import Trace
from mcan.models.graph import Block, GraphBuilder, Node, edges
from mcan.schemas.model import ModelConfig
from mcan.tensor import Tensor

logger = logging.getLogger(__name__)

INPUT = "input"
F0 = "fe.conv1"
BODY_OUT = "body.add"
MIN_INPUT_SIZE = 8

PRESETS: Dict[str, dict] = {
    "MCAN": dict(n_fe=(64, 32), n_mim=32, n_eff=(96, 32), n_l=256, r=8),
    "MCAN-M": dict(n_fe=(64, 24), n_mim=24, n_eff=(72, 24), n_l=128, r=8),
    "MCAN-S": dict(n_fe=(32, 16), n_mim=16, n_eff=(48, 16), n_l=64, r=8),
    # n_l=8 leaves n_l // 4 = 2 channels per shuffle; the tiny variant uses 6
    "MCAN-T": dict(n_fe=(16, 8), n_mim=8, n_eff=(24, 8), n_l=8, n_up=6, r=4, rcab_groups=4),
    "MCAN-FAST": dict(n_fe=(64, 32), n_mim=32, n_eff=(96, 32), n_l=256, r=8, sigmoid_variant="fast"),
}


def preset(name: str, scale: int = 4, **overrides) -> ModelConfig:
    """Hyperparameters of a named member of the family, with overrides"""
    key = name.upper()
    if key not in PRESETS:
        raise ConfigError(f"unknown model {name!r}; expected one of {', '.join(PRESETS)}")
    values = {**PRESETS[key], "name": key, "scale": scale, **overrides}
    try:
        return ModelConfig(**values)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration for {key}: {exc.errors()[0]['msg']}") from exc


class WeightStore(Mapping[str, Tensor]):
    """Named weight tensors; names are unique and shapes fixed once added"""

    def __init__(self, entries: Optional[Mapping[str, Tensor]] = None):
        self._entries: Dict[str, Tensor] = {}
        for name, tensor in (entries or {}).items():
            self.add(name, tensor)

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, name: str, tensor: Tensor):
        if name in self._entries:
            raise ShapeError(f"weight {name} is already defined")
        self._entries[name] = tensor

    def replace(self, name: str, value) -> None:
        """Swap in new values for an existing weight of identical shape"""
        if name not in self._entries:
            raise KeyError(f"unknown weight {name}")
        tensor = value if isinstance(value, Tensor) else Tensor.wrap(np.asarray(value, dtype=np.float32))
        if tensor.shape != self._entries[name].shape:
            raise ShapeError(f"weight {name}: shape {tensor.shape} != {self._entries[name].shape}")
        self._entries[name] = tensor

    def arrays(self, dtype=np.float32) -> Dict[str, np.ndarray]:
        if dtype == np.float32:
            return {name: tensor.data for name, tensor in self._entries.items()}
        return {name: tensor.data.astype(dtype) for name, tensor in self._entries.items()}

    def copy(self) -> "WeightStore":
        return WeightStore(self._entries)

    def equals(self, other: "WeightStore") -> bool:
        if list(self) != list(other):
            return False
        return all(self[name].equals(other[name]) for name in self)

    @property
    def total(self) -> int:
        return sum(len(tensor) for tensor in self._entries.values())


@dataclass(frozen=True)
class BoundBlock:
    """A sub-graph together with the weights it reads"""
    block: Block
    weights: WeightStore

    @property
    def name(self) -> str:
        return self.block.name

    @property
    def inputs(self) -> Tuple[str, ...]:
        return self.block.inputs

    @property
    def outputs(self) -> Tuple[str, ...]:
        return self.block.outputs

    def count(self, op: str) -> int:
        return self.block.count(op)

    def run(self, inputs: Sequence[Tensor]) -> Dict[str, np.ndarray]:
        if len(inputs) != len(self.block.inputs):
            raise ShapeError(
                f"{self.name}: expected {len(self.block.inputs)} inputs {list(self.block.inputs)}, got {len(inputs)}"
            )
        env = {name: tensor.data for name, tensor in zip(self.block.inputs, inputs)}
        return executor.evaluate(self.block.nodes, self.weights.arrays(), env)


class Model:
    """Built MCAN graph and its weights"""

    def __init__(self, config: ModelConfig, nodes: Sequence[Node], weights: WeightStore):
        self.config = config
        self.nodes = tuple(nodes)
        self.weights = weights
        self._index = {node.name: node for node in self.nodes}

    def __repr__(self) -> str:
        return f"Model({self.config.name}, x{self.config.scale}, {self.weights.total:,} weights)"

    def node(self, name: str) -> Node:
        return self._index[name]

    def conv_nodes(self, scale: Optional[int] = None) -> List[Node]:
        nodes = self.path(scale) if scale is not None else self.nodes
        return [node for node in nodes if node.op == "conv"]

    def path(self, scale: Optional[int] = None) -> Tuple[Node, ...]:
        """Body nodes plus the tail of one scale, in evaluation order"""
        scale = scale or self.config.scale
        if scale not in self.config.scales:
            raise ShapeError(f"model has no x{scale} tail (tails: {self.config.scales})")
        return tuple(node for node in self.nodes if node.scale is None or node.scale == scale)

    def output_name(self, scale: Optional[int] = None) -> str:
        return f"tail.x{scale or self.config.scale}.out"

    def parameter_names(self, scale: Optional[int] = None) -> List[str]:
        names = []
        for node in self.conv_nodes(scale):
            names.append(node.weight_name)
            if node.conv.has_bias:
                names.append(node.bias_name)
        return names

    def count(self, op: str, scale: Optional[int] = None) -> int:
        nodes = self.path(scale) if scale is not None else self.nodes
        return sum(1 for node in nodes if node.op == op)

    def edges(self) -> List[Tuple[str, str]]:
        return edges(self.nodes)

    def block(self, prefix: str, outputs: Sequence[str] = (), inputs: Sequence[str] = ()) -> BoundBlock:
        nodes = [node for node in self.nodes if node.name.startswith(prefix + ".")]
        block = Block.from_nodes(prefix, nodes, outputs)
        if inputs:
            if set(inputs) != set(block.inputs):
                raise ShapeError(f"{prefix}: declared inputs {list(inputs)} != referenced {list(block.inputs)}")
            block = Block(block.name, block.nodes, tuple(inputs), block.outputs)
        return BoundBlock(block, self.weights)

    def rcab(self, d: int, k: int, j: int) -> BoundBlock:
        return self.block(f"mim.d{d}.k{k}.m{j}.rcab")

    def mcab(self, d: int, k: int) -> BoundBlock:
        """k-th MCAB of the d-th MCAC; inputs are the head input then the previous MCAB's fusion outputs"""
        cfg = self.config
        prefix = f"mim.d{d}.k{k}"
        head = F0 if d == 0 else f"mim.d{d - 1}.k{k}.m{cfg.M}.fuse"
        inputs = [head]
        if k > 0 and cfg.mim_connections:
            inputs.extend(f"mim.d{d}.k{k - 1}.m{j}.fuse" for j in range(cfg.M + 1))
        outputs = [f"{prefix}.m{j}.fuse" for j in range(cfg.M + 1)]
        return self.block(prefix, outputs, inputs)

    def mcac(self, d: int) -> BoundBlock:
        cfg = self.config
        outputs = [f"mim.d{d}.k{k}.m{cfg.M}.fuse" for k in range(cfg.K)]
        return self.block(f"mim.d{d}", outputs)

    def edge_names(self) -> List[str]:
        cfg = self.config
        return [f"mim.d{d}.k{cfg.K - 1}.m{cfg.M}.fuse" for d in range(cfg.D)]

    def run(
        self,
        x: np.ndarray,
        scale: Optional[int] = None,
        params: Optional[Mapping[str, np.ndarray]] = None,
        trace: Optional[Trace] = None,
    ) -> Dict[str, np.ndarray]:
        """Evaluate the full path on a raw array and return every node output"""
        env = {INPUT: x}
        return executor.evaluate(self.path(scale), params or self.weights.arrays(), env, trace)


# -- construction -----------------------------------------------------------


def _rcab(g: GraphBuilder, cfg: ModelConfig, prefix: str, source: str) -> str:
    n = cfg.n_mim
    x = g.conv(f"{prefix}.conv1", source, n, 3, cfg.rcab_groups)
    x = g.unary(f"{prefix}.relu", "relu", x)
    x = g.conv(f"{prefix}.conv2", x, n, 3, cfg.rcab_groups)
    z = g.pool(f"{prefix}.pool", x)
    z = g.conv(f"{prefix}.down", z, cfg.attention_width, 1)
    z = g.unary(f"{prefix}.down_relu", "relu", z)
    z = g.conv(f"{prefix}.up", z, n, 1)
    gate = "fast_sigmoid" if cfg.sigmoid_variant == "fast" else "sigmoid"
    s = g.unary(f"{prefix}.gate", gate, z)
    x = g.scale_by(f"{prefix}.scale", x, s)
    return g.add(f"{prefix}.out", x, source)


def _mcab(g: GraphBuilder, cfg: ModelConfig, prefix: str, head: str, cross: Optional[Sequence[str]]) -> Tuple[str, ...]:
    n, m_count = cfg.n_mim, cfg.M
    sources = [head] + ([cross[0], cross[m_count]] if cross else [])
    fused = [g.fuse(f"{prefix}.m0.fuse", sources, n, 1)]
    for j in range(m_count):
        out = _rcab(g, cfg, f"{prefix}.m{j}.rcab", fused[j])
        nxt = j + 1
        sources = [out]
        if cross and nxt < m_count:
            sources.append(cross[nxt])
        sources.extend(fused[:nxt])
        fused.append(g.fuse(f"{prefix}.m{nxt}.fuse", sources, n, 1))
    return tuple(fused)


def _upsample_stages(scale: int) -> List[int]:
    if scale == 3:
        return [3]
    return [2] * int(math.log2(scale))


def build_graph(cfg: ModelConfig) -> Tuple[Node, ...]:
    g = GraphBuilder()
    x = g.input(INPUT, 3)
    h = g.conv("fe.conv0", x, cfg.n_fe[0], 3)
    h = g.unary("fe.relu0", "relu", h)
    f0 = g.conv(F0, h, cfg.n_fe[1], 3)

    heads = [f0] * cfg.K
    edge_features = []
    for d in range(cfg.D):
        previous: Optional[Tuple[str, ...]] = None
        row = []
        for k in range(cfg.K):
            cross = previous if cfg.mim_connections else None
            previous = _mcab(g, cfg, f"mim.d{d}.k{k}", heads[k], cross)
            row.append(previous[-1])
        heads = row
        edge_features.append(row[-1])

    if cfg.eff_enabled:
        fused = g.fuse("eff.fuse", edge_features, cfg.n_eff[0], 3)
        fused = g.unary("eff.relu", "relu", fused)
        f_eff = g.conv("eff.reduce", fused, cfg.n_eff[1], 3)
    else:
        f_eff = edge_features[-1]
    body = g.add(BODY_OUT, f_eff, f0)

    for scale in cfg.scales:
        g.scale = scale
        prefix = f"tail.x{scale}"
        h = body
        for i, factor in enumerate(_upsample_stages(scale)):
            h = g.conv(f"{prefix}.up{i}", h, cfg.upsample_width * factor * factor, 3)
            h = g.unary(f"{prefix}.relu{i}", "relu", h)
            h = g.shuffle(f"{prefix}.shuffle{i}", h, factor)
        h = g.conv(f"{prefix}.exit", h, 3, 3)
        skip = g.bilinear(f"{prefix}.skip", x, scale)
        g.add(f"{prefix}.out", h, skip)
        g.scale = None
    return g.build()


def build(config: ModelConfig, seed: int = 0) -> Model:
    """Build the graph and draw U(-k, k), k = 1/sqrt(c_in), weights in build order"""
    try:
        config = ModelConfig.model_validate(config.model_dump())
    except ValidationError as exc:
        raise ConfigError(f"invalid model configuration: {exc.errors()[0]['msg']}") from exc
    nodes = build_graph(config)
    rng = np.random.default_rng(seed)
    weights = WeightStore()
    for node in nodes:
        if node.op != "conv":
            continue
        spec = node.conv
        bound = 1.0 / math.sqrt(spec.in_channels // spec.groups)
        weights.add(node.weight_name, Tensor.wrap(rng.uniform(-bound, bound, spec.weight_shape).astype(np.float32)))
        if spec.has_bias:
            weights.add(node.bias_name, Tensor.wrap(rng.uniform(-bound, bound, spec.bias_shape).astype(np.float32)))
    model = Model(config, nodes, weights)
    logger.debug(f"Built {model} with {len(nodes)} nodes")
    return model


def zero_weights(model: Model) -> Model:
    """Copy of a model with every weight and bias set to zero"""
    weights = WeightStore({name: Tensor(np.zeros(t.shape)) for name, t in model.weights.items()})
    return Model(model.config, model.nodes, weights)


# -- staged forward pass ----------------------------------------------------


def _check_channels(t: Tensor, expected: int, where: str):
    if len(t.shape) != 4:
        raise ShapeError(f"{where}: expected a 4-D (n, c, h, w) tensor, got shape {t.shape}")
    if t.shape[1] != expected:
        raise ShapeError(f"{where}: dimension c is {t.shape[1]}, expected {expected}")


def feature_extract(model: Model, I_LR: Tensor) -> Tensor:
    _check_channels(I_LR, 3, "feature_extract")
    nodes = [node for node in model.nodes if node.name.startswith("fe.")]
    env = executor.evaluate(nodes, model.weights.arrays(), {INPUT: I_LR.data})
    return Tensor.wrap(env[F0])


def rcab_forward(block: BoundBlock, I: Tensor) -> Tensor:
    conv1 = block.block.nodes[0]
    _check_channels(I, conv1.conv.in_channels, block.name)
    env = block.run([I])
    return Tensor.wrap(env[block.outputs[-1]])


def mcab_forward(block: BoundBlock, inputs: Sequence[Tensor]) -> Tuple[Tensor, ...]:
    """Run one MCAB; returns every fusion-conv output F_d^{k,0..M}"""
    if len(inputs) != len(block.inputs):
        raise ShapeError(
            f"{block.name}: this MCAB takes {len(block.inputs)} inputs {list(block.inputs)}, got {len(inputs)}"
        )
    env = block.run(inputs)
    return tuple(Tensor.wrap(env[name]) for name in block.outputs)


def mcac_forward(model: Model, d: int, previous: Sequence[Tensor]) -> Tuple[Tensor, ...]:
    """d-th MCAC: maps the K heads of the previous cell to K new heads"""
    cfg = model.config
    if len(previous) != cfg.K:
        raise ShapeError(f"mcac {d}: expected {cfg.K} head inputs, got {len(previous)}")
    heads = []
    outputs: Tuple[Tensor, ...] = ()
    for k in range(cfg.K):
        _check_channels(previous[k], cfg.n_mim, f"mcac {d} head {k}")
        inputs = [previous[k]]
        if k > 0 and cfg.mim_connections:
            inputs.extend(outputs)
        outputs = mcab_forward(model.mcab(d, k), inputs)
        heads.append(outputs[-1])
    return tuple(heads)


def mim_forward(model: Model, F_0: Tensor) -> Tuple[Tensor, ...]:
    """Chain the D MCACs; returns the edge features (last head of every cell)"""
    cfg = model.config
    _check_channels(F_0, cfg.n_mim, "mim_forward")
    heads: Sequence[Tensor] = [F_0] * cfg.K
    edge_features = []
    for d in range(cfg.D):
        heads = mcac_forward(model, d, heads)
        edge_features.append(heads[-1])
    return tuple(edge_features)


def eff_forward(model: Model, F_EF: Sequence[Tensor]) -> Tensor:
    cfg = model.config
    if len(F_EF) != cfg.D:
        raise ShapeError(f"eff_forward: expected {cfg.D} edge features, got {len(F_EF)}")
    for index, feature in enumerate(F_EF):
        _check_channels(feature, cfg.n_mim, f"eff_forward edge {index}")
    if not cfg.eff_enabled:
        return F_EF[-1]
    nodes = [node for node in model.nodes if node.name.startswith("eff.")]
    env = dict(zip(model.edge_names(), (t.data for t in F_EF)))
    env = executor.evaluate(nodes, model.weights.arrays(), env)
    return Tensor.wrap(env["eff.reduce"])


def reconstruct(model: Model, F_EFF: Tensor, F_0: Tensor, I_LR: Tensor, scale: Optional[int] = None) -> Tensor:
    """I_SR = H_UP(F_EFF + F_0) + U(I_LR)"""
    cfg = model.config
    scale = scale or cfg.scale
    _check_channels(I_LR, 3, "reconstruct")
    _check_channels(F_EFF, cfg.n_mim, "reconstruct F_EFF")
    if F_EFF.shape != F_0.shape:
        raise ShapeError(f"reconstruct: F_EFF {F_EFF.shape} and F_0 {F_0.shape} differ")
    if F_0.shape[2:] != I_LR.shape[2:]:
        raise ShapeError(f"reconstruct: features {F_0.shape[2:]} and input {I_LR.shape[2:]} differ in size")
    f_eff_name = "eff.reduce" if cfg.eff_enabled else model.edge_names()[-1]
    env = {f_eff_name: F_EFF.data, F0: F_0.data, INPUT: I_LR.data}
    nodes = [model.node(BODY_OUT)] + [node for node in model.path(scale) if node.scale == scale]
    env = executor.evaluate(nodes, model.weights.arrays(), env)
    return Tensor.wrap(env[model.output_name(scale)])


def check_input(model: Model, I_LR: Tensor):
    _check_channels(I_LR, 3, "forward")
    h, w = I_LR.shape[2:]
    if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
        raise ShapeError(f"forward: input {h}x{w} is smaller than {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}")


def forward(model: Model, I_LR: Tensor, scale: Optional[int] = None, trace: Optional[Trace] = None) -> Tensor:
    """Full FE -> MIM -> EFF -> reconstruction pass"""
    check_input(model, I_LR)
    env = model.run(I_LR.data, scale, trace=trace)
    return Tensor.wrap(env[model.output_name(scale)])
