"""
Static computation graph of an MCAN network.

Each node produces exactly one feature map, referenced by the node name. A
builder appends nodes in evaluation order and checks channel counts
symbolically, so a finished graph is acyclic and shape-consistent by
construction.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from mcan.exceptions import ShapeError
from mcan.tensor import ConvSpec

OPS = (
    "input", "conv", "relu", "sigmoid", "fast_sigmoid", "pool", "scale",
    "add", "concat", "shuffle", "bilinear",
)
GATE_OPS = ("sigmoid", "fast_sigmoid")


@dataclass(frozen=True)
class Node:
    name: str
    op: str
    inputs: Tuple[str, ...] = ()
    channels: int = 0
    res: int = 1
    conv: Optional[ConvSpec] = None
    factor: int = 1
    scale: Optional[int] = None
    pooled: bool = False

    @property
    def weight_name(self) -> str:
        return f"{self.name}.weight"

    @property
    def bias_name(self) -> str:
        return f"{self.name}.bias"


class GraphBuilder:
    """Appends nodes in evaluation order with symbolic channel/resolution checks"""

    def __init__(self):
        self.nodes: List[Node] = []
        self._index: Dict[str, Node] = {}
        self.scale: Optional[int] = None

    def __getitem__(self, name: str) -> Node:
        return self._index[name]

    def _append(self, node: Node) -> str:
        if node.name in self._index:
            raise ShapeError(f"duplicate node name {node.name}")
        for ref in node.inputs:
            if ref not in self._index:
                raise ShapeError(f"{node.name}: input {ref} is not defined before use")
        self.nodes.append(node)
        self._index[node.name] = node
        return node.name

    def input(self, name: str, channels: int) -> str:
        return self._append(Node(name, "input", (), channels))

    def conv(self, name: str, source: str, out_channels: int, kernel: int, groups: int = 1) -> str:
        src = self._index[source]
        spec = ConvSpec.square(kernel, src.channels, out_channels, groups)
        return self._append(Node(name, "conv", (source,), out_channels, src.res, conv=spec,
                                 scale=self.scale, pooled=src.pooled))

    def unary(self, name: str, op: str, source: str) -> str:
        src = self._index[source]
        return self._append(Node(name, op, (source,), src.channels, src.res, scale=self.scale, pooled=src.pooled))

    def pool(self, name: str, source: str) -> str:
        src = self._index[source]
        return self._append(Node(name, "pool", (source,), src.channels, src.res, scale=self.scale, pooled=True))

    def scale_by(self, name: str, source: str, scores: str) -> str:
        src, gate = self._index[source], self._index[scores]
        if not gate.pooled or gate.channels != src.channels:
            raise ShapeError(f"{name}: scores {scores} ({gate.channels} ch) cannot gate {source} ({src.channels} ch)")
        return self._append(Node(name, "scale", (source, scores), src.channels, src.res, scale=self.scale))

    def add(self, name: str, left: str, right: str) -> str:
        a, b = self._index[left], self._index[right]
        if (a.channels, a.res, a.pooled) != (b.channels, b.res, b.pooled):
            raise ShapeError(f"{name}: cannot add {left} ({a.channels} ch, x{a.res}) and {right} ({b.channels} ch, x{b.res})")
        return self._append(Node(name, "add", (left, right), a.channels, a.res, scale=self.scale))

    def concat(self, name: str, sources: Sequence[str]) -> str:
        parts = [self._index[s] for s in sources]
        if len({(p.res, p.pooled) for p in parts}) != 1:
            raise ShapeError(f"{name}: concatenated parts differ in spatial size")
        width = sum(p.channels for p in parts)
        return self._append(Node(name, "concat", tuple(sources), width, parts[0].res, scale=self.scale))

    def fuse(self, name: str, sources: Sequence[str], out_channels: int, kernel: int) -> str:
        """Concatenate (when more than one source) and convolve"""
        if len(sources) == 1:
            return self.conv(name, sources[0], out_channels, kernel)
        joined = self.concat(f"{name}.cat", sources)
        return self.conv(name, joined, out_channels, kernel)

    def shuffle(self, name: str, source: str, factor: int) -> str:
        src = self._index[source]
        if src.channels % (factor * factor):
            raise ShapeError(f"{name}: {src.channels} channels not divisible by {factor}^2")
        return self._append(Node(name, "shuffle", (source,), src.channels // (factor * factor),
                                 src.res * factor, factor=factor, scale=self.scale))

    def bilinear(self, name: str, source: str, factor: int) -> str:
        src = self._index[source]
        return self._append(Node(name, "bilinear", (source,), src.channels, src.res * factor,
                                 factor=factor, scale=self.scale))

    def build(self) -> Tuple[Node, ...]:
        return tuple(self.nodes)


@dataclass(frozen=True)
class Block:
    """A named sub-graph: its nodes, the external feature maps it reads, and what it exposes"""
    name: str
    nodes: Tuple[Node, ...]
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]

    @classmethod
    def from_nodes(cls, name: str, nodes: Iterable[Node], outputs: Sequence[str] = ()) -> "Block":
        nodes = tuple(nodes)
        if not nodes:
            raise KeyError(f"no nodes under {name}")
        produced = {node.name for node in nodes}
        external: List[str] = []
        for node in nodes:
            for ref in node.inputs:
                if ref not in produced and ref not in external:
                    external.append(ref)
        return cls(name, nodes, tuple(external), tuple(outputs) or (nodes[-1].name,))

    def count(self, op: str) -> int:
        return sum(1 for node in self.nodes if node.op == op)


def edges(nodes: Iterable[Node]) -> List[Tuple[str, str]]:
    return [(ref, node.name) for node in nodes for ref in node.inputs]
