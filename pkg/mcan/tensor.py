"""
Dense NCHW float32 tensors and the primitives every MCAN layer is composed from.

Tensors are immutable: the backing array is private and read-only, and every
primitive returns a new tensor.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from mcan import kernels
from mcan.exceptions import ShapeError

_AXES = ("n", "c", "h", "w")


class Tensor:
    """Dense array of 32-bit floats; activations are 4-D NCHW, biases 1-D"""

    __slots__ = ("_data",)

    def __init__(self, data):
        array = np.array(data, dtype=np.float32, order="C", copy=True)
        if not 1 <= array.ndim <= 4:
            raise ShapeError(f"tensor must have 1 to 4 dimensions, got shape {array.shape}")
        array.flags.writeable = False
        self._data = array

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """Adopt an array produced internally without copying when it is already float32"""
        if array.dtype != np.float32 or not array.flags.c_contiguous or not 1 <= array.ndim <= 4:
            return cls(array)
        tensor = cls.__new__(cls)
        array.flags.writeable = False
        tensor._data = array
        return tensor

    @classmethod
    def zeros(cls, shape: Tuple[int, int, int, int]) -> "Tensor":
        return cls.wrap(np.zeros(shape, dtype=np.float32))

    @classmethod
    def full(cls, shape: Tuple[int, int, int, int], value: float) -> "Tensor":
        return cls.wrap(np.full(shape, value, dtype=np.float32))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the values"""
        return self._data

    def numpy(self) -> np.ndarray:
        """Writable copy of the values"""
        return self._data.copy()

    def channel_slice(self, start: int, stop: int) -> "Tensor":
        return Tensor(self._data[:, start:stop])

    def __len__(self) -> int:
        return self._data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def equals(self, other: "Tensor") -> bool:
        """Bitwise equality of shape and values"""
        return self.shape == other.shape and self._data.tobytes() == other._data.tobytes()


@dataclass(frozen=True)
class ConvSpec:
    kernel: Tuple[int, int]
    in_channels: int
    out_channels: int
    groups: int = 1
    padding: Tuple[int, int] = (0, 0)
    has_bias: bool = True

    def __post_init__(self):
        if self.groups < 1:
            raise ShapeError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups:
            raise ShapeError(f"in_channels {self.in_channels} not divisible by groups {self.groups}")
        if self.out_channels % self.groups:
            raise ShapeError(f"out_channels {self.out_channels} not divisible by groups {self.groups}")

    @classmethod
    def square(cls, size: int, in_channels: int, out_channels: int, groups: int = 1) -> "ConvSpec":
        """Shape-preserving size x size convolution with bias"""
        return cls((size, size), in_channels, out_channels, groups, (size // 2, size // 2))

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    @property
    def bias_shape(self) -> Optional[Tuple[int]]:
        return (self.out_channels,) if self.has_bias else None

    def output_size(self, h: int, w: int) -> Tuple[int, int]:
        return h + 2 * self.padding[0] - self.kernel[0] + 1, w + 2 * self.padding[1] - self.kernel[1] + 1


def _nchw(t: Tensor, op: str):
    if len(t.shape) != 4:
        raise ShapeError(f"{op}: expected a 4-D (n, c, h, w) tensor, got shape {t.shape}")


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if len(a.shape) != len(b.shape):
        raise ShapeError(f"{op}: rank differs ({a.shape} vs {b.shape})")
    names = _AXES if len(a.shape) == 4 else tuple(f"axis {i}" for i in range(len(a.shape)))
    for axis, da, db in zip(names, a.shape, b.shape):
        if da != db:
            raise ShapeError(f"{op}: dimension {axis} differs ({da} vs {db})")


def conv2d(input: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    _nchw(input, "conv2d")
    if input.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d: input channels {input.shape[1]} != in_channels {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        for axis, got, want in zip(("out", "in/groups", "kh", "kw"), weight.shape, spec.weight_shape):
            if got != want:
                raise ShapeError(f"conv2d: weight dimension {axis} is {got}, expected {want}")
        raise ShapeError(f"conv2d: weight shape {weight.shape} != {spec.weight_shape}")
    if spec.has_bias:
        if bias is None or bias.data.size != spec.out_channels:
            raise ShapeError(f"conv2d: bias must hold {spec.out_channels} values")
    elif bias is not None:
        raise ShapeError("conv2d: bias given for a bias-free convolution")
    h_out, w_out = spec.output_size(input.shape[2], input.shape[3])
    if h_out < 0 or w_out < 0:
        raise ShapeError(f"conv2d: padding {spec.padding} yields negative output size ({h_out}, {w_out})")
    out = kernels.conv2d(
        input.data,
        weight.data,
        bias.data.reshape(-1) if bias is not None else None,
        spec.groups,
        spec.padding,
    )
    return Tensor.wrap(out)


def relu(t: Tensor) -> Tensor:
    return Tensor.wrap(kernels.relu(t.data))


def sigmoid(t: Tensor) -> Tensor:
    return Tensor.wrap(kernels.sigmoid(t.data))


def fast_sigmoid(t: Tensor) -> Tensor:
    """x / (1 + |x|), an odd function with range (-1, 1)"""
    return Tensor.wrap(kernels.fast_sigmoid(t.data))


def global_avg_pool(t: Tensor) -> Tensor:
    _nchw(t, "global_avg_pool")
    if t.shape[2] * t.shape[3] < 1:
        raise ShapeError(f"global_avg_pool: empty spatial extent {t.shape[2]}x{t.shape[3]}")
    return Tensor.wrap(np.ascontiguousarray(kernels.global_avg_pool(t.data)))


def scale_channels(t: Tensor, s: Tensor) -> Tensor:
    _nchw(t, "scale_channels")
    n, c = t.shape[:2]
    if s.shape != (n, c, 1, 1):
        raise ShapeError(f"scale_channels: scores shape {s.shape} does not match (n={n}, c={c}, 1, 1)")
    return Tensor.wrap(kernels.scale_channels(t.data, s.data))


def pixel_shuffle(t: Tensor, s: int) -> Tensor:
    _nchw(t, "pixel_shuffle")
    c = t.shape[1]
    if s < 1 or c % (s * s):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by {s}^2")
    return Tensor.wrap(kernels.pixel_shuffle(t.data, s))


def pixel_unshuffle(t: Tensor, s: int) -> Tensor:
    _nchw(t, "pixel_unshuffle")
    h, w = t.shape[2:]
    if s < 1 or h % s or w % s:
        raise ShapeError(f"pixel_unshuffle: spatial size {h}x{w} not divisible by {s}")
    return Tensor.wrap(kernels.pixel_unshuffle(t.data, s))


def bilinear_resize(t: Tensor, s: int) -> Tensor:
    _nchw(t, "bilinear_resize")
    if s < 1:
        raise ShapeError(f"bilinear_resize: factor must be >= 1, got {s}")
    return Tensor.wrap(np.ascontiguousarray(kernels.bilinear_resize(t.data, s)))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels: nothing to concatenate")
    first = parts[0]
    for part in parts:
        _nchw(part, "concat_channels")
    for index, part in enumerate(parts[1:], start=1):
        for axis in (0, 2, 3):
            if part.shape[axis] != first.shape[axis]:
                raise ShapeError(
                    f"concat_channels: part {index} dimension {_AXES[axis]} is {part.shape[axis]}, "
                    f"expected {first.shape[axis]}"
                )
    if len(parts) == 1:
        return first
    return Tensor.wrap(kernels.concat_channels([p.data for p in parts]))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return Tensor.wrap(a.data + b.data)


def dihedral(t: Tensor, g: int) -> Tensor:
    return Tensor.wrap(kernels.dihedral(t.data, g))


def inverse_dihedral(t: Tensor, g: int) -> Tensor:
    return Tensor.wrap(kernels.inverse_dihedral(t.data, g))
