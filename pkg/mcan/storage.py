"""
Binary weight files.

Layout (all little-endian):
    "MCNW" | version u16 | count u32 | entries | crc32 u32
    entry: name_len u16 | name utf-8 | ndim u8 | dims u32 * ndim | float32 payload
The CRC covers every preceding byte. A checkpoint appends an optimizer section
with the same entry layout:
    "MCNO" | step u64 | count u32 | entries named m/<weight>, v/<weight> | crc32 u32
"""

import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from mcan.exceptions import ChecksumError, ShapeError, WeightFormatError
from mcan.models.network import Model
from mcan.services.training import AdamState
from mcan.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"MCNW"
OPTIMIZER_MAGIC = b"MCNO"
VERSION = 1

PathLike = Union[str, Path]


@dataclass
class WeightFile:
    version: int
    entries: Dict[str, np.ndarray]
    crc_ok: bool = True
    step: Optional[int] = None
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def has_optimizer(self) -> bool:
        return self.step is not None

    def describe(self) -> List[Tuple[str, Tuple[int, ...], int]]:
        return [(name, array.shape, int(array.size)) for name, array in self.entries.items()]


def _encode_entries(entries: Mapping[str, np.ndarray]) -> bytes:
    chunks = [struct.pack("<I", len(entries))]
    for name, array in entries.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def encode(entries: Mapping[str, np.ndarray], optimizer: Optional[Tuple[int, Mapping[str, np.ndarray]]] = None) -> bytes:
    data = _with_crc(MAGIC + struct.pack("<H", VERSION) + _encode_entries(entries))
    if optimizer is not None:
        step, moments = optimizer
        data += _with_crc(OPTIMIZER_MAGIC + struct.pack("<Q", step) + _encode_entries(moments))
    return data


class _Reader:
    """Bounds-checked cursor; running off the end means the file is truncated or corrupt"""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, n: int) -> bytes:
        if n < 0 or self.offset + n > len(self.data):
            raise ChecksumError(f"weight file truncated or corrupt at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def entries(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        entries: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (length,) = self.unpack("<H")
            try:
                name = self.take(length).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ChecksumError(f"weight file corrupt at byte {self.offset}: bad entry name") from exc
            (ndim,) = self.unpack("<B")
            shape = self.unpack(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            payload = self.take(size * 4)
            if name in entries:
                raise WeightFormatError(f"duplicate entry {name}")
            entries[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
        return entries

    def check_crc(self, start: int) -> bool:
        expected = zlib.crc32(self.data[start:self.offset]) & 0xFFFFFFFF
        (stored,) = self.unpack("<I")
        return stored == expected


def decode(data: bytes, verify: bool = True) -> WeightFile:
    """Parse a weight file; with verify=False a CRC mismatch is reported instead of raised"""
    if data[:4] != MAGIC:
        raise WeightFormatError("not an MCAN weight file (bad magic)")
    reader = _Reader(data, 4)
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight file version {version}")
    entries = reader.entries()
    crc_ok = reader.check_crc(0)
    if verify and not crc_ok:
        raise ChecksumError("weight file CRC mismatch")
    result = WeightFile(version, entries, crc_ok)

    if reader.offset < len(data):
        start = reader.offset
        if reader.take(4) != OPTIMIZER_MAGIC:
            raise WeightFormatError(f"unexpected trailing data at byte {start}")
        (result.step,) = reader.unpack("<Q")
        result.optimizer = reader.entries()
        section_ok = reader.check_crc(start)
        if verify and not section_ok:
            raise ChecksumError("optimizer section CRC mismatch")
        result.crc_ok = result.crc_ok and section_ok
        if reader.offset != len(data):
            raise WeightFormatError(f"unexpected trailing data at byte {reader.offset}")
    return result


def read(path: PathLike, verify: bool = True) -> WeightFile:
    return decode(Path(path).read_bytes(), verify)


def _check_against(model: Model, entries: Mapping[str, np.ndarray], origin: str):
    """Every file entry must name a model weight of the same shape, and no weight may be missing"""
    for name, array in entries.items():
        if name not in model.weights:
            raise WeightFormatError(f"{origin}: unknown entry {name}")
        expected = model.weights[name].shape
        if array.shape != expected:
            raise ShapeError(f"{origin}: entry {name} has shape {array.shape}, model expects {expected}")
    missing = [name for name in model.weights if name not in entries]
    if missing:
        raise WeightFormatError(f"{origin}: missing entry {missing[0]} ({len(missing)} missing)")


def save_weights(model: Model, path: PathLike):
    Path(path).write_bytes(encode(model.weights.arrays()))
    logger.info(f"Saved {len(model.weights)} weight tensors to {path}")


def load_weights(path: PathLike, model: Model) -> Model:
    """Validate a weight file against the model, then replace its weights; optimizer state is ignored"""
    weight_file = read(path)
    _check_against(model, weight_file.entries, str(path))
    for name, array in weight_file.entries.items():
        model.weights.replace(name, Tensor.wrap(array))
    logger.info(f"Loaded {len(weight_file.entries)} weight tensors from {path}")
    return model


def save_checkpoint(model: Model, state: AdamState, path: PathLike):
    moments: Dict[str, np.ndarray] = {}
    for name in model.weights:
        moments[f"m/{name}"] = state.m[name]
        moments[f"v/{name}"] = state.v[name]
    Path(path).write_bytes(encode(model.weights.arrays(), (state.step, moments)))
    logger.info(f"Saved checkpoint at step {state.step} to {path}")


def load_checkpoint(path: PathLike, model: Model, state: Optional[AdamState] = None) -> AdamState:
    """Restore weights and optimizer moments; a plain weight file yields fresh moments"""
    weight_file = read(path)
    _check_against(model, weight_file.entries, str(path))
    state = state or AdamState.zeros(model.weights)
    if weight_file.has_optimizer:
        for name, array in weight_file.optimizer.items():
            kind, _, weight = name.partition("/")
            if kind not in ("m", "v") or weight not in model.weights:
                raise WeightFormatError(f"{path}: unknown optimizer entry {name}")
            if array.shape != model.weights[weight].shape:
                raise ShapeError(f"{path}: optimizer entry {name} has shape {array.shape}, model expects {model.weights[weight].shape}")
        missing = [n for n in model.weights if f"m/{n}" not in weight_file.optimizer or f"v/{n}" not in weight_file.optimizer]
        if missing:
            raise WeightFormatError(f"{path}: optimizer section lacks moments for {missing[0]}")
    for name, array in weight_file.entries.items():
        model.weights.replace(name, Tensor.wrap(array))
    if weight_file.has_optimizer:
        state.step = weight_file.step
        for name in model.weights:
            state.m[name] = weight_file.optimizer[f"m/{name}"].copy()
            state.v[name] = weight_file.optimizer[f"v/{name}"].copy()
    return state
