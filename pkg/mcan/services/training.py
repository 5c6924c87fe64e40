"""
L1 training: loss and gradients, Adam, the step-halving schedule, patch
sampling with dihedral augmentation, the training loop and a
finite-difference gradient check.
"""

import logging
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from mcan import kernels
from mcan.exceptions import ConfigError, DatasetError, NumericalError, ShapeError
from mcan.models import executor
from mcan.models.network import Model, WeightStore, build
from mcan.schemas import LossRecord, ModelConfig, TrainConfig
from mcan.services.imaging import Image, PathLike, bicubic_downscale, center_crop, list_pngs, load_png
from mcan.tensor import Tensor

logger = logging.getLogger(__name__)

EMA_FACTOR = 0.98


# -- loss and gradients -----------------------------------------------------


def l1_loss(pred: Tensor, target: Tensor) -> float:
    """Mean absolute error over all elements"""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: prediction {pred.shape} and target {target.shape} differ")
    return float(np.mean(np.abs(pred.data.astype(np.float64) - target.data), dtype=np.float64))


class GradStore(Mapping[str, np.ndarray]):
    """Gradients keyed by weight name, shape-checked against a WeightStore"""

    def __init__(self, weights: WeightStore, grads: Mapping[str, np.ndarray]):
        for name, grad in grads.items():
            if name not in weights:
                raise KeyError(f"gradient for unknown weight {name}")
            if grad.shape != weights[name].shape:
                raise ShapeError(f"gradient {name}: shape {grad.shape} != weight shape {weights[name].shape}")
        self._grads = dict(grads)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._grads[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)



def infer_scale(model: Model, lr_shape: Sequence[int], hr_shape: Sequence[int]) -> int:
    h, w = lr_shape[2:]
    scale = hr_shape[2] // h
    if hr_shape[:2] != lr_shape[:2] or tuple(hr_shape[2:]) != (h * scale, w * scale):
        raise ShapeError(f"target {tuple(hr_shape)} is not an integer upscale of input {tuple(lr_shape)}")
    if scale not in model.config.scales:
        raise ShapeError(f"model has no x{scale} tail (tails: {model.config.scales})")
    return scale


def loss_and_gradients(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    scale: int,
    params: Optional[Mapping[str, np.ndarray]] = None,
) -> Tuple[float, Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Forward, L1 loss and reverse sweep; works in the dtype of x and params"""
    params = params or model.weights.arrays()
    env = model.run(x, scale, params)
    out = model.output_name(scale)
    pred = env[out]
    diff = pred - y
    loss = float(np.mean(np.abs(diff), dtype=np.float64))
    # subgradient 0 where the residual is exactly zero
    seed = (np.sign(diff) / diff.size).astype(pred.dtype)
    grads = executor.backpropagate(model.path(scale), params, env, {out: seed})
    for name in model.parameter_names(scale):
        if name not in grads:
            grads[name] = np.zeros_like(params[name])
    return loss, grads, env


def backward(model: Model, I_LR: Tensor, I_HR: Tensor, scale: Optional[int] = None) -> Tuple[float, GradStore]:
    """L1 loss and its gradient for every weight on the evaluated path"""
    scale = scale or infer_scale(model, I_LR.shape, I_HR.shape)
    expected = (I_LR.shape[0], 3, I_LR.shape[2] * scale, I_LR.shape[3] * scale)
    if I_HR.shape != expected:
        raise ShapeError(f"backward: target shape {I_HR.shape} != {expected} for x{scale}")
    loss, grads, _ = loss_and_gradients(model, I_LR.data, I_HR.data, scale)
    return loss, GradStore(model.weights, grads)


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, weights: WeightStore, config: Optional[TrainConfig] = None) -> "AdamState":
        config = config or TrainConfig()
        return cls(
            m={name: np.zeros(t.shape, dtype=np.float32) for name, t in weights.items()},
            v={name: np.zeros(t.shape, dtype=np.float32) for name, t in weights.items()},
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
        )


def adam_step(
    weights: WeightStore,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    keys: Optional[Iterable[str]] = None,
) -> Tuple[WeightStore, AdamState]:
    """
    Bias-corrected Adam update of ``keys`` (every weight by default).

    Weights are replaced in place; each key must have a gradient and moments.
    """
    keys = list(weights) if keys is None else list(keys)
    for name in keys:
        if name not in grads:
            raise KeyError(f"adam_step: no gradient for {name}")
        if name not in state.m or name not in weights:
            raise KeyError(f"adam_step: unknown weight {name}")
    extra = set(grads) - set(weights)
    if extra:
        raise KeyError(f"adam_step: gradients for unknown weights {sorted(extra)[:3]}")

    state.step += 1
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    correction1 = np.float32(1 - state.beta1 ** state.step)
    correction2 = np.float32(1 - state.beta2 ** state.step)
    rate, eps = np.float32(lr), np.float32(state.eps)
    for name in keys:
        g = grads[name].astype(np.float32, copy=False)
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = rate * (m / correction1) / (np.sqrt(v / correction2) + eps)
        weights.replace(name, weights[name].data - update)
    return weights, state


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Initial rate halved every ``halve_every`` steps"""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    return config.lr * 2.0 ** -(step // config.halve_every)


# -- data -------------------------------------------------------------------


class TrainingSet:
    """HR training images with bicubic LR copies cached per scale"""

    def __init__(self, images: Sequence[Image], names: Optional[Sequence[str]] = None):
        if not images:
            raise DatasetError("training set is empty")
        self.images = list(images)
        self.names = list(names) if names else [f"image{i:04d}" for i in range(len(images))]
        self._pairs: Dict[Tuple[int, int], Tuple[Image, Image]] = {}
        self._warned: set = set()

    @classmethod
    def from_directory(cls, directory: PathLike) -> "TrainingSet":
        directory = Path(directory)
        if not directory.is_dir():
            raise DatasetError(f"{directory}: not a directory")
        paths = list_pngs(directory)
        if not paths:
            raise DatasetError(f"{directory}: no PNG images found")
        images = [load_png(path) for path in paths]
        logger.info(f"Loaded {len(images)} training images from {directory}")
        return cls(images, [path.name for path in paths])

    def __len__(self) -> int:
        return len(self.images)

    def pair(self, index: int, scale: int) -> Tuple[Image, Image]:
        """(LR, HR) for one image; HR is center-cropped to a multiple of scale"""
        key = (index, scale)
        if key not in self._pairs:
            hr = center_crop(self.images[index], scale)
            self._pairs[key] = (bicubic_downscale(hr, scale), hr)
        return self._pairs[key]

    def eligible(self, patch: int, scale: int) -> List[int]:
        """Images large enough for a patch at this scale; the rest are skipped with a warning"""
        keep = []
        for index, image in enumerate(self.images):
            if image.height >= patch * scale and image.width >= patch * scale:
                keep.append(index)
            elif (index, scale) not in self._warned:
                self._warned.add((index, scale))
                logger.warning(
                    f"Skipping {self.names[index]}: {image.width}x{image.height} is smaller than "
                    f"{patch * scale}x{patch * scale} needed for x{scale} patches"
                )
        return keep


def _to_nchw(patches: List[np.ndarray]) -> Tensor:
    batch = np.stack(patches).transpose(0, 3, 1, 2).astype(np.float32)
    return Tensor.wrap(np.ascontiguousarray(batch / np.float32(255)))


def sample_batch(
    dataset: TrainingSet, config: TrainConfig, rng: np.random.Generator
) -> Tuple[Tensor, Tensor, int]:
    """Random aligned LR/HR patches at one uniformly drawn scale, each pair under one dihedral transform"""
    scale = int(config.scales[rng.integers(len(config.scales))])
    patch = config.patch
    indices = dataset.eligible(patch, scale)
    if not indices:
        raise DatasetError(f"no training image is large enough for {patch}x{patch} patches at x{scale}")
    lr_patches, hr_patches = [], []
    for _ in range(config.batch):
        lr, hr = dataset.pair(indices[rng.integers(len(indices))], scale)
        top = int(rng.integers(lr.height - patch + 1))
        left = int(rng.integers(lr.width - patch + 1))
        g = int(rng.integers(8))
        lr_patch = lr.pixels[top:top + patch, left:left + patch]
        hr_patch = hr.pixels[top * scale:(top + patch) * scale, left * scale:(left + patch) * scale]
        # dihedral acts on axes (2, 3) of NCHW; HWC patches get a leading pair of unit axes
        lr_patches.append(kernels.dihedral(lr_patch.transpose(2, 0, 1)[None], g)[0].transpose(1, 2, 0))
        hr_patches.append(kernels.dihedral(hr_patch.transpose(2, 0, 1)[None], g)[0].transpose(1, 2, 0))
    return _to_nchw(lr_patches), _to_nchw(hr_patches), scale


class BatchPrefetcher:
    """
    Produces batches on a background thread through a bounded queue.

    Only the producer thread touches the generator, so the batch sequence is
    identical to calling ``sample_batch`` inline.
    """

    def __init__(self, dataset: TrainingSet, config: TrainConfig, rng: np.random.Generator, depth: int = 2):
        self._queue: "queue.Queue" = queue.Queue(maxsize=max(1, depth))
        self._stop = threading.Event()
        self._remaining = config.max_steps
        self._thread = threading.Thread(
            target=self._produce, args=(dataset, config, rng), name="batch-prefetcher", daemon=True
        )
        self._thread.start()

    def _produce(self, dataset: TrainingSet, config: TrainConfig, rng: np.random.Generator):
        for _ in range(self._remaining):
            if self._stop.is_set():
                return
            try:
                item = sample_batch(dataset, config, rng)
            except Exception as exc:
                item = exc
            while not self._stop.is_set():
                try:
                    self._queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if isinstance(item, Exception):
                return

    def __iter__(self) -> "BatchPrefetcher":
        return self

    def __next__(self) -> Tuple[Tensor, Tensor, int]:
        item = self._queue.get()
        if isinstance(item, Exception):
            raise item
        return item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=5)


def _inline_batches(dataset: TrainingSet, config: TrainConfig, rng: np.random.Generator):
    while True:
        yield sample_batch(dataset, config, rng)


# -- training loop ----------------------------------------------------------


def smoothed_loss(history: Sequence[LossRecord], factor: float = EMA_FACTOR) -> float:
    """Bias-corrected exponential moving average of the loss"""
    if not history:
        return math.nan
    value = 0.0
    for record in history:
        value = factor * value + (1 - factor) * record.loss
    return value / (1 - factor ** len(history))


def write_history(history: Sequence[LossRecord], path: PathLike):
    lines = ["step,loss,lr"] + [record.to_csv() for record in history]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class TrainResult:
    model: Model
    state: AdamState
    history: List[LossRecord] = field(default_factory=list)

    @property
    def smoothed_loss(self) -> float:
        return smoothed_loss(self.history)


CheckpointCallback = Callable[[int, Model, AdamState], None]


def train_loop(
    model: Model,
    dataset: TrainingSet,
    config: TrainConfig,
    on_checkpoint: Optional[CheckpointCallback] = None,
    state: Optional[AdamState] = None,
) -> TrainResult:
    """Sample, forward, backward and Adam under the halving schedule; mutates model weights"""
    missing = [s for s in config.scales if s not in model.config.scales]
    if missing:
        raise ConfigError(f"training scales {missing} have no tail in the model (tails: {model.config.scales})")
    state = state or AdamState.zeros(model.weights, config)
    result = TrainResult(model, state)
    if config.max_steps == 0:
        return result

    rng = np.random.default_rng(config.seed)
    batches = BatchPrefetcher(dataset, config, rng, config.prefetch) if config.prefetch else _inline_batches(dataset, config, rng)
    logger.info(f"Training {model.config.name} for {config.max_steps} steps at scales {config.scales}")
    try:
        for step in range(config.max_steps):
            lr_batch, hr_batch, scale = next(batches)
            loss, grads = backward(model, lr_batch, hr_batch, scale)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at step {step} (x{scale})")
            rate = lr_schedule(state.step, config)
            adam_step(model.weights, grads, state, rate, keys=model.parameter_names(scale))
            result.history.append(LossRecord(step=step, loss=loss, lr=rate))
            if (step + 1) % config.log_every == 0 or step == 0:
                logger.info(f"step {step + 1}/{config.max_steps}  loss {loss:.6f}  lr {rate:.3g}")
            if on_checkpoint and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                on_checkpoint(step + 1, model, state)
    finally:
        if isinstance(batches, BatchPrefetcher):
            batches.close()
    logger.info(f"Finished training: smoothed loss {result.smoothed_loss:.6f}")
    return result


# -- gradient check ---------------------------------------------------------


def micro_config(**overrides) -> ModelConfig:
    """Smallest member of the family: one cell, one block, one RCAB, a x2 tail"""
    values = dict(
        name="micro", scale=2, scales=(2,), D=1, K=1, M=1,
        n_fe=(8, 4), n_mim=4, n_eff=(4, 4), n_l=8, r=2,
    )
    values.update(overrides)
    return ModelConfig(**values)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    checked: int
    skipped: int


def _kink_pattern(model: Model, env: Mapping[str, np.ndarray], y: np.ndarray, scale: int) -> List[np.ndarray]:
    """Sign patterns of every ReLU input and of the loss residual"""
    pattern = [env[node.inputs[0]] > 0 for node in model.path(scale) if node.op == "relu"]
    pattern.append(np.sign(env[model.output_name(scale)] - y))
    return pattern


def _same_pattern(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return all(np.array_equal(p, q) for p, q in zip(a, b))


def grad_check(
    config: Optional[ModelConfig] = None,
    seed: int = 0,
    h: float = 1e-3,
    size: int = 8,
    floor: float = 1e-4,
) -> GradCheckReport:
    """
    Largest relative error between analytic and central-difference gradients.

    Runs in float64 over every weight element. A perturbation that moves a
    ReLU input or the loss residual across zero is retried with a smaller
    step and skipped if it still crosses.
    """
    config = config or micro_config()
    model = build(config, seed)
    scale = config.scale
    if model.weights.total > 5000:
        raise ConfigError(f"{config.name} has {model.weights.total} weights; gradient checks need fewer than 5000")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (1, 3, size, size))
    y = rng.uniform(0, 1, (1, 3, size * scale, size * scale))
    params = model.weights.arrays(np.float64)

    _, analytic, env = loss_and_gradients(model, x, y, scale, params)
    base = _kink_pattern(model, env, y, scale)

    def central_difference(name: str, index: tuple, step: float) -> Optional[float]:
        original = params[name][index]
        losses = []
        for sign in (1.0, -1.0):
            params[name][index] = original + sign * step
            env_p = model.run(x, scale, params)
            if not _same_pattern(base, _kink_pattern(model, env_p, y, scale)):
                params[name][index] = original
                return None
            losses.append(np.mean(np.abs(env_p[model.output_name(scale)] - y), dtype=np.float64))
        params[name][index] = original
        return (losses[0] - losses[1]) / (2 * step)

    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    for name in model.parameter_names(scale):
        for index in np.ndindex(params[name].shape):
            numeric = None
            for step in (h, h / 10, h / 100):
                numeric = central_difference(name, index, step)
                if numeric is not None:
                    break
            if numeric is None:
                skipped += 1
                continue
            a = float(analytic[name][index])
            error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            checked += 1
            if error > worst:
                worst, worst_name = error, f"{name}{list(index)}"
    logger.info(f"Gradient check: max relative error {worst:.2e} at {worst_name or '-'} ({checked} checked, {skipped} skipped)")
    return GradCheckReport(max_rel_error=worst, worst=worst_name, checked=checked, skipped=skipped)
