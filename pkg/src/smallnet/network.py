"""The SmallNet family of shallow CNNs, written directly in numpy.

Four variants share one code path:

* ``SmallNet``         conv 3x3 -> FC -> softmax
* ``SmallNetPlus1CL``  an extra 3x3 conv
* ``SmallNetPlus1FC``  an extra fully connected layer
* ``SmallNet3D``       a 3D kernel sweeping frequency x row x col

Parameters live in one flat float64 vector; each layer reads views into
it. Every stored parameter is initialised uniformly on [-1, 1]. With the
default ``weight_scaling="fan_in"`` a layer multiplies its weights by
``gain / sqrt(fan_in)`` at run time, and SGD divides the step by the
square of that factor, which keeps training well conditioned without
touching the stored initialisation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .features import TENSOR_SHAPE

log = logging.getLogger(__name__)

VARIANTS = ("SmallNet", "SmallNetPlus1CL", "SmallNetPlus1FC", "SmallNet3D")
LOG_FLOOR = 1e-3


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Architecture:
    variant: str = "SmallNet"
    kernel: tuple[int, int] = (3, 3)
    feature_maps: int = 32
    fc_width: int = 128
    kernel3d: tuple[int, int, int] = (5, 3, 3)
    maps3d: int = 4
    n_classes: int = 4
    input_shape: tuple[int, int, int] = TENSOR_SHAPE
    weight_scaling: str = "fan_in"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.weight_scaling not in ("fan_in", "none"):
            raise ValueError("weight_scaling must be 'fan_in' or 'none'")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        self.layers()

    def layers(self) -> list["Layer"]:
        c, h, w = self.input_shape
        kh, kw = self.kernel
        out = []
        if self.variant == "SmallNet3D":
            kd, kh3, kw3 = self.kernel3d
            conv = Conv3D(self.maps3d, kd, kh3, kw3, (c, h, w))
            out.append(conv)
            flat = conv.out_size
        else:
            conv = Conv2D(c, self.feature_maps, kh, kw, (h, w))
            out.append(conv)
            oh, ow = conv.out_hw
            if self.variant == "SmallNetPlus1CL":
                conv2 = Conv2D(self.feature_maps, self.feature_maps, kh, kw, (oh, ow))
                out.append(conv2)
                oh, ow = conv2.out_hw
            flat = self.feature_maps * oh * ow
        out.append(Dense(flat, self.fc_width))
        if self.variant == "SmallNetPlus1FC":
            out.append(Dense(self.fc_width, self.fc_width))
        out.append(Dense(self.fc_width, self.n_classes, relu=False))
        return out

    def param_count(self) -> int:
        return sum(layer.n_params for layer in self.layers())


class Layer:
    relu = True
    fan_in: int
    w_shape: tuple[int, ...]
    n_out: int

    @property
    def n_params(self) -> int:
        return int(np.prod(self.w_shape)) + self.n_out

    def scale(self, scaling: str) -> float:
        if scaling == "none":
            return 1.0
        gain = np.sqrt(2.0) if self.relu else 1.0
        return gain / np.sqrt(self.fan_in)


class Conv2D(Layer):
    def __init__(self, in_ch: int, out_ch: int, kh: int, kw: int, in_hw: tuple[int, int]):
        self.in_ch, self.n_out, self.kh, self.kw = in_ch, out_ch, kh, kw
        self.in_hw = in_hw
        self.out_hw = (in_hw[0] - kh + 1, in_hw[1] - kw + 1)
        if min(self.out_hw) < 1:
            raise ValueError(f"kernel {kh}x{kw} larger than input {in_hw}")
        self.fan_in = in_ch * kh * kw
        self.w_shape = (self.fan_in, out_ch)

    def forward(self, x, w, b):
        bsz = x.shape[0]
        oh, ow = self.out_hw
        win = np.lib.stride_tricks.sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * oh * ow, self.fan_in)
        y = cols @ w + b
        return y.reshape(bsz, oh, ow, self.n_out).transpose(0, 3, 1, 2), cols

    def backward(self, dy, cols, w, need_dx):
        bsz = dy.shape[0]
        oh, ow = self.out_hw
        dyr = dy.transpose(0, 2, 3, 1).reshape(-1, self.n_out)
        dw = cols.T @ dyr
        db = dyr.sum(axis=0)
        if not need_dx:
            return None, dw, db
        dcols = (dyr @ w.T).reshape(bsz, oh, ow, self.in_ch, self.kh, self.kw)
        dx = np.zeros((bsz, self.in_ch) + self.in_hw)
        for i in range(self.kh):
            for j in range(self.kw):
                dx[:, :, i:i + oh, j:j + ow] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return dx, dw, db


class Conv3D(Layer):
    """Single-input-channel 3D convolution over (frequency, row, col)."""

    def __init__(self, maps: int, kd: int, kh: int, kw: int, in_shape: tuple[int, int, int]):
        self.n_out, self.kd, self.kh, self.kw = maps, kd, kh, kw
        self.in_shape = in_shape
        self.out_shape = tuple(s - k + 1 for s, k in zip(in_shape, (kd, kh, kw)))
        if min(self.out_shape) < 1:
            raise ValueError(f"kernel {(kd, kh, kw)} larger than input {in_shape}")
        self.fan_in = kd * kh * kw
        self.w_shape = (self.fan_in, maps)
        self.out_size = maps * int(np.prod(self.out_shape))

    def forward(self, x, w, b):
        bsz = x.shape[0]
        win = np.lib.stride_tricks.sliding_window_view(x, (self.kd, self.kh, self.kw), axis=(1, 2, 3))
        cols = win.reshape(-1, self.fan_in)
        y = cols @ w + b
        return np.moveaxis(y.reshape((bsz,) + self.out_shape + (self.n_out,)), -1, 1), cols

    def backward(self, dy, cols, w, need_dx):
        if need_dx:
            raise NotImplementedError("Conv3D is only used as the first layer")
        dyr = np.moveaxis(dy, 1, -1).reshape(-1, self.n_out)
        return None, cols.T @ dyr, dyr.sum(axis=0)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, relu: bool = True):
        self.fan_in, self.n_out, self.relu = n_in, n_out, relu
        self.w_shape = (n_in, n_out)

    def forward(self, x, w, b):
        x = x.reshape(x.shape[0], -1)
        return x @ w + b, x

    def backward(self, dy, x, w, need_dx):
        return (dy @ w.T if need_dx else None), x.T @ dy, dy.sum(axis=0)


@dataclass
class ModelParams:
    """Weights and biases of one architecture as a single flat vector.

    ``input_mean``/``input_std`` standardise log-power inputs; they are
    fitted by :func:`train` and are not part of the flat vector.
    """

    arch: Architecture
    flat: np.ndarray
    seed: int = 0
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    _layers: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.arch.param_count(),):
            raise ValueError(f"flat vector of length {self.flat.size}, expected {self.arch.param_count()}")
        self._layers = self.arch.layers()

    @property
    def layers(self) -> list[Layer]:
        return self._layers

    def arrays(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) views into ``flat`` per layer."""
        out, pos = [], 0
        for layer in self._layers:
            nw = int(np.prod(layer.w_shape))
            w = self.flat[pos:pos + nw].reshape(layer.w_shape)
            b = self.flat[pos + nw:pos + nw + layer.n_out]
            out.append((w, b))
            pos += nw + layer.n_out
        return out

    def lr_multipliers(self) -> np.ndarray:
        parts = []
        for layer in self._layers:
            s = layer.scale(self.arch.weight_scaling)
            parts.append(np.full(int(np.prod(layer.w_shape)), 1.0 / s ** 2))
            parts.append(np.ones(layer.n_out))
        return np.concatenate(parts)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.flat.copy(), self.seed,
                           None if self.input_mean is None else self.input_mean.copy(),
                           None if self.input_std is None else self.input_std.copy())


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    label: int
    decode_latency_s: float


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    max_epochs: int = 50
    shuffle_seed: int = 0
    patience: int = 5
    max_examples: int = 2000
    early_stopping: bool = True
    holdout_fraction: float = 0.1

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "patience", "max_examples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must be in [0, 1)")


def init(arch: Architecture, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(arch, rng.uniform(-1.0, 1.0, arch.param_count()), seed)


def zeros(arch: Architecture) -> ModelParams:
    return ModelParams(arch, np.zeros(arch.param_count()))


def preprocess(params: ModelParams, tensors: np.ndarray) -> np.ndarray:
    x = np.log(np.asarray(tensors, dtype=np.float64) + LOG_FLOOR)
    if params.input_mean is not None:
        x = (x - params.input_mean) / params.input_std
    return x


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(params: ModelParams, tensors: np.ndarray) -> np.ndarray:
    tensors = np.asarray(tensors)
    if tensors.shape[1:] != params.arch.input_shape:
        raise ValueError(f"input shape {tensors.shape[1:]} != {params.arch.input_shape}")
    return tensors


def _forward(params: ModelParams, x: np.ndarray, keep: bool):
    caches = []
    arrays = params.arrays()
    scaling = params.arch.weight_scaling
    for layer, (w, b) in zip(params.layers, arrays):
        s = layer.scale(scaling)
        pre, cache = layer.forward(x, s * w, b)
        x = np.maximum(pre, 0.0) if layer.relu else pre
        if keep:
            caches.append((cache, pre))
    return x, caches


def logits(params: ModelParams, tensors: np.ndarray) -> np.ndarray:
    tensors = _check_input(params, tensors)
    out, _ = _forward(params, preprocess(params, tensors), keep=False)
    return out


def predict_proba(params: ModelParams, tensors: np.ndarray, batch_size: int = 256) -> np.ndarray:
    tensors = _check_input(params, tensors)
    parts = [softmax(logits(params, tensors[i:i + batch_size])) for i in range(0, len(tensors), batch_size)]
    return np.concatenate(parts) if parts else np.zeros((0, params.arch.n_classes))


def forward(params: ModelParams, tensor) -> Prediction:
    values = getattr(tensor, "values", tensor)
    t0 = time.perf_counter()
    probs = softmax(logits(params, np.asarray(values)[None]))[0]
    return Prediction(probs, int(np.argmax(probs)), time.perf_counter() - t0)


def predict_label(params: ModelParams, tensor) -> int:
    return forward(params, tensor).label


def predict_labels(params: ModelParams, tensors: np.ndarray) -> np.ndarray:
    return np.argmax(predict_proba(params, tensors), axis=1)


def _loss_and_grads_preprocessed(params: ModelParams, x: np.ndarray, labels: np.ndarray):
    n_cls = params.arch.n_classes
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError(f"labels must lie in 0..{n_cls - 1}")
    out, caches = _forward(params, x, keep=True)
    bsz = len(labels)
    probs = softmax(out)
    logp = out - out.max(axis=1, keepdims=True)
    logp -= np.log(np.exp(logp).sum(axis=1, keepdims=True))
    loss = -float(np.mean(logp[np.arange(bsz), labels]))

    dy = probs.copy()
    dy[np.arange(bsz), labels] -= 1.0
    dy /= bsz
    grads = []
    arrays = params.arrays()
    scaling = params.arch.weight_scaling
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        w, _ = arrays[k]
        cache, pre = caches[k]
        if layer.relu:
            dy = dy.reshape(pre.shape) * (pre > 0)
        s = layer.scale(scaling)
        dx, dw, db = layer.backward(dy, cache, s * w, need_dx=k > 0)
        grads.append(db)
        grads.append((s * dw).ravel())
        dy = dx
    n_correct = int(np.sum(np.argmax(out, axis=1) == labels))
    return loss, np.concatenate(grads[::-1]), n_correct


def loss_and_gradients(params: ModelParams, tensors: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its exact gradient in the flat parameter layout."""
    tensors = _check_input(params, tensors)
    loss, grads, _ = _loss_and_grads_preprocessed(params, preprocess(params, tensors), labels)
    return loss, grads


def fit_normalizer(params: ModelParams, tensors: np.ndarray, chunk: int = 512) -> ModelParams:
    """Return a copy whose input standardisation is fitted to ``tensors``."""
    n = len(tensors)
    total = np.zeros(params.arch.input_shape)
    total_sq = np.zeros(params.arch.input_shape)
    for i in range(0, n, chunk):
        z = np.log(np.asarray(tensors[i:i + chunk], dtype=np.float64) + LOG_FLOOR)
        total += z.sum(axis=0)
        total_sq += (z ** 2).sum(axis=0)
    mean = total / n
    std = np.sqrt(np.maximum(total_sq / n - mean ** 2, 0.0))
    out = params.copy()
    out.input_mean = mean
    out.input_std = np.maximum(std, 1e-3)
    return out


def _accuracy_and_loss(params: ModelParams, x: np.ndarray, labels: np.ndarray, batch: int = 256):
    if len(labels) == 0:
        return float("nan"), float("nan")
    correct, loss = 0, 0.0
    for i in range(0, len(labels), batch):
        out, _ = _forward(params, x[i:i + batch], keep=False)
        y = labels[i:i + batch]
        z = out - out.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss -= logp[np.arange(len(y)), y].sum()
        correct += int(np.sum(np.argmax(out, axis=1) == y))
    return correct / len(labels), loss / len(labels)


def accuracy(params: ModelParams, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return float("nan")
    return float(np.mean(predict_labels(params, dataset.tensors) == dataset.labels))


def train(params: ModelParams, dataset: Dataset, config: TrainConfig = TrainConfig()):
    """Mini-batch SGD on the most recent ``config.max_examples`` examples.

    With early stopping, the chronologically last ``holdout_fraction`` of
    the data is held out and the best-on-holdout parameters are returned.
    Returns ``(params, history)``; history holds one dict per epoch.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    data = dataset.most_recent(config.max_examples)
    n = len(data)
    n_hold = int(round(n * config.holdout_fraction)) if config.early_stopping else 0
    if n - n_hold < 1:
        n_hold = 0
    train_idx = np.arange(n - n_hold)

    model = params.copy()
    if model.input_mean is None:
        model = fit_normalizer(model, data.tensors[: n - n_hold])
    x = preprocess(model, data.tensors)
    y = data.labels
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_ho, y_ho = x[n - n_hold:], y[n - n_hold:]

    rng = np.random.default_rng(config.shuffle_seed)
    mult = config.learning_rate * model.lr_multipliers()
    history = []
    best = (np.inf, model.flat.copy())
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_idx))
        total_loss, correct = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, grads, hits = _loss_and_grads_preprocessed(model, x_tr[idx], y_tr[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {i // config.batch_size}")
            model.flat -= mult * grads
            total_loss += loss * len(idx)
            correct += hits
        # running figures, measured on each batch before its update
        record = {"epoch": epoch, "train_loss": total_loss / len(order), "train_acc": correct / len(order)}
        if n_hold:
            ho_acc, ho_loss = _accuracy_and_loss(model, x_ho, y_ho)
            record.update(holdout_loss=ho_loss, holdout_acc=ho_acc)
            if ho_loss < best[0]:
                best = (ho_loss, model.flat.copy())
                stale = 0
            else:
                stale += 1
        history.append(record)
        if n_hold and stale >= config.patience:
            break
    if n_hold:
        model.flat[:] = best[1]
    log.debug("trained %d examples for %d epochs in %.2f s", n, len(history), time.perf_counter() - t0)
    return model, history


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, shuffle_seed=seed)
