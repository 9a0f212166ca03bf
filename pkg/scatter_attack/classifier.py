"""
Small differentiable image classifier.

The attack code only needs three things from a classifier: class
probabilities, the cross-entropy loss and the gradient of that loss with
respect to the input pixels. :class:`Classifier` names that interface;
:class:`ConvClassifier` is the default convolutional model (trained here
with plain SGD) and :class:`LinearSoftmaxModel` a linear model with known
gradients that is handy for checks.

Default architecture::

    conv(8, 5x5, stride 2) -> ReLU -> conv(16, 5x5, stride 2) -> ReLU
        -> global average pool -> dense(K) -> softmax
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, ParameterError


logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12
WEIGHTS_MAGIC = b"OTSAW1"
_HEADER = struct.Struct("<6IQ")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Layer dimensions of the convolutional classifier."""

    input_size: int = 88
    num_classes: int = 4
    conv1_filters: int = 8
    conv2_filters: int = 16
    kernel_size: int = 5
    stride: int = 2

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ParameterError("num_classes must be at least 2")
        if min(self.conv1_filters, self.conv2_filters, self.kernel_size, self.stride) < 1:
            raise ParameterError("filter counts, kernel size and stride must be positive")
        if self.conv2_output < 1:
            raise ParameterError(
                f"input_size {self.input_size} is too small for two "
                f"{self.kernel_size}x{self.kernel_size} stride-{self.stride} convolutions"
            )

    def _conv_out(self, size: int) -> int:
        return (size - self.kernel_size) // self.stride + 1 if size >= self.kernel_size else 0

    @property
    def conv1_output(self) -> int:
        return self._conv_out(self.input_size)

    @property
    def conv2_output(self) -> int:
        return self._conv_out(self.conv1_output)

    @property
    def input_shape(self) -> Tuple[int, int]:
        return (self.input_size, self.input_size)

    def layer_shapes(self) -> List[Tuple[int, ...]]:
        k = self.kernel_size
        return [
            (self.conv1_filters, 1, k, k),
            (self.conv1_filters,),
            (self.conv2_filters, self.conv1_filters, k, k),
            (self.conv2_filters,),
            (self.conv2_filters, self.num_classes),
            (self.num_classes,),
        ]


@dataclass(eq=False)
class Weights:
    """Per-layer parameters, in declaration order, plus the initialization seed."""

    spec: ModelSpec
    seed: int
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray
    loss_history: Tuple[float, ...] = field(default=(), compare=False)

    def layers(self) -> List[np.ndarray]:
        return [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b, self.dense_w, self.dense_b]

    def copy(self) -> "Weights":
        return replace(self, **{k: v.copy() for k, v in zip(_LAYER_NAMES, self.layers())})

    def validate(self) -> None:
        for name, arr, shape in zip(_LAYER_NAMES, self.layers(), self.spec.layer_shapes()):
            if arr.shape != shape:
                raise ParameterError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} contains non-finite values")


_LAYER_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")


@dataclass(frozen=True)
class Prediction:
    """Class probabilities; :attr:`label` is their argmax."""

    probabilities: np.ndarray

    @property
    def label(self) -> int:
        return int(np.argmax(self.probabilities))

    def confidence(self, label: int) -> float:
        return float(self.probabilities[label])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    learning_rate: float = 0.2
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ParameterError("epochs must be non-negative")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be at least 1")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")


@runtime_checkable
class Classifier(Protocol):
    """What an attack needs from a model."""

    num_classes: int
    input_shape: Tuple[int, int]

    def predict(self, image: np.ndarray) -> Prediction: ...

    def loss(self, image: np.ndarray, label: int) -> float: ...

    def input_gradient(self, image: np.ndarray, label: int) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Shared softmax / loss helpers
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def _check_label(label: int, num_classes: int) -> None:
    if not 0 <= int(label) < num_classes:
        raise ParameterError(f"label {label} is outside [0, {num_classes})")


def _nll(probabilities: np.ndarray, label: int) -> float:
    return float(-np.log(max(probabilities[label], PROBABILITY_FLOOR)))


def _logit_gradient(probabilities: np.ndarray, label: int) -> np.ndarray:
    """d(-log p_y)/d(logits); zero once ``p_y`` is below the floor."""
    if probabilities[label] < PROBABILITY_FLOOR:
        return np.zeros_like(probabilities)
    grad = probabilities.copy()
    grad[label] -= 1.0
    return grad


# ---------------------------------------------------------------------------
# Convolutional network
# ---------------------------------------------------------------------------


def init_weights(spec: ModelSpec, seed: int = 0) -> Weights:
    """He-scaled normal initialization; biases start at zero."""
    rng = np.random.default_rng(seed)
    k = spec.kernel_size
    conv1_w = rng.standard_normal(spec.layer_shapes()[0]) * np.sqrt(2.0 / (k * k))
    conv2_w = rng.standard_normal(spec.layer_shapes()[2]) * np.sqrt(
        2.0 / (spec.conv1_filters * k * k)
    )
    dense_w = rng.standard_normal(spec.layer_shapes()[4]) * np.sqrt(2.0 / spec.conv2_filters)
    return Weights(
        spec=spec,
        seed=seed,
        conv1_w=conv1_w,
        conv1_b=np.zeros(spec.conv1_filters),
        conv2_w=conv2_w,
        conv2_b=np.zeros(spec.conv2_filters),
        dense_w=dense_w,
        dense_b=np.zeros(spec.num_classes),
    )


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    k = w.shape[-1]
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bchwij,fcij->bfhw", windows, w, optimize=True)
    return out + b[None, :, None, None], windows


def _conv_backward(dout, windows, w, x_shape, stride):
    k = w.shape[-1]
    dw = np.einsum("bfhw,bchwij->fcij", dout, windows, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = np.zeros(x_shape)
    oh, ow = dout.shape[2:]
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += np.einsum(
                "bfhw,fc->bchw", dout, w[:, :, i, j]
            )
    return dx, dw, db


@dataclass
class _Cache:
    x_shape: Tuple[int, ...]
    windows1: np.ndarray
    z1: np.ndarray
    a1_shape: Tuple[int, ...]
    windows2: np.ndarray
    z2: np.ndarray
    pooled: np.ndarray


def _check_images(weights: Weights, images: np.ndarray) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != weights.spec.input_shape:
        raise ParameterError(
            f"Expected images of shape {weights.spec.input_shape}, got {arr.shape[-2:]}"
        )
    return arr


def _forward(weights: Weights, images: np.ndarray) -> Tuple[np.ndarray, _Cache]:
    """Return ``(logits, cache)`` for a ``(B, H, W)`` batch."""
    stride = weights.spec.stride
    x = images[:, None, :, :]
    z1, windows1 = _conv_forward(x, weights.conv1_w, weights.conv1_b, stride)
    a1 = np.maximum(z1, 0.0)
    z2, windows2 = _conv_forward(a1, weights.conv2_w, weights.conv2_b, stride)
    pooled = np.maximum(z2, 0.0).mean(axis=(2, 3))
    logits = pooled @ weights.dense_w + weights.dense_b
    return logits, _Cache(x.shape, windows1, z1, a1.shape, windows2, z2, pooled)


def _backward(weights: Weights, cache: _Cache, dlogits: np.ndarray):
    """Return ``(d_input, layer_gradients)`` for the given logit gradients."""
    stride = weights.spec.stride
    d_dense_w = cache.pooled.T @ dlogits
    d_dense_b = dlogits.sum(axis=0)
    dpooled = dlogits @ weights.dense_w.T
    area = cache.z2.shape[2] * cache.z2.shape[3]
    dz2 = (cache.z2 > 0) * (dpooled[:, :, None, None] / area)
    da1, d_conv2_w, d_conv2_b = _conv_backward(
        dz2, cache.windows2, weights.conv2_w, cache.a1_shape, stride
    )
    dz1 = da1 * (cache.z1 > 0)
    dx, d_conv1_w, d_conv1_b = _conv_backward(
        dz1, cache.windows1, weights.conv1_w, cache.x_shape, stride
    )
    grads = [d_conv1_w, d_conv1_b, d_conv2_w, d_conv2_b, d_dense_w, d_dense_b]
    return dx[:, 0], grads


def predict(weights: Weights, image: np.ndarray) -> Prediction:
    """Softmax probabilities for one image."""
    logits, _ = _forward(weights, _check_images(weights, image)[:1])
    return Prediction(probabilities=softmax(logits[0]))


def predict_batch(weights: Weights, images: np.ndarray) -> np.ndarray:
    """``(B, K)`` probabilities for a batch."""
    logits, _ = _forward(weights, _check_images(weights, images))
    return softmax(logits)


def cross_entropy_loss(weights: Weights, image: np.ndarray, label: int) -> float:
    """``-log p_label`` with the probability floored at 1e-12."""
    _check_label(label, weights.spec.num_classes)
    return _nll(predict(weights, image).probabilities, label)


def input_gradient_batch(
    weights: Weights, images: np.ndarray, labels: Sequence[int]
) -> np.ndarray:
    """Per-image gradients of each image's own loss, shape ``(B, H, W)``."""
    batch = _check_images(weights, images)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if labels.size != batch.shape[0]:
        raise ParameterError("one label per image is required")
    for label in labels:
        _check_label(label, weights.spec.num_classes)
    logits, cache = _forward(weights, batch)
    probs = softmax(logits)
    dlogits = np.stack([_logit_gradient(p, y) for p, y in zip(probs, labels)])
    dx, _ = _backward(weights, cache, dlogits)
    return dx


def input_gradient(weights: Weights, image: np.ndarray, label: int) -> np.ndarray:
    """Gradient of :func:`cross_entropy_loss` with respect to every pixel."""
    return input_gradient_batch(weights, image, [label])[0]


def evaluate_accuracy(model: "Classifier", images: np.ndarray, labels: Sequence[int]) -> float:
    """Fraction of *images* whose predicted label matches *labels*."""
    labels = list(labels)
    if not labels:
        raise ParameterError("accuracy of an empty set is undefined")
    hits = sum(model.predict(img).label == int(y) for img, y in zip(images, labels))
    return hits / len(labels)


def _mean_loss(weights: Weights, images: np.ndarray, labels: np.ndarray, chunk: int = 64) -> float:
    total = 0.0
    for start in range(0, len(labels), chunk):
        probs = predict_batch(weights, images[start:start + chunk])
        total += sum(_nll(p, y) for p, y in zip(probs, labels[start:start + chunk]))
    return total / len(labels)


def train(
    images: np.ndarray,
    labels: Sequence[int],
    spec: Optional[ModelSpec] = None,
    config: Optional[TrainConfig] = None,
) -> Weights:
    """Train a :class:`ConvClassifier` with minibatch SGD.

    Parameters
    ----------
    images:
        ``(S, H, W)`` training images already normalized to ``[0, 1]``.
    labels:
        ``S`` class indices in ``[0, K)``.
    spec, config:
        Architecture and optimizer settings; defaults when omitted.

    Returns
    -------
    Weights
        Trained weights; ``loss_history`` holds the mean training loss
        before the first epoch and after every epoch.
    """
    spec = spec or ModelSpec()
    config = config or TrainConfig()
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if images.shape[0] == 0 or labels.size == 0:
        raise ParameterError("cannot train on an empty dataset")
    if images.shape[0] != labels.size:
        raise ParameterError("images and labels differ in length")
    for label in np.unique(labels):
        _check_label(label, spec.num_classes)

    weights = init_weights(spec, config.seed)
    _check_images(weights, images)
    rng = np.random.default_rng([config.seed, 1])
    history = [_mean_loss(weights, images, labels)]

    for epoch in range(config.epochs):
        order = rng.permutation(labels.size)
        for start in range(0, labels.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            logits, cache = _forward(weights, images[idx])
            probs = softmax(logits)
            dlogits = probs.copy()
            dlogits[np.arange(idx.size), labels[idx]] -= 1.0
            _, grads = _backward(weights, cache, dlogits / idx.size)
            for layer, grad in zip(weights.layers(), grads):
                layer -= config.learning_rate * grad
        history.append(_mean_loss(weights, images, labels))
        logger.info("epoch %d/%d: training loss %.4f", epoch + 1, config.epochs, history[-1])

    weights.loss_history = tuple(history)
    return weights


# ---------------------------------------------------------------------------
# Pluggable models
# ---------------------------------------------------------------------------


class ConvClassifier:
    """:class:`Classifier` backed by convolutional :class:`Weights`."""

    def __init__(self, weights: Weights) -> None:
        weights.validate()
        self.weights = weights
        self.num_classes = weights.spec.num_classes
        self.input_shape = weights.spec.input_shape

    def predict(self, image: np.ndarray) -> Prediction:
        return predict(self.weights, image)

    def loss(self, image: np.ndarray, label: int) -> float:
        return cross_entropy_loss(self.weights, image, label)

    def input_gradient(self, image: np.ndarray, label: int) -> np.ndarray:
        return input_gradient(self.weights, image, label)


class LinearSoftmaxModel:
    """Linear softmax model ``logits_k = <W_k, X> + b_k``.

    Parameters
    ----------
    weight:
        ``(K, H, W)`` array.
    bias:
        ``(K,)`` array; zeros when omitted.
    """

    def __init__(self, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> None:
        self.weight = np.asarray(weight, dtype=np.float64)
        if self.weight.ndim != 3 or self.weight.shape[0] < 2:
            raise ParameterError("weight must have shape (K >= 2, H, W)")
        self.num_classes = self.weight.shape[0]
        self.input_shape = self.weight.shape[1:]
        self.bias = (
            np.zeros(self.num_classes) if bias is None else np.asarray(bias, dtype=np.float64)
        )

    def _probabilities(self, image: np.ndarray) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float64)
        if arr.shape != self.input_shape:
            raise ParameterError(f"Expected shape {self.input_shape}, got {arr.shape}")
        return softmax(np.einsum("khw,hw->k", self.weight, arr) + self.bias)

    def predict(self, image: np.ndarray) -> Prediction:
        return Prediction(probabilities=self._probabilities(image))

    def loss(self, image: np.ndarray, label: int) -> float:
        _check_label(label, self.num_classes)
        return _nll(self._probabilities(image), label)

    def input_gradient(self, image: np.ndarray, label: int) -> np.ndarray:
        _check_label(label, self.num_classes)
        dlogits = _logit_gradient(self._probabilities(image), label)
        return np.einsum("k,khw->hw", dlogits, self.weight)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_weights(weights: Weights, path: Union[str, Path]) -> None:
    """Write *weights* as ``OTSAW1`` + header + little-endian float64 layers."""
    spec = weights.spec
    header = _HEADER.pack(
        spec.input_size,
        spec.num_classes,
        spec.conv1_filters,
        spec.conv2_filters,
        spec.kernel_size,
        spec.stride,
        weights.seed,
    )
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in weights.layers())
    Path(path).write_bytes(WEIGHTS_MAGIC + header + payload)


def load_weights(path: Union[str, Path]) -> Weights:
    """Read a weights file written by :func:`save_weights`."""
    data = Path(path).read_bytes()
    where = str(path)
    if data[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise FormatError("magic", "not an OTSAW1 weights file", where)
    offset = len(WEIGHTS_MAGIC)
    if len(data) < offset + _HEADER.size:
        raise FormatError("header", "file truncated inside the header", where)
    fields = _HEADER.unpack_from(data, offset)
    offset += _HEADER.size
    try:
        spec = ModelSpec(*fields[:6])
    except ParameterError as exc:
        raise FormatError("header", str(exc), where) from exc

    layers = []
    for name, shape in zip(_LAYER_NAMES, spec.layer_shapes()):
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise FormatError(name, "file truncated inside layer data", where)
        layers.append(np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape))
        offset = end
    if offset != len(data):
        raise FormatError("data", f"{len(data) - offset} trailing bytes", where)
    weights = Weights(spec, int(fields[6]), *layers)
    try:
        weights.validate()
    except ParameterError as exc:
        raise FormatError("data", str(exc), where) from exc
    return weights
