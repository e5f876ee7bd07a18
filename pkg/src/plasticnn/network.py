"""Dense feed-forward network engine.

Weights are stored as ``(out_width, in_width)`` matrices so a layer computes
``h = f(W @ h_prev + b)``. Batches are handled row-wise: a 2-D input of shape
``(n, in_width)`` yields traces whose arrays have ``n`` rows, a 1-D input
yields 1-D arrays.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import kernels, rng
from .errors import ConstructionError, DimensionError, NumericError, StaleStateError

CE_FLOOR = 1e-12


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SOFTMAX = "softmax"

    @property
    def code(self) -> int:
        return _ACT_CODES[self]


_ACT_CODES = {
    Activation.IDENTITY: kernels.IDENTITY,
    Activation.RELU: kernels.RELU,
    Activation.SIGMOID: kernels.SIGMOID,
    Activation.TANH: kernels.TANH,
    Activation.SOFTMAX: kernels.SOFTMAX,
}


class Loss(str, Enum):
    MSE = "mean_squared_error"
    CROSS_ENTROPY = "cross_entropy"

    @classmethod
    def parse(cls, name: str) -> "Loss":
        aliases = {"mse": cls.MSE, "ce": cls.CROSS_ENTROPY}
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]


@dataclass
class Network:
    layers: list[DenseLayer]
    input_width: int
    rng_seed: int = 0

    @property
    def widths(self) -> list[int]:
        """Input width followed by every layer's output width."""
        return [self.input_width] + [layer.out_width for layer in self.layers]

    @property
    def output_width(self) -> int:
        return self.layers[-1].out_width

    @property
    def hidden_neurons(self) -> int:
        return sum(layer.out_width for layer in self.layers[:-1])

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def activation_codes(self) -> list[int]:
        return [layer.activation.code for layer in self.layers]


@dataclass
class ForwardTrace:
    """Everything backward and relevance propagation need from one pass.

    ``post`` holds the activations as seen by the next layer (after any
    dropout mask or inference scaling); ``raw`` holds ``f(z)`` before them.
    """

    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    raw: list[np.ndarray]
    masks: Optional[list[Optional[np.ndarray]]] = None
    shapes: list[tuple[int, int]] = field(default_factory=list)
    scale: float = 1.0

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    def __len__(self) -> int:
        return len(self.post)


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def copy(self) -> "GradientSet":
        return GradientSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def layer_shapes(net: Network) -> list[tuple[int, int]]:
    return [layer.weights.shape for layer in net.layers]


def init_network(layer_widths: Sequence[int], activations: Sequence, seed: int) -> Network:
    """Build a network with Glorot-uniform weights and zero biases."""
    widths = [int(w) for w in layer_widths]
    if len(widths) < 2:
        raise ConstructionError(f"need at least input and output widths, got {widths}")
    if any(w < 1 for w in widths):
        raise ConstructionError(f"all widths must be positive, got {widths}")
    acts = [Activation(a) for a in activations]
    if len(acts) != len(widths) - 1:
        raise ConstructionError(
            f"{len(widths) - 1} layers need {len(widths) - 1} activations, got {len(acts)}")
    if Activation.SOFTMAX in acts[:-1]:
        raise ConstructionError("softmax is only allowed on the output layer")
    gen = rng.stream(seed, rng.INIT)
    layers = []
    for fan_in, fan_out, act in zip(widths[:-1], widths[1:], acts):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        W = gen.uniform(-s, s, size=(fan_out, fan_in))
        layers.append(DenseLayer(W, np.zeros(fan_out), act))
    return Network(layers, widths[0], int(seed))


def validate(net: Network) -> None:
    """Raise if any structural or numeric invariant of ``net`` is broken."""
    if not net.layers:
        raise ConstructionError("network has no layers")
    prev = net.input_width
    for i, layer in enumerate(net.layers):
        W, b = layer.weights, layer.bias
        if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 1:
            raise DimensionError(f"layer {i}: bad weight shape {W.shape}")
        if W.shape[1] != prev:
            raise DimensionError(f"layer {i}: in_width {W.shape[1]} != previous width {prev}")
        if b.shape != (W.shape[0],):
            raise DimensionError(f"layer {i}: bias shape {b.shape} != ({W.shape[0]},)")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise NumericError(f"layer {i}: non-finite parameters")
        if layer.activation is Activation.SOFTMAX and i != len(net.layers) - 1:
            raise ConstructionError(f"layer {i}: softmax on a hidden layer")
        prev = W.shape[0]


def _as_batch(x, width: int, what: str = "input") -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.ascontiguousarray(np.atleast_2d(arr))
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DimensionError(f"{what} width {arr.shape[-1]} != expected {width}")
    return arr, single


def propagate(net: Network, x, masks=None, scale: float = 1.0) -> ForwardTrace:
    """Forward pass with optional per-layer hidden masks and hidden scaling.

    ``masks[l]`` is ``None`` or an array broadcastable to the layer's
    activations; the output layer is never masked or scaled.
    """
    X, single = _as_batch(x, net.input_width)
    last = len(net.layers) - 1
    if masks is not None and len(masks) != len(net.layers):
        raise DimensionError(f"mask has {len(masks)} layers, network has {len(net.layers)}")
    pre, post, raw = [], [], []
    h = X
    for i, layer in enumerate(net.layers):
        z, a = kernels.dense_forward(layer.weights, layer.bias, h, layer.activation.code)
        out = a
        if i != last:
            m = None if masks is None else masks[i]
            if m is not None:
                m = np.asarray(m, dtype=np.float64)
                if m.shape[-1] != layer.out_width:
                    raise DimensionError(
                        f"layer {i}: mask width {m.shape[-1]} != {layer.out_width}")
                out = a * m
            if scale != 1.0:
                out = out * scale
        pre.append(z)
        raw.append(a)
        post.append(np.ascontiguousarray(out))
        h = post[-1]
    if single:
        pre = [z[0] for z in pre]
        raw = [a[0] for a in raw]
        post = [h[0] for h in post]
        X = X[0]
    return ForwardTrace(X, pre, post, raw, list(masks) if masks is not None else None,
                        layer_shapes(net), float(scale))


def forward(net: Network, x) -> ForwardTrace:
    return propagate(net, x)


def predict(net: Network, x, scale: float = 1.0) -> np.ndarray:
    return propagate(net, x, scale=scale).output


def loss_eval(prediction, target, kind: Loss) -> float:
    """Mean over batch rows of the per-sample loss.

    MSE per sample is the mean squared difference; cross-entropy is
    ``-sum(t * log(max(p, 1e-12)))``.
    """
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} != target shape {t.shape}")
    p2, t2 = np.atleast_2d(p), np.atleast_2d(t)
    kind = Loss(kind)
    if kind is Loss.MSE:
        return float(np.mean(np.mean((p2 - t2) ** 2, axis=1)))
    return float(np.mean(-np.sum(t2 * np.log(np.maximum(p2, CE_FLOOR)), axis=1)))


def check_loss_pairing(net: Network, kind: Loss) -> None:
    if Loss(kind) is Loss.CROSS_ENTROPY:
        out = net.layers[-1]
        if out.activation is not Activation.SOFTMAX or out.out_width < 2:
            raise ConstructionError("cross_entropy requires a softmax output of width >= 2")


def backward(net: Network, trace: ForwardTrace, target, loss: Loss) -> GradientSet:
    """Exact gradients of the batch-mean loss w.r.t. every weight and bias."""
    loss = Loss(loss)
    if trace.shapes != layer_shapes(net):
        raise StaleStateError("trace was produced by a different network shape")
    check_loss_pairing(net, loss)
    for arr in [trace.inputs, *trace.pre, *trace.post]:
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in forward trace")
    out = np.atleast_2d(trace.post[-1])
    T = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if T.shape != out.shape:
        raise DimensionError(f"target shape {T.shape} != output shape {out.shape}")
    n, m = out.shape
    last = len(net.layers) - 1

    if loss is Loss.CROSS_ENTROPY:
        # softmax + cross-entropy: dL/dz = p - t
        delta = np.ascontiguousarray((out - T) / n)
    else:
        dH = np.ascontiguousarray(2.0 * (out - T) / (n * m))
        delta = kernels.activation_backward(
            np.ascontiguousarray(np.atleast_2d(trace.pre[last])),
            np.ascontiguousarray(np.atleast_2d(trace.raw[last])), dH,
            net.layers[last].activation.code)

    gW = [None] * len(net.layers)
    gb = [None] * len(net.layers)
    for i in range(last, -1, -1):
        layer = net.layers[i]
        h_in = trace.inputs if i == 0 else trace.post[i - 1]
        h_in = np.ascontiguousarray(np.atleast_2d(h_in))
        gW[i], gb[i], dX = kernels.linear_backward(layer.weights, h_in, np.ascontiguousarray(delta))
        if i == 0:
            break
        prev = net.layers[i - 1]
        if trace.masks is not None and trace.masks[i - 1] is not None:
            dX = dX * trace.masks[i - 1]
        if trace.scale != 1.0:
            dX = dX * trace.scale
        delta = kernels.activation_backward(
            np.ascontiguousarray(np.atleast_2d(trace.pre[i - 1])),
            np.ascontiguousarray(np.atleast_2d(trace.raw[i - 1])),
            np.ascontiguousarray(dX), prev.activation.code)
    return GradientSet(gW, gb)


def sgd_step(net: Network, grads: GradientSet, learning_rate: float) -> Network:
    """In-place ``W -= lr * dW`` and ``b -= lr * db``."""
    if learning_rate < 0 or not math.isfinite(learning_rate):
        raise ValueError(f"learning rate must be a finite non-negative number, got {learning_rate}")
    if grads.shapes() != layer_shapes(net) or [b.shape for b in grads.biases] != [
            layer.bias.shape for layer in net.layers]:
        raise StaleStateError(
            f"gradient shapes {grads.shapes()} do not match network {layer_shapes(net)}")
    for layer, dW, db in zip(net.layers, grads.weights, grads.biases):
        layer.weights -= learning_rate * dW
        layer.bias -= learning_rate * db
    return net


def one_hot(labels, width: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= width):
        raise DimensionError(f"labels outside [0, {width})")
    out = np.zeros((labels.shape[0], width))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def targets_for(net: Network, labels, classification: bool) -> np.ndarray:
    """Encode labels as network targets (one-hot, or a 0/1 column for width 1)."""
    labels = np.asarray(labels)
    if not classification:
        return labels.astype(np.float64).reshape(-1, net.output_width)
    if net.output_width == 1:
        return labels.astype(np.float64).reshape(-1, 1)
    return one_hot(labels, net.output_width)


def predicted_classes(output) -> np.ndarray:
    out = np.atleast_2d(output)
    if out.shape[1] == 1:
        return (out[:, 0] > 0.5).astype(np.int64)
    return np.argmax(out, axis=1)


def accuracy(net: Network, X, labels, scale: float = 1.0) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] == 0:
        raise DimensionError("accuracy on an empty dataset")
    return float(np.mean(predicted_classes(predict(net, X, scale)) == labels))
