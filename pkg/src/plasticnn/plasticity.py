"""Structural operators: dropout masking, neuron growth and permanent pruning.

Growth appends neurons whose outgoing weights are exactly zero, so the
network computes the same function right after the event; pruning those
neurons again restores the original weights. Dropout follows the
non-inverted form: masks are applied after the nonlinearity during training
and hidden activations are multiplied by ``1 - p`` at inference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .errors import CriterionMismatchError, DimensionError, LayerCollapseError, PolicyError
from .mutations import MutationLog
from .network import ForwardTrace, GradientSet, Network, propagate
from .relevance import RelevanceMap, check_fraction, lowest_scoring


@dataclass
class DropoutMask:
    """Per-layer 0/1 masks; each entry is ``(width,)`` or ``(batch, width)``.

    The output layer's entry is all ones.
    """
    masks: list[np.ndarray]
    rate: float

    def hidden(self) -> list[Optional[np.ndarray]]:
        return list(self.masks[:-1]) + [None]


def _check_rate(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1], got {p}")


def sample_dropout_mask(net: Network, p: float, gen: np.random.Generator,
                        batch: Optional[int] = None) -> DropoutMask:
    """Bernoulli(1 - p) keep bits for every hidden neuron.

    With ``batch`` set, each row gets its own mask. Draws one uniform per
    hidden entry in layer order, so the generator advances deterministically.
    """
    _check_rate(p)
    masks = []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        shape = (layer.out_width,) if batch is None else (batch, layer.out_width)
        if i == last:
            masks.append(np.ones(shape))
        else:
            masks.append((gen.random(shape) >= p).astype(np.float64))
    return DropoutMask(masks, p)


def fixed_mask(net: Network, drop: Sequence[Sequence[int]]) -> DropoutMask:
    """Deterministic mask zeroing the listed neurons of each hidden layer."""
    masks = [np.ones(layer.out_width) for layer in net.layers]
    for i, idx in enumerate(drop):
        if idx and i == len(net.layers) - 1:
            raise PolicyError("the output layer cannot be masked")
        masks[i][list(idx)] = 0.0
    return DropoutMask(masks, 0.0)


def _check_mask(net: Network, mask: DropoutMask) -> None:
    if len(mask.masks) != len(net.layers):
        raise DimensionError(f"mask covers {len(mask.masks)} layers, network has {len(net.layers)}")
    for i, (m, layer) in enumerate(zip(mask.masks, net.layers)):
        if np.shape(m)[-1] != layer.out_width:
            raise DimensionError(f"layer {i}: mask width {np.shape(m)[-1]} != {layer.out_width}")


def masked_forward(net: Network, x, mask: DropoutMask) -> ForwardTrace:
    _check_mask(net, mask)
    return propagate(net, x, masks=mask.hidden())


def inference_forward_scaled(net: Network, x, p: float) -> np.ndarray:
    if not 0.0 <= p < 1.0:
        raise PolicyError(f"inference scaling needs p in [0, 1), got {p}")
    return propagate(net, x, scale=1.0 - p).output


def default_growth_count(width: int) -> int:
    return max(1, math.ceil(0.25 * width))


def grow_neurons(net: Network, layer: int, k: int, init_scale: float,
                 gen: np.random.Generator, log: Optional[MutationLog] = None,
                 epoch: int = 0, trigger: str = "manual",
                 allow_output: bool = False) -> Network:
    """Append ``k`` neurons to ``layer``.

    Incoming weights are uniform(-init_scale, init_scale), biases zero and the
    next layer receives ``k`` zero columns. Growing the output layer is only
    allowed with ``allow_output`` (new classes) and then only adds rows.
    """
    last = len(net.layers) - 1
    if not 0 <= layer <= last:
        raise PolicyError(f"layer {layer} out of range")
    if layer == last and not allow_output:
        raise PolicyError("growing the output layer is not allowed")
    if k < 1:
        raise PolicyError(f"growth count must be >= 1, got {k}")
    target = net.layers[layer]
    old = target.out_width
    new_rows = gen.uniform(-init_scale, init_scale, size=(k, target.in_width))
    target.weights = np.ascontiguousarray(np.vstack([target.weights, new_rows]))
    target.bias = np.concatenate([target.bias, np.zeros(k)])
    if layer < last:
        nxt = net.layers[layer + 1]
        nxt.weights = np.ascontiguousarray(
            np.hstack([nxt.weights, np.zeros((nxt.out_width, k))]))
    if log is not None:
        log.record(epoch, "grow", layer, range(old, old + k), trigger)
    return net


def prune_neurons(net: Network, layer: int, indices, log: Optional[MutationLog] = None,
                  epoch: int = 0, trigger: str = "manual", min_width: int = 1) -> Network:
    """Permanently remove neurons of a hidden layer and their outgoing columns."""
    last = len(net.layers) - 1
    if not 0 <= layer < last:
        raise PolicyError(f"layer {layer} is not a prunable hidden layer")
    idx = sorted(set(int(i) for i in indices))
    target = net.layers[layer]
    width = target.out_width
    if any(i < 0 or i >= width for i in idx):
        raise IndexError(f"prune indices {idx} out of range for width {width}")
    if width - len(idx) < max(1, min_width):
        raise LayerCollapseError(
            f"pruning {len(idx)} of {width} neurons would leave layer {layer} "
            f"below width {max(1, min_width)}")
    if not idx:
        return net
    target.weights = np.ascontiguousarray(np.delete(target.weights, idx, axis=0))
    target.bias = np.delete(target.bias, idx)
    nxt = net.layers[layer + 1]
    nxt.weights = np.ascontiguousarray(np.delete(nxt.weights, idx, axis=1))
    if log is not None:
        log.record(epoch, "prune", layer, idx, trigger)
    return net


class CriterionKind(str, Enum):
    MAGNITUDE = "magnitude"
    ACTIVATION = "activation"
    GRADIENT = "gradient"
    RELEVANCE = "relevance"


@dataclass(frozen=True)
class PruneCriterion:
    kind: CriterionKind = CriterionKind.MAGNITUDE
    fraction: float = 0.25
    min_width: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", CriterionKind(self.kind))
        check_fraction(self.fraction, self.min_width)


@dataclass
class ActivationStats:
    """Mean absolute activation of every neuron over a probe batch."""
    mean_abs: list[np.ndarray]


def collect_activation_stats(net: Network, X) -> ActivationStats:
    trace = propagate(net, np.atleast_2d(X))
    return ActivationStats([np.mean(np.abs(h), axis=0) for h in trace.post])


Stats = Union[None, ActivationStats, GradientSet, RelevanceMap]


def neuron_scores(net: Network, stats: Stats, kind: CriterionKind) -> list[np.ndarray]:
    """Importance score per neuron and layer; lower means more prunable."""
    kind = CriterionKind(kind)
    if kind is CriterionKind.MAGNITUDE:
        if stats is not None:
            raise CriterionMismatchError("magnitude pruning takes no statistics")
        return [np.linalg.norm(layer.weights, axis=1) for layer in net.layers]
    expected = {CriterionKind.ACTIVATION: ActivationStats,
                CriterionKind.GRADIENT: GradientSet,
                CriterionKind.RELEVANCE: RelevanceMap}[kind]
    if not isinstance(stats, expected):
        raise CriterionMismatchError(
            f"{kind.value} pruning needs {expected.__name__}, got {type(stats).__name__}")
    if kind is CriterionKind.ACTIVATION:
        scores = [np.asarray(s, dtype=np.float64) for s in stats.mean_abs]
    elif kind is CriterionKind.GRADIENT:
        scores = [np.sum(np.abs(g), axis=1) for g in stats.weights]
    else:
        scores = [np.abs(r) for r in stats.layers]
    if [len(s) for s in scores] != [layer.out_width for layer in net.layers]:
        raise DimensionError("statistics do not match the current network widths")
    return scores


def pruning_candidates(net: Network, stats: Stats, criterion: PruneCriterion) -> list[list[int]]:
    """Lowest-score neurons per hidden layer; the output layer's entry is empty."""
    scores = neuron_scores(net, stats, criterion.kind)
    picks = [lowest_scoring(s, criterion.fraction, criterion.min_width) for s in scores[:-1]]
    return picks + [[]]


def prune_candidates(net: Network, candidates: Sequence[Sequence[int]],
                     log: Optional[MutationLog] = None, epoch: int = 0,
                     trigger: str = "manual", min_width: int = 1) -> Network:
    for layer, idx in enumerate(candidates):
        if idx:
            prune_neurons(net, layer, idx, log, epoch, trigger, min_width)
    return net
