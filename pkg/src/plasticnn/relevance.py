"""Layer-wise relevance propagation (epsilon rule) and the selections built on it.

Relevance starts at the most active output neuron of each sample, with the
value of that activation, and is pushed input-ward with

    R_i = sum_j  a_i w_ji / (s_j + eps * sign(s_j)) * R_j,   s_j = sum_k a_k w_jk

Biases are left out of ``s_j`` so a layer's relevance sum matches the one
above it up to the stabilizer leak. Batch traces give the mean over rows.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import StaleStateError
from .network import ForwardTrace, Network, layer_shapes

DEFAULT_EPSILON = 1e-6


@dataclass
class RelevanceMap:
    layers: list[np.ndarray]  # layers[l][i]: relevance of neuron i in layer l's output
    input: np.ndarray
    output_relevance: float

    def widths(self) -> list[int]:
        return [len(r) for r in self.layers]


def _stabilize(s: np.ndarray, eps: float) -> np.ndarray:
    # sign(0) counts as positive so the denominator never vanishes
    return s + np.where(s >= 0, eps, -eps)


def lrp_scores(net: Network, trace: ForwardTrace,
               stabilizer_epsilon: float = DEFAULT_EPSILON) -> RelevanceMap:
    if stabilizer_epsilon <= 0:
        raise ValueError(f"stabilizer epsilon must be positive, got {stabilizer_epsilon}")
    if trace.shapes != layer_shapes(net):
        raise StaleStateError("trace was produced by a different network shape")
    acts = [np.atleast_2d(trace.inputs)] + [np.atleast_2d(h) for h in trace.post]
    out = acts[-1]
    n = out.shape[0]
    rows = np.arange(n)
    anchor = np.argmax(out, axis=1)
    R = np.zeros_like(out)
    R[rows, anchor] = out[rows, anchor]

    per_layer = [None] * len(net.layers)
    per_layer[-1] = R.mean(axis=0)
    for i in range(len(net.layers) - 1, -1, -1):
        W = net.layers[i].weights
        a = acts[i]
        s = a @ W.T
        R = a * ((R / _stabilize(s, stabilizer_epsilon)) @ W)
        if i > 0:
            per_layer[i - 1] = R.mean(axis=0)
    return RelevanceMap(per_layer, R.mean(axis=0), float(out[rows, anchor].mean()))


def layer_relevance(rmap: RelevanceMap) -> np.ndarray:
    """Per-layer sum of absolute neuron relevances."""
    return np.array([float(np.sum(np.abs(r))) for r in rmap.layers])


def select_growth_layer(sums: Sequence[float]) -> Optional[int]:
    """Pick the hidden layer whose relevance sum strictly beats the hidden-layer mean.

    The last entry is the output layer and is never eligible. Returns ``None``
    when there is no hidden layer or nothing exceeds the mean.
    """
    eligible = np.asarray(sums, dtype=np.float64)[:-1]
    if eligible.size == 0:
        return None
    best = int(np.argmax(eligible))  # first index on ties
    if np.all(eligible == eligible[best]):
        return None  # the rounded mean of equal values can land below them
    if eligible[best] > eligible.mean():
        return best
    return None


def lowest_scoring(scores, fraction: float, min_width: int) -> list[int]:
    """Indices of the lowest scores, at most floor(fraction * width), never leaving
    fewer than ``min_width`` survivors. Ties go to the smaller index."""
    scores = np.asarray(scores, dtype=np.float64)
    width = scores.shape[0]
    k = min(int(math.floor(fraction * width + 1e-9)), width - min_width)
    if k <= 0:
        return []
    order = np.argsort(scores, kind="stable")
    return sorted(int(i) for i in order[:k])


def check_fraction(fraction: float, min_width: int) -> None:
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if min_width < 1:
        raise ValueError(f"min_width must be >= 1, got {min_width}")


def select_prunable_neurons(rmap: RelevanceMap, fraction: float, min_width: int,
                            exclude_output: bool = True) -> list[list[int]]:
    """Per layer, the least relevant neurons by absolute relevance."""
    check_fraction(fraction, min_width)
    picks = [lowest_scoring(np.abs(r), fraction, min_width) for r in rmap.layers]
    if exclude_output and picks:
        picks[-1] = []
    return picks


def write_relevance_csv(rmap: RelevanceMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "neuron", "relevance"])
        for li, r in enumerate(rmap.layers):
            for ni, v in enumerate(r):
                w.writerow([li, ni, repr(float(v))])
