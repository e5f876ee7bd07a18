import math
import sys

import numpy as np
import pytest

from plasticnn import rng
from plasticnn.network import Activation, DenseLayer, Network, init_network

HIDDEN_ACTS = ["identity", "relu", "sigmoid", "tanh"]


def scalar_activate(zs, act):
    if act == "softmax":
        m = max(zs)
        es = [math.exp(z - m) for z in zs]
        tot = sum(es)
        return [e / tot for e in es]
    out = []
    for z in zs:
        if act == "identity":
            out.append(z)
        elif act == "relu":
            out.append(z if z > 0 else 0.0)
        elif act == "sigmoid":
            out.append(1.0 / (1.0 + math.exp(-z)))
        elif act == "tanh":
            out.append(math.tanh(z))
    return out


def scalar_forward(net, x, mask=None, scale=1.0):
    """Reference forward pass with explicit loops over Python floats."""
    h = [float(v) for v in x]
    last = len(net.layers) - 1
    for li, layer in enumerate(net.layers):
        zs = []
        for i in range(layer.out_width):
            s = 0.0
            for j in range(layer.in_width):
                s += float(layer.weights[i, j]) * h[j]
            zs.append(s + float(layer.bias[i]))
        h = scalar_activate(zs, layer.activation.value)
        if li != last:
            if mask is not None:
                h = [v * float(m) for v, m in zip(h, mask[li])]
            h = [v * scale for v in h]
    return h


def scalar_loss(pred, target, kind):
    if kind == "mean_squared_error":
        return sum((p - t) ** 2 for p, t in zip(pred, target)) / len(pred)
    return -sum(t * math.log(max(p, 1e-12)) for p, t in zip(pred, target))


def random_net(gen, depth=None, max_width=8, input_width=None, acts=None, output_act=None):
    """Random network with random activations; seeds come from ``gen``."""
    depth = depth or int(gen.integers(1, 5))
    widths = [int(input_width or gen.integers(1, max_width + 1))]
    widths += [int(gen.integers(1, max_width + 1)) for _ in range(depth)]
    if acts is None:
        acts = [HIDDEN_ACTS[int(gen.integers(0, 4))] for _ in range(depth)]
        if output_act is not None:
            acts[-1] = output_act
    net = init_network(widths, acts, int(gen.integers(0, 2**31)))
    for layer in net.layers:
        layer.bias[:] = gen.normal(0, 0.3, size=layer.out_width)
    return net


def build_net(weights, biases, acts):
    layers = [DenseLayer(np.array(W, dtype=float), np.array(b, dtype=float), Activation(a))
              for W, b, a in zip(weights, biases, acts)]
    return Network(layers, layers[0].in_width, 0)


def finite_difference_grads(net, x, target, kind, step=1e-5):
    """Central differences of the batch-mean loss using the scalar oracle."""
    X = np.atleast_2d(x)
    T = np.atleast_2d(target)

    def total():
        return sum(scalar_loss(scalar_forward(net, row), t, kind) for row, t in zip(X, T)) / len(X)

    gW, gb = [], []
    for layer in net.layers:
        gw = np.zeros_like(layer.weights)
        for idx in np.ndindex(layer.weights.shape):
            old = layer.weights[idx]
            layer.weights[idx] = old + step
            up = total()
            layer.weights[idx] = old - step
            down = total()
            layer.weights[idx] = old
            gw[idx] = (up - down) / (2 * step)
        g = np.zeros_like(layer.bias)
        for i in range(layer.out_width):
            old = layer.bias[i]
            layer.bias[i] = old + step
            up = total()
            layer.bias[i] = old - step
            down = total()
            layer.bias[i] = old
            g[i] = (up - down) / (2 * step)
        gW.append(gw)
        gb.append(g)
    return gW, gb


@pytest.fixture
def gen():
    return np.random.default_rng(20260601)


@pytest.fixture
def xor_data():
    from plasticnn.data import Dataset
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    g = rng.stream(99, "xor-val")
    Xv = np.repeat(X, 10, axis=0) + g.normal(0.0, 0.05, size=(40, 2))
    return Dataset(X, y), Dataset(Xv, np.repeat(y, 10))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
