"""Pure-numpy dense-layer kernels; the fallback when the compiled core is absent.

Activation codes: 0 identity, 1 relu, 2 sigmoid, 3 tanh, 4 softmax (row-wise).
All arrays are float64; batches are rows.
"""
import numpy as np

IDENTITY, RELU, SIGMOID, TANH, SOFTMAX = range(5)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, act):
    if act == IDENTITY:
        return z.copy()
    if act == RELU:
        return np.maximum(z, 0.0)
    if act == SIGMOID:
        return _sigmoid(z)
    if act == TANH:
        return np.tanh(z)
    if act == SOFTMAX:
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown activation code {act}")


def dense_forward(W, b, X, act):
    """Return ``(Z, H)`` with ``Z = X W^T + b`` and ``H = f(Z)``."""
    Z = X @ W.T + b
    return Z, _activate(Z, act)


def activation_backward(Z, H, dH, act):
    """Map a gradient w.r.t. activations onto pre-activations."""
    if act == IDENTITY:
        return dH.copy()
    if act == RELU:
        # relu'(0) is taken as 0
        return dH * (Z > 0.0)
    if act == SIGMOID:
        return dH * H * (1.0 - H)
    if act == TANH:
        return dH * (1.0 - H * H)
    if act == SOFTMAX:
        return H * (dH - (H * dH).sum(axis=1, keepdims=True))
    raise ValueError(f"unknown activation code {act}")


def linear_backward(W, X, delta):
    """Return ``(gW, gb, dX)`` for ``Z = X W^T + b`` given ``delta = dL/dZ``."""
    return delta.T @ X, delta.sum(axis=0), delta @ W
