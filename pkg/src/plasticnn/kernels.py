"""Backend selection for the dense-layer kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementation in ``_pykernels`` is used. Setting the environment
variable ``PLASTICNN_PURE_PYTHON=1`` forces the fallback.

The compiled loops win on small layers, where numpy's call overhead
dominates, and lose to BLAS on large ones, so calls are routed by size.
The crossovers come from ``benchmarks/bench_kernels.py``.
"""
import os

from . import _pykernels

IDENTITY = _pykernels.IDENTITY
RELU = _pykernels.RELU
SIGMOID = _pykernels.SIGMOID
TANH = _pykernels.TANH
SOFTMAX = _pykernels.SOFTMAX

_impl = _pykernels
BACKEND = "python"
if os.environ.get("PLASTICNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

MATMUL_CROSSOVER = 1024  # batch * in * out multiply-adds
ELEMENTWISE_CROSSOVER = 512  # batch * width entries


def dense_forward(W, b, X, act):
    impl = _impl if X.shape[0] * W.shape[0] * W.shape[1] <= MATMUL_CROSSOVER else _pykernels
    return impl.dense_forward(W, b, X, act)


def activation_backward(Z, H, dH, act):
    # the compiled softmax Jacobian product wins at every size measured
    small = act == SOFTMAX or Z.shape[0] * Z.shape[1] <= ELEMENTWISE_CROSSOVER
    return (_impl if small else _pykernels).activation_backward(Z, H, dH, act)


def linear_backward(W, X, delta):
    impl = _impl if X.shape[0] * W.shape[0] * W.shape[1] <= MATMUL_CROSSOVER else _pykernels
    return impl.linear_backward(W, X, delta)
