import os
import subprocess
import sys

import numpy as np
import pytest

from plasticnn import _pykernels, kernels

try:
    from plasticnn import _kernels
except ImportError:  # extension not built
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")
ACTS = [kernels.IDENTITY, kernels.RELU, kernels.SIGMOID, kernels.TANH, kernels.SOFTMAX]


def case(gen, n=5, i=4, o=3, scale=1.0):
    W = gen.normal(size=(o, i)) * scale
    b = gen.normal(size=o)
    X = gen.normal(size=(n, i)) * scale
    return np.ascontiguousarray(W), b, np.ascontiguousarray(X)


@needs_ext
class TestParity:
    @pytest.mark.parametrize("act", ACTS)
    def test_forward(self, gen, act):
        for _ in range(10):
            W, b, X = case(gen, scale=5.0)
            zc, hc = _kernels.dense_forward(W, b, X, act)
            zp, hp = _pykernels.dense_forward(W, b, X, act)
            np.testing.assert_allclose(zc, zp, rtol=0, atol=1e-12)
            np.testing.assert_allclose(hc, hp, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("act", ACTS)
    def test_backward(self, gen, act):
        W, b, X = case(gen)
        z, h = _pykernels.dense_forward(W, b, X, act)
        dH = gen.normal(size=h.shape)
        dc = _kernels.activation_backward(z, h, dH, act)
        dp = _pykernels.activation_backward(z, h, dH, act)
        np.testing.assert_allclose(dc, dp, rtol=0, atol=1e-12)
        for a, c in zip(_kernels.linear_backward(W, X, dp), _pykernels.linear_backward(W, X, dp)):
            np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)

    def test_extreme_sigmoid(self):
        z = np.array([[-800.0, 0.0, 800.0]])
        W = np.eye(3)
        _, hc = _kernels.dense_forward(W, np.zeros(3), z, kernels.SIGMOID)
        assert np.all(np.isfinite(hc))
        assert hc.tolist() == [[0.0, 0.5, 1.0]]


def test_relu_derivative_at_zero():
    z = np.zeros((1, 2))
    h = np.zeros((1, 2))
    d = kernels.activation_backward(z, h, np.ones((1, 2)), kernels.RELU)
    assert d.tolist() == [[0.0, 0.0]]


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if _kernels is not None and os.environ.get("PLASTICNN_PURE_PYTHON") != "1":
        assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, PLASTICNN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from plasticnn import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
def test_size_routing(gen):
    # tiny layers take the compiled loops, large ones the numpy path bit for bit
    W, b, X = case(gen, n=64, i=32, o=32)
    z, h = kernels.dense_forward(W, b, X, kernels.TANH)
    zp, hp = _pykernels.dense_forward(W, b, X, kernels.TANH)
    assert np.array_equal(z, zp) and np.array_equal(h, hp)
    for a, c in zip(kernels.linear_backward(W, X, h), _pykernels.linear_backward(W, X, h)):
        assert np.array_equal(a, c)
    W, b, X = case(gen, n=2, i=3, o=2)
    assert np.array_equal(kernels.dense_forward(W, b, X, kernels.RELU)[1],
                          _kernels.dense_forward(W, b, X, kernels.RELU)[1])
