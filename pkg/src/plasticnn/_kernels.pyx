# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-layer kernels.

Same contract as ``plasticnn._pykernels``; explicit loops avoid the per-call
overhead numpy pays on the small matrices this library trains.
"""
import numpy as np
from libc.math cimport exp, tanh

DEF IDENTITY = 0
DEF RELU = 1
DEF SIGMOID = 2
DEF TANH = 3
DEF SOFTMAX = 4


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def dense_forward(const double[:, ::1] W, const double[::1] b,
                  const double[:, ::1] X, int act):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], m = W.shape[0]
    cdef Py_ssize_t r, i, j
    cdef double s, mx, tot
    if W.shape[1] != d or b.shape[0] != m:
        raise ValueError("shape mismatch in dense_forward")
    if act < 0 or act > 4:
        raise ValueError(f"unknown activation code {act}")
    Z_arr = np.empty((n, m), dtype=np.float64)
    H_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] Z = Z_arr
    cdef double[:, ::1] H = H_arr
    with nogil:
        for r in range(n):
            for i in range(m):
                s = 0.0
                for j in range(d):
                    s = s + X[r, j] * W[i, j]
                Z[r, i] = s + b[i]
            if act == SOFTMAX:
                mx = Z[r, 0]
                for i in range(1, m):
                    if Z[r, i] > mx:
                        mx = Z[r, i]
                tot = 0.0
                for i in range(m):
                    H[r, i] = exp(Z[r, i] - mx)
                    tot = tot + H[r, i]
                for i in range(m):
                    H[r, i] = H[r, i] / tot
            else:
                for i in range(m):
                    if act == IDENTITY:
                        H[r, i] = Z[r, i]
                    elif act == RELU:
                        H[r, i] = Z[r, i] if Z[r, i] > 0.0 else 0.0
                    elif act == SIGMOID:
                        H[r, i] = _sigmoid(Z[r, i])
                    else:
                        H[r, i] = tanh(Z[r, i])
    return Z_arr, H_arr


def activation_backward(const double[:, ::1] Z, const double[:, ::1] H,
                        const double[:, ::1] dH, int act):
    cdef Py_ssize_t n = Z.shape[0], m = Z.shape[1]
    cdef Py_ssize_t r, i
    cdef double dot, h
    if act < 0 or act > 4:
        raise ValueError(f"unknown activation code {act}")
    D_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] D = D_arr
    with nogil:
        for r in range(n):
            if act == SOFTMAX:
                dot = 0.0
                for i in range(m):
                    dot = dot + H[r, i] * dH[r, i]
                for i in range(m):
                    D[r, i] = H[r, i] * (dH[r, i] - dot)
            else:
                for i in range(m):
                    h = H[r, i]
                    if act == IDENTITY:
                        D[r, i] = dH[r, i]
                    elif act == RELU:
                        D[r, i] = dH[r, i] if Z[r, i] > 0.0 else 0.0
                    elif act == SIGMOID:
                        D[r, i] = dH[r, i] * h * (1.0 - h)
                    else:
                        D[r, i] = dH[r, i] * (1.0 - h * h)
    return D_arr


def linear_backward(const double[:, ::1] W, const double[:, ::1] X,
                    const double[:, ::1] delta):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], m = W.shape[0]
    cdef Py_ssize_t r, i, j
    cdef double g
    if W.shape[1] != d or delta.shape[0] != n or delta.shape[1] != m:
        raise ValueError("shape mismatch in linear_backward")
    gW_arr = np.zeros((m, d), dtype=np.float64)
    gb_arr = np.zeros(m, dtype=np.float64)
    dX_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] gW = gW_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] dX = dX_arr
    with nogil:
        for r in range(n):
            for i in range(m):
                g = delta[r, i]
                gb[i] = gb[i] + g
                for j in range(d):
                    gW[i, j] = gW[i, j] + g * X[r, j]
                    dX[r, j] = dX[r, j] + g * W[i, j]
    return gW_arr, gb_arr, dX_arr
