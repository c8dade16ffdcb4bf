# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled bidirectional exponential-decay scan.

This is the hot loop of the long-range mixing blocks: a per-channel
first-order linear recurrence swept in both directions over the flattened
spatial sequence. Forward and gradient passes are both implemented here so
the Python side can expose them through a single autograd function.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused floating:
    float
    double


def ema_scan_forward(floating[:, :, ::1] x, floating[::1] decay):
    """Run both directional passes of the scan.

    x has shape (B, C, L); decay holds one retention factor per channel in
    (0, 1). Returns (y, f, b) where f/b are the forward/backward passes and
    y = 0.5 * (f + b).
    """
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    cdef Py_ssize_t L = x.shape[2]

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64

    f_arr = np.empty((B, C, L), dtype=dtype)
    b_arr = np.empty((B, C, L), dtype=dtype)
    y_arr = np.empty((B, C, L), dtype=dtype)
    cdef floating[:, :, ::1] f = f_arr
    cdef floating[:, :, ::1] b = b_arr
    cdef floating[:, :, ::1] y = y_arr

    cdef Py_ssize_t i, c, t
    cdef floating a, om, state

    with nogil:
        for i in range(B):
            for c in range(C):
                a = decay[c]
                om = 1.0 - a
                state = 0.0
                for t in range(L):
                    state = a * state + om * x[i, c, t]
                    f[i, c, t] = state
                state = 0.0
                for t in range(L - 1, -1, -1):
                    state = a * state + om * x[i, c, t]
                    b[i, c, t] = state
                for t in range(L):
                    y[i, c, t] = 0.5 * (f[i, c, t] + b[i, c, t])

    return y_arr, f_arr, b_arr


def ema_scan_backward(floating[:, :, ::1] gy, floating[:, :, ::1] x,
                      floating[:, :, ::1] f, floating[:, :, ::1] b,
                      floating[::1] decay):
    """Gradients of y = 0.5*(f+b) w.r.t. the input and the decay vector.

    Runs the adjoint recurrences: the forward pass is differentiated with a
    descending sweep, the backward pass with an ascending one.
    """
    cdef Py_ssize_t B = gy.shape[0]
    cdef Py_ssize_t C = gy.shape[1]
    cdef Py_ssize_t L = gy.shape[2]

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64

    gx_arr = np.zeros((B, C, L), dtype=dtype)
    ga_arr = np.zeros((C,), dtype=dtype)
    cdef floating[:, :, ::1] gx = gx_arr
    cdef floating[::1] ga = ga_arr

    cdef Py_ssize_t i, c, t
    cdef floating a, om, adj, acc, prev

    with nogil:
        for i in range(B):
            for c in range(C):
                a = decay[c]
                om = 1.0 - a
                acc = 0.0

                adj = 0.0
                for t in range(L - 1, -1, -1):
                    adj = 0.5 * gy[i, c, t] + a * adj
                    gx[i, c, t] += om * adj
                    prev = f[i, c, t - 1] if t > 0 else 0.0
                    acc += adj * (prev - x[i, c, t])

                adj = 0.0
                for t in range(L):
                    adj = 0.5 * gy[i, c, t] + a * adj
                    gx[i, c, t] += om * adj
                    prev = b[i, c, t + 1] if t < L - 1 else 0.0
                    acc += adj * (prev - x[i, c, t])

                ga[c] += acc

    return gx_arr, ga_arr
