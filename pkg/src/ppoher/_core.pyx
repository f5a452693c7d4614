# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the per-step hot paths.

Every function here has a behaviourally identical twin in ``_pure.py``;
``kernels.py`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, sqrt, log, exp, M_PI

cnp.import_array()


def mlp_forward(list weights, list biases, double[::1] x):
    """Forward one input vector through a tanh MLP with a linear output layer."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t layer, i, j, n_out, n_in
    cdef double acc, a0, a1, a2, a3
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double[::1] h = x
    cdef double[::1] out
    cdef cnp.npy_intp dim
    cdef object out_arr = None
    cdef const double* wr
    cdef const double* hp
    for layer in range(n_layers):
        w = weights[layer]
        b = biases[layer]
        n_out = w.shape[0]
        n_in = w.shape[1]
        if n_in != h.shape[0]:
            raise ValueError(f"layer {layer} expects {n_in} inputs, got {h.shape[0]}")
        dim = n_out
        out_arr = cnp.PyArray_EMPTY(1, &dim, cnp.NPY_FLOAT64, 0)
        out = out_arr
        hp = &h[0]
        for i in range(n_out):
            wr = &w[i, 0]
            # four independent partial sums keep the FMA pipeline busy
            a0 = a1 = a2 = a3 = 0.0
            j = 0
            while j + 4 <= n_in:
                a0 += wr[j] * hp[j]
                a1 += wr[j + 1] * hp[j + 1]
                a2 += wr[j + 2] * hp[j + 2]
                a3 += wr[j + 3] * hp[j + 3]
                j += 4
            while j < n_in:
                a0 += wr[j] * hp[j]
                j += 1
            acc = b[i] + ((a0 + a1) + (a2 + a3))
            if layer < n_layers - 1:
                acc = tanh(acc)
            out[i] = acc
        h = out
    if out_arr is None:
        return np.array(x)
    return out_arr


def move_clamped(double[::1] pos, double[::1] delta, double size, double limit):
    """Clip each delta component to [-limit, limit], move ``pos`` in place inside
    [0, size] and return the displacement actually applied."""
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t i
    cdef double d, p
    if delta.shape[0] != n:
        raise ValueError(f"expected a vector of length {n}, got {delta.shape[0]}")
    disp = np.empty(n, dtype=np.float64)
    cdef double[::1] out = disp
    for i in range(n):
        d = delta[i]
        if limit > 0:
            if d > limit:
                d = limit
            elif d < -limit:
                d = -limit
        p = pos[i] + d
        if p < 0.0:
            p = 0.0
        elif p > size:
            p = size
        out[i] = p - pos[i]
        pos[i] = p
    return disp


def distance(double[::1] a, double[::1] b):
    cdef Py_ssize_t i
    cdef double acc = 0.0, d
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        acc = acc + d * d
    return sqrt(acc)


def gaussian_log_prob(double[::1] mean, double[::1] log_std, double[::1] action):
    """Diagonal-Gaussian log density of one action."""
    cdef Py_ssize_t i
    cdef double z, acc = 0.0
    cdef double half_log_2pi = 0.5 * log(2.0 * M_PI)
    for i in range(mean.shape[0]):
        z = (action[i] - mean[i]) / exp(log_std[i])
        acc = acc - 0.5 * z * z - log_std[i] - half_log_2pi
    return acc


def gae_episode(double[::1] rewards, double[::1] values, double last_value,
                bint bootstrap, double gamma, double lam):
    """Backward GAE recursion over a single episode.

    ``last_value`` is used only when ``bootstrap`` is set (time-limit style
    cutoff); a terminated episode treats the successor value as zero.
    """
    cdef Py_ssize_t n = rewards.shape[0]
    cdef Py_ssize_t t
    cdef double next_value, delta, running = 0.0
    adv = np.empty(n, dtype=np.float64)
    cdef double[::1] out = adv
    next_value = last_value if bootstrap else 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        out[t] = running
        next_value = values[t]
    return adv
