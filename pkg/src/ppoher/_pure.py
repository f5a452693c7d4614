"""Pure numpy fallback for the compiled kernels in ``_core.pyx``."""
import math

import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def mlp_forward(weights, biases, x):
    h = np.asarray(x, dtype=np.float64)
    last = len(weights) - 1
    for layer, (w, b) in enumerate(zip(weights, biases)):
        if w.shape[1] != h.shape[0]:
            raise ValueError(f"layer {layer} expects {w.shape[1]} inputs, got {h.shape[0]}")
        h = w @ h + b
        if layer < last:
            h = np.tanh(h)
    return h


def move_clamped(pos, delta, size, limit):
    if delta.shape[0] != pos.shape[0]:
        raise ValueError(f"expected a vector of length {pos.shape[0]}, got {delta.shape[0]}")
    if limit > 0:
        delta = np.clip(delta, -limit, limit)
    new = np.clip(pos + delta, 0.0, size)
    disp = new - pos
    pos[:] = new
    return disp


def distance(a, b):
    return math.sqrt(float(np.sum((a - b) ** 2)))


def gaussian_log_prob(mean, log_std, action):
    z = (action - mean) / np.exp(log_std)
    return float(np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI))


def gae_episode(rewards, values, last_value, bootstrap, gamma, lam):
    n = len(rewards)
    adv = np.empty(n, dtype=np.float64)
    next_value = last_value if bootstrap else 0.0
    running = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv
