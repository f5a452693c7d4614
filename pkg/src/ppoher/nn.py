"""Small dense networks with hand-written backprop, Adam and a Gaussian head.

Everything is float64. Batched passes use numpy matmuls; single-observation
inference during rollouts goes through ``kernels.mlp_forward``.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ppoher import kernels

LOG_STD_FLOOR = -5.0
LOG_STD_CEILING = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


def orthogonal(shape, gain, rng):
    """Orthogonal matrix of ``shape`` scaled by ``gain`` (QR of a Gaussian draw)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class ForwardCache:
    __slots__ = ("net", "shapes", "inputs", "outputs")

    def __init__(self, net, inputs, outputs):
        self.net = net
        self.shapes = [w.shape for w in net.weights]
        self.inputs = inputs
        self.outputs = outputs


class DenseNet:
    """tanh MLP with a linear output layer.

    Hidden layers get orthogonal weights with gain sqrt(2); the output layer
    uses ``output_gain``. Biases start at zero.
    """

    def __init__(self, sizes, rng=None, output_gain=1.0, hidden_gain=math.sqrt(2.0)):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = output_gain if i == len(sizes) - 2 else hidden_gain
            self.weights.append(np.ascontiguousarray(orthogonal((n_out, n_in), gain, rng)))
            self.biases.append(np.zeros(n_out))

    @classmethod
    def from_layers(cls, layers):
        net = cls.__new__(cls)
        net.weights = [np.ascontiguousarray(w, dtype=np.float64) for w, _ in layers]
        net.biases = [np.ascontiguousarray(b, dtype=np.float64) for _, b in layers]
        for i in range(1, len(net.weights)):
            if net.weights[i].shape[1] != net.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input size does not match layer {i - 1} output")
        for w, b in zip(net.weights, net.biases):
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape does not match weight rows")
        return net

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x):
        """Return ``(output, cache)`` for a vector or a (batch, in) matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights[0].shape[1]:
            raise ValueError(f"input has {x.shape[-1]} features, expected {self.weights[0].shape[1]}")
        inputs, outputs = [], []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w.T + b
            if i < last:
                h = np.tanh(h)
            outputs.append(h)
        return h, ForwardCache(self, inputs, outputs)

    def __call__(self, x):
        return self.forward(x)[0]

    def predict_one(self, x):
        return kernels.mlp_forward(self.weights, self.biases, x)

    def backward(self, cache: ForwardCache, output_grad):
        """Reverse-mode pass; returns ``(param_grads, input_grad)``.

        ``param_grads`` is ordered like :meth:`parameters`. For batched input
        the parameter gradients are summed over the batch.
        """
        if cache.net is not self or cache.shapes != [w.shape for w in self.weights]:
            raise ValueError("cache was produced by a different network")
        g = np.asarray(output_grad, dtype=np.float64)
        if g.shape != cache.outputs[-1].shape:
            raise ValueError(f"output_grad shape {g.shape} != output shape {cache.outputs[-1].shape}")
        n = len(self.weights)
        grads = [None] * (2 * n)
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                g = g * (1.0 - cache.outputs[i] ** 2)
            x = cache.inputs[i]
            if g.ndim == 1:
                grads[2 * i] = np.outer(g, x)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = g.T @ x
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        return grads, g

    def copy(self):
        return DenseNet.from_layers([(w.copy(), b.copy()) for w, b in zip(self.weights, self.biases)])


class GaussianPolicy:
    """Diagonal Gaussian with an MLP mean and a state-independent log std."""

    def __init__(self, obs_dim, act_dim, hidden=(64, 64), rng=None, init_log_std=0.0):
        self.mean_net = DenseNet([obs_dim, *hidden, act_dim], rng=rng, output_gain=0.01)
        self.log_std = np.full(act_dim, float(init_log_std))

    @property
    def act_dim(self):
        return self.log_std.shape[0]

    @property
    def obs_dim(self):
        return self.mean_net.sizes[0]

    def parameters(self):
        return self.mean_net.parameters() + [self.log_std]

    def clamp_log_std(self):
        np.clip(self.log_std, LOG_STD_FLOOR, LOG_STD_CEILING, out=self.log_std)

    def mean(self, obs):
        return self.mean_net(obs)

    def log_prob(self, obs, actions):
        mu = self.mean_net(obs)
        return diag_gaussian_log_prob(mu, self.log_std, actions)

    def log_prob_one(self, obs, action):
        return kernels.gaussian_log_prob(self.mean_net.predict_one(obs), self.log_std, action)

    def sample(self, obs, rng):
        mu = self.mean_net.predict_one(obs)
        action = mu + np.exp(self.log_std) * rng.standard_normal(mu.shape[0])
        return action, kernels.gaussian_log_prob(mu, self.log_std, action)

    def entropy(self):
        return float(np.sum(self.log_std + _HALF_LOG_2PIE))


class ValueNet:
    def __init__(self, obs_dim, hidden=(64, 64), rng=None):
        self.net = DenseNet([obs_dim, *hidden, 1], rng=rng, output_gain=1.0)

    def parameters(self):
        return self.net.parameters()

    def __call__(self, obs):
        out = self.net(obs)
        return out[..., 0]

    def value_one(self, obs):
        return float(self.net.predict_one(obs)[0])


def diag_gaussian_log_prob(mean, log_std, actions):
    z = (actions - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def gaussian_log_prob(policy: GaussianPolicy, obs, action):
    obs = np.asarray(obs, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if obs.ndim == 1:
        return policy.log_prob_one(obs, action)
    return policy.log_prob(obs, action)


def gaussian_sample(policy: GaussianPolicy, obs, rng):
    return policy.sample(np.asarray(obs, dtype=np.float64), rng)


def gaussian_entropy(policy: GaussianPolicy):
    return policy.entropy()


class Adam:
    """Bias-corrected Adam over a list of arrays updated in place.

    ``weight_decay`` is decoupled: parameters are shrunk by
    ``1 - lr * weight_decay`` before the moment-based step.
    """

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        if weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for p, g in zip(self.params, grads):
            if p.shape != np.shape(g):
                raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return self.params


def adam_step(state: Adam, params, grads):
    if len(params) != len(state.params) or any(a is not b for a, b in zip(params, state.params)):
        raise ValueError("params do not belong to this optimizer state")
    return state.step(grads)


def clip_grad_norm(grads, max_norm):
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total


CHECKPOINT_MAGIC = "PPOHER-CHECKPOINT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict):
    """Write named float64 arrays: a text header line, then raw little-endian data."""
    header = {
        "version": CHECKPOINT_VERSION,
        "arrays": [[name, list(np.shape(a))] for name, a in arrays.items()],
    }
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {json.dumps(header, separators=(',', ':'))}\n".encode())
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    magic, _, payload = data[:nl].decode().partition(" ")
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    header = json.loads(payload)
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    out = {}
    offset = nl + 1
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise ValueError("checkpoint payload size does not match header")
    return out


def agent_arrays(policy: GaussianPolicy, value_net: ValueNet) -> dict:
    arrays = {}
    for i, (w, b) in enumerate(zip(policy.mean_net.weights, policy.mean_net.biases)):
        arrays[f"policy.w{i}"] = w
        arrays[f"policy.b{i}"] = b
    arrays["policy.log_std"] = policy.log_std
    for i, (w, b) in enumerate(zip(value_net.net.weights, value_net.net.biases)):
        arrays[f"value.w{i}"] = w
        arrays[f"value.b{i}"] = b
    return arrays


def load_agent(path):
    """Rebuild ``(policy, value_net)`` from a checkpoint written with :func:`agent_arrays`."""
    arrays = load_checkpoint(path)

    def layers(prefix):
        out, i = [], 0
        while f"{prefix}.w{i}" in arrays:
            out.append((arrays[f"{prefix}.w{i}"], arrays[f"{prefix}.b{i}"]))
            i += 1
        return out

    policy = GaussianPolicy.__new__(GaussianPolicy)
    policy.mean_net = DenseNet.from_layers(layers("policy"))
    policy.log_std = arrays["policy.log_std"].copy()
    value_net = ValueNet.__new__(ValueNet)
    value_net.net = DenseNet.from_layers(layers("value"))
    return policy, value_net
