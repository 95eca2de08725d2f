"""Small fully connected networks with hand-written backprop.

``EnsembleMLP`` keeps ``B`` independent networks as stacked arrays so a whole
ensemble trains with batched matmuls. A plain single network is ``B = 1``.
"""
from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def swish(x):
    return x * _sigmoid(x)


def swish_grad(x):
    sig = _sigmoid(x)
    return sig + x * sig * (1.0 - sig)


class EnsembleMLP:
    def __init__(self, sizes, n_members=1, rng=None, zero=False):
        self.sizes = tuple(int(s) for s in sizes)
        self.n_members = int(n_members)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if zero:
                W = np.zeros((self.n_members, fan_in, fan_out))
            else:
                # truncated-normal-ish init scaled by fan-in
                W = np.clip(rng.standard_normal((self.n_members, fan_in, fan_out)), -2, 2)
                W *= 1.0 / np.sqrt(fan_in)
            self.weights.append(W)
            self.biases.append(np.zeros((self.n_members, fan_out)))

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, x, member=None):
        """``x``: ``(B, N, in)`` for the whole stack or ``(N, in)`` for one ``member``."""
        cache = []
        h = x
        n_layers = len(self.weights)
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if member is not None:
                W, b = W[member], b[member]
            z = h @ W + b[..., None, :] if member is None else h @ W + b
            cache.append((h, z))
            h = swish(z) if k < n_layers - 1 else z
        return h, cache

    def backward(self, cache, dout, member=None):
        """Gradients matching ``forward``; layout follows ``params``."""
        grads = [None] * (2 * len(self.weights))
        g = dout
        for k in reversed(range(len(self.weights))):
            h_in, z = cache[k]
            if k < len(self.weights) - 1:
                g = g * swish_grad(z)
            grads[2 * k] = np.swapaxes(h_in, -1, -2) @ g
            grads[2 * k + 1] = g.sum(axis=-2)
            if k > 0:
                W = self.weights[k] if member is None else self.weights[k][member]
                g = g @ np.swapaxes(W, -1, -2)
        return grads

    def n_params(self):
        return sum(p[0].size for p in self.params)

    def get_flat(self, member: int) -> np.ndarray:
        return np.concatenate([p[member].ravel() for p in self.params])

    def set_flat(self, member: int, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        pos = 0
        for p in self.params:
            size = p[member].size
            p[member] = vec[pos : pos + size].reshape(p[member].shape)
            pos += size
        if pos != vec.size:
            raise ValueError(f"expected {pos} parameters, got {vec.size}")

    def copy(self) -> "EnsembleMLP":
        new = EnsembleMLP.__new__(EnsembleMLP)
        new.sizes = self.sizes
        new.n_members = self.n_members
        new.weights = [W.copy() for W in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    """Fixed-step gradient descent with optional heavy-ball momentum."""

    def __init__(self, params, lr=1e-2, momentum=0.0):
        self.lr, self.momentum = lr, momentum
        self.buf = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, b in zip(params, grads, self.buf):
            b *= self.momentum
            b += g
            p -= self.lr * b


def make_optimizer(name, params, lr, momentum=0.9):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {name!r}")
