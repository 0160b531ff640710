"""Dense tanh networks with an explicit backward pass, plus Adam.

Each network keeps all of its parameters in one contiguous buffer; the
per-layer weight and bias arrays are views into it. That lets the optimiser
and Polyak averaging run as single fused kernels over the whole net.
"""

from __future__ import annotations

import numpy as np

from twinsac import _kernels


class DenseNet:
    """Fully connected net: tanh on hidden layers, linear output.

    ``params`` is ``[W0, b0, W1, b1, ...]`` with ``W_i`` of shape
    ``(fan_in, fan_out)``; ``forward`` computes ``x @ W + b`` per layer.
    """

    def __init__(self, layer_sizes, rng: np.random.Generator | None = None, out_scale: float = 1.0, dtype=np.float64):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {layer_sizes!r}")
        self.dtype = np.dtype(dtype)
        self.shapes = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self.flat = np.zeros(sum(int(np.prod(s)) for s in self.shapes), dtype=self.dtype)
        self.params = self._views(self.flat)
        if rng is None:
            return
        n_layers = len(self.layer_sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if i == n_layers - 1:
                w *= out_scale
            self.params[2 * i][...] = w

    def _views(self, buf) -> list:
        views, offset = [], 0
        for s in self.shapes:
            n = int(np.prod(s))
            views.append(buf[offset : offset + n].reshape(s))
            offset += n
        return views

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def size(self) -> int:
        return self.flat.size

    def copy(self) -> "DenseNet":
        net = DenseNet(self.layer_sizes, dtype=self.dtype)
        net.flat[...] = self.flat
        return net

    def load(self, params) -> None:
        if len(params) != len(self.params):
            raise ValueError(f"expected {len(self.params)} parameter arrays, got {len(params)}")
        for dst, src in zip(self.params, params):
            if dst.shape != np.shape(src):
                raise ValueError(f"shape mismatch {dst.shape} vs {np.shape(src)}")
            dst[...] = src

    def forward(self, x: np.ndarray):
        """Returns ``(output, cache)``; ``cache`` holds each layer's input."""
        h = np.asarray(x, dtype=self.dtype)
        cache = [h]
        last = self.n_layers - 1
        for i in range(self.n_layers):
            h = h @ self.params[2 * i]
            h += self.params[2 * i + 1]
            if i < last:
                np.tanh(h, out=h)
            cache.append(h)
        return h, cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dout: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Gradient of the loss w.r.t. the flat parameter buffer."""
        grad = np.empty_like(self.flat) if out is None else out
        views = self._views(grad)
        delta = np.asarray(dout, dtype=self.dtype)
        for i in range(self.n_layers - 1, -1, -1):
            a_in = cache[i]
            np.matmul(a_in.T, delta, out=views[2 * i])
            np.sum(delta, axis=0, out=views[2 * i + 1])
            if i > 0:
                delta = delta @ self.params[2 * i].T
                delta *= 1.0 - a_in * a_in
        return grad

    def grad_list(self, grad: np.ndarray) -> list:
        return self._views(grad)


class Adam:
    """Adam over one flat parameter buffer."""

    def __init__(self, size: int, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def reset(self) -> None:
        self.m[...] = 0.0
        self.v[...] = 0.0
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        _kernels.adam_step(flat, grad, self.m, self.v, self.lr, self.beta1, self.beta2, self.eps, c1, c2)
