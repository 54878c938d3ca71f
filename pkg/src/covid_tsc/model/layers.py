"""Numpy forward/backward kernels.

Tensors are NHWC. ``forward`` returns ``(output, cache)`` and never stores
state on the layer, so a fitted network can be shared across threads.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .spec import LayerSpec


class Layer:
    trainable_params: tuple[str, ...] = ()

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, dy, cache, need_dx: bool = True):
        """Returns (dx or None, {param name: gradient})."""
        raise NotImplementedError


class Conv2D(Layer):
    trainable_params = ("W", "b")

    def __init__(self, kh: int, kw: int, cin: int, filters: int, rng: np.random.Generator, dtype):
        limit = np.sqrt(6.0 / (kh * kw * cin))
        self.W = rng.uniform(-limit, limit, size=(kh, kw, cin, filters)).astype(dtype)
        self.b = np.zeros(filters, dtype=dtype)

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, train=False):
        kh, kw, cin, f = self.W.shape
        n, h, w, _ = x.shape
        ho, wo = h - kh + 1, w - kw + 1
        win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # n, ho, wo, c, kh, kw
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
        y = cols @ self.W.reshape(-1, f) + self.b
        y = y.reshape(n, ho, wo, f)
        return y, ((cols, x.shape) if train else None)

    def backward(self, dy, cache, need_dx=True):
        cols, xshape = cache
        kh, kw, cin, f = self.W.shape
        dyf = dy.reshape(-1, f)
        grads = {"W": (cols.T @ dyf).reshape(self.W.shape), "b": dyf.sum(axis=0)}
        if not need_dx:
            return None, grads
        _, ho, wo, _ = dy.shape
        dx = np.zeros(xshape, dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + ho, j:j + wo, :] += dy @ self.W[i, j].T
        return dx, grads


class MaxPool(Layer):
    def __init__(self, size: int):
        self.size = size

    def _views(self, x):
        p = self.size
        ho, wo = x.shape[1] // p, x.shape[2] // p
        return [(i, j, x[:, i:ho * p:p, j:wo * p:p]) for i in range(p) for j in range(p)]

    def forward(self, x, train=False):
        views = self._views(x)
        y = views[0][2].copy()
        for _, _, v in views[1:]:
            np.maximum(y, v, out=y)
        return y, ((x, y) if train else None)

    def backward(self, dy, cache, need_dx=True):
        # gradient goes to the first maximum of each window (row-major)
        if not need_dx:
            return None, {}
        x, y = cache
        p = self.size
        ho, wo = y.shape[1], y.shape[2]
        dx = np.zeros_like(x, dtype=dy.dtype)
        claimed = np.zeros(y.shape, dtype=bool)
        for i, j, v in self._views(x):
            hit = (v == y) & ~claimed
            claimed |= hit
            dx[:, i:ho * p:p, j:wo * p:p] = dy * hit
        return dx, {}


class Flatten(Layer):
    def forward(self, x, train=False):
        return x.reshape(x.shape[0], -1), (x.shape if train else None)

    def backward(self, dy, cache, need_dx=True):
        return (dy.reshape(cache) if need_dx else None), {}


class GlobalPool(Layer):
    def forward(self, x, train=False):
        return x.mean(axis=(1, 2)), (x.shape if train else None)

    def backward(self, dy, cache, need_dx=True):
        if not need_dx:
            return None, {}
        n, h, w, c = cache
        dx = np.broadcast_to(dy[:, None, None, :] / (h * w), cache).astype(dy.dtype)
        return dx, {}


class Dense(Layer):
    trainable_params = ("W", "b")

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype):
        limit = np.sqrt(6.0 / n_in)
        self.W = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, train=False):
        return x @ self.W + self.b, (x if train else None)

    def backward(self, dy, cache, need_dx=True):
        x = cache
        grads = {"W": x.T @ dy, "b": dy.sum(axis=0)}
        return (dy @ self.W.T if need_dx else None), grads


class ReLU(Layer):
    def forward(self, x, train=False):
        return np.maximum(x, 0), ((x > 0) if train else None)

    def backward(self, dy, cache, need_dx=True):
        return (dy * cache if need_dx else None), {}


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Sigmoid(Layer):
    def forward(self, x, train=False):
        y = sigmoid(x)
        return y, (y if train else None)

    def backward(self, dy, cache, need_dx=True):
        y = cache
        return (dy * y * (1 - y) if need_dx else None), {}


class Softmax(Layer):
    def forward(self, x, train=False):
        y = softmax(x)
        return y, (y if train else None)

    def backward(self, dy, cache, need_dx=True):
        if not need_dx:
            return None, {}
        y = cache
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True)), {}


class Backbone(Layer):
    """Wraps a frozen external feature extractor; never differentiated."""

    def __init__(self, extractor):
        self.extractor = extractor

    def forward(self, x, train=False):
        return np.asarray(self.extractor(x)), None

    def backward(self, dy, cache, need_dx=True):
        raise RuntimeError("backbone layers are frozen and cannot be differentiated")


def build_layer(spec: LayerSpec, in_shape: tuple[int, ...], rng, dtype, extractor=None) -> Layer:
    k = spec.kind
    if k == "conv2d":
        return Conv2D(spec.kernel[0], spec.kernel[1], in_shape[2], spec.filters, rng, dtype)
    if k == "maxpool":
        return MaxPool(spec.pool)
    if k == "flatten":
        return Flatten()
    if k == "global_pool":
        return GlobalPool()
    if k == "dense":
        return Dense(in_shape[0], spec.units, rng, dtype)
    if k == "activation":
        return {"relu": ReLU, "sigmoid": Sigmoid, "softmax": Softmax}[spec.activation]()
    if k == "backbone":
        if extractor is None:
            raise ValueError("a backbone layer needs a feature extractor")
        return Backbone(extractor)
    raise ValueError(f"unknown layer kind {k!r}")
