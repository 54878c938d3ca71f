"""Executable network built from a :class:`ModelSpec`."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidShape
from .layers import Backbone, Layer, build_layer, sigmoid, softmax
from .spec import ModelSpec, layer_shapes


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean categorical cross-entropy of integer ``targets``; returns (loss, dlogits)."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(n), targets].mean()
    d = np.exp(logp)
    d[np.arange(n), targets] -= 1
    return float(loss), d / n


def sigmoid_binary_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean binary cross-entropy on logits of shape (N, 1); returns (loss, dlogits)."""
    n = logits.shape[0]
    z = logits[:, 0]
    y = targets.astype(logits.dtype)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    d = (sigmoid(z) - y) / n
    return float(loss.mean()), d[:, None].astype(logits.dtype)


class Network:
    """Layers of a spec with their weights.

    The trailing softmax/sigmoid is split off as the head activation so the
    loss can be computed from logits.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32, extractor=None):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        shapes = layer_shapes(spec)
        for i, l in enumerate(spec.layers):
            if l.kind == "backbone" and i >= spec.frozen_prefix:
                raise InvalidShape("backbone layers must sit inside the frozen prefix")
        if extractor is not None and extractor.feature_dim != next(
            (l.units for l in spec.layers if l.kind == "backbone"), extractor.feature_dim
        ):
            raise InvalidShape("extractor width does not match the backbone layer")
        rng = np.random.Generator(np.random.PCG64(seed))
        in_shapes = [spec.input_shape] + shapes[:-1]
        self.layers: list[Layer] = [
            build_layer(l, s, rng, self.dtype, extractor) for l, s in zip(spec.layers, in_shapes)
        ]
        last = spec.layers[-1] if spec.layers else None
        if last is not None and last.kind == "activation" and last.activation in ("softmax", "sigmoid"):
            self.head = last.activation
            self.body = self.layers[:-1]
        else:
            self.head = None
            self.body = self.layers
        self.frozen_prefix = spec.frozen_prefix

    # ------------------------------------------------------------ weights

    def parameters(self) -> list[tuple[int, str, np.ndarray]]:
        """(layer index, name, array) for every weight array."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out.append((i, name, arr))
        return out

    def trainable(self) -> list[tuple[int, str, np.ndarray]]:
        return [p for p in self.parameters() if p[0] >= self.frozen_prefix]

    def get_weights(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": arr for i, name, arr in self.parameters()}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        for i, name, arr in self.parameters():
            arr[...] = weights[f"{i}.{name}"]

    # ------------------------------------------------------------ passes

    def forward_range(self, x, start: int, stop: int, train: bool = False):
        caches = []
        for layer in self.body[start:stop]:
            x, cache = layer.forward(x, train=train)
            caches.append(cache)
        return x, caches

    def prefix(self, x) -> np.ndarray:
        """Output of the frozen prefix (inputs cast to the network dtype)."""
        x = np.asarray(x, dtype=self.dtype)
        h, _ = self.forward_range(x, 0, min(self.frozen_prefix, len(self.body)))
        return np.asarray(h, dtype=self.dtype)

    def logits(self, x) -> np.ndarray:
        h = self.prefix(x)
        out, _ = self.forward_range(h, min(self.frozen_prefix, len(self.body)), len(self.body))
        return out

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Probabilities: (N, K) for softmax heads, (N,) for sigmoid heads."""
        x = np.asarray(x)
        parts = [self.logits(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        z = np.concatenate(parts) if parts else np.zeros((0, self.spec.output_units or 1), self.dtype)
        if self.head == "softmax":
            return softmax(z.astype(np.float64))
        if self.head == "sigmoid":
            return sigmoid(z.astype(np.float64))[:, 0]
        return z

    def loss_and_grads(self, h, targets, from_prefix: bool = True):
        """Loss on a batch and gradients of the trainable parameters.

        ``h`` is the frozen-prefix output when ``from_prefix`` (the default),
        otherwise raw network input. Returns (loss, logits, {(layer, name): grad}).
        """
        start = min(self.frozen_prefix, len(self.body))
        if not from_prefix:
            h = self.prefix(h)
        z, caches = self.forward_range(h, start, len(self.body), train=True)
        if self.head == "softmax":
            loss, dz = softmax_cross_entropy(z, targets)
        elif self.head == "sigmoid":
            loss, dz = sigmoid_binary_cross_entropy(z, targets)
        else:
            raise InvalidShape("network has no softmax/sigmoid head to train against")
        grads = {}
        d = dz
        for offset in range(len(self.body) - 1, start - 1, -1):
            layer = self.body[offset]
            need_dx = offset > start
            d, g = layer.backward(d, caches[offset - start], need_dx=need_dx)
            for name, arr in g.items():
                grads[(offset, name)] = arr
        return loss, z, grads
