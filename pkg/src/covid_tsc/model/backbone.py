"""Frozen feature extractors consumed by transfer-learning heads.

An extractor is any callable mapping an image batch ``(N, H, W, C)`` in
[0, 1] to ``(N, feature_dim)`` features, with ``feature_dim``,
``input_shape`` and ``to_dict()`` attributes. Pretrained networks can be
plugged in through :func:`register_backbone`; only a toy extractor ships.
"""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np

from .._rng import make_rng


class FeatureExtractor(Protocol):
    feature_dim: int
    input_shape: tuple[int, int, int]

    def __call__(self, images: np.ndarray) -> np.ndarray: ...

    def to_dict(self) -> dict: ...


class ToyBackbone:
    """Block-average pooling followed by a fixed random projection and ReLU.

    Deterministic for a given seed; stands in for a pretrained network in
    tests and desk-scale runs.
    """

    name = "toy"

    def __init__(self, feature_dim: int = 512, input_shape=(224, 224, 3), grid: int = 8, seed: int = 0):
        self.feature_dim = int(feature_dim)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.grid = int(grid)
        self.seed = int(seed)
        h, w, c = self.input_shape
        if h < grid or w < grid:
            raise ValueError(f"input {self.input_shape} smaller than pooling grid {grid}")
        d_in = grid * grid * c
        rng = make_rng(seed)
        self._proj = (rng.standard_normal((d_in, self.feature_dim)) / np.sqrt(d_in)).astype(np.float32)
        self._bias = rng.uniform(-0.1, 0.1, self.feature_dim).astype(np.float32)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float32)
        n, h, w, c = x.shape
        g = self.grid
        bh, bw = h // g, w // g
        pooled = x[:, :bh * g, :bw * g, :].reshape(n, g, bh, g, bw, c).mean(axis=(2, 4))
        z = pooled.reshape(n, -1) @ self._proj + self._bias
        return np.maximum(z, 0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "feature_dim": self.feature_dim,
            "input_shape": list(self.input_shape),
            "grid": self.grid,
            "seed": self.seed,
        }


_REGISTRY: dict[str, Callable[..., FeatureExtractor]] = {"toy": ToyBackbone}


def register_backbone(name: str, factory: Callable[..., FeatureExtractor]) -> None:
    _REGISTRY[name] = factory


def get_backbone(name: str, **kwargs) -> FeatureExtractor:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown backbone {name!r}; registered: {sorted(_REGISTRY)}") from None
    return factory(**kwargs)


def backbone_from_dict(d: dict) -> FeatureExtractor:
    d = dict(d)
    name = d.pop("name")
    return get_backbone(name, **d)
