"""Declarative model specifications and exact parameter accounting.

Shapes are tuples: ``(H, W, C)`` for feature maps, ``(D,)`` for vectors.
Convolutions are stride-1 "valid"; pooling is non-overlapping with floor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

from ..dataio import LabelSchema
from ..errors import InvalidShape, ShapeMismatch

LAYER_KINDS = ("conv2d", "maxpool", "flatten", "global_pool", "dense", "activation", "backbone")
ACTIVATIONS = ("relu", "softmax", "sigmoid")
HEAD_MODES = ("multiclass", "binary")


@dataclass(frozen=True)
class LayerSpec:
    """One layer. Only the size fields relevant to ``kind`` are set.

    ``backbone`` is a placeholder for an external frozen feature extractor:
    ``units`` is its output width and ``params`` its (declared) weight count.
    """

    kind: str
    filters: int | None = None
    kernel: tuple[int, int] | None = None
    pool: int | None = None
    units: int | None = None
    activation: str | None = None
    params: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(self.kernel))
        if self.kind not in LAYER_KINDS:
            raise InvalidShape(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if not self.filters or self.filters <= 0 or not self.kernel or min(self.kernel) <= 0:
                raise InvalidShape(f"conv2d needs positive filters and kernel: {self}")
        elif self.kind == "maxpool":
            if not self.pool or self.pool <= 0:
                raise InvalidShape("maxpool needs a positive pool size")
        elif self.kind in ("dense", "backbone"):
            if not self.units or self.units <= 0:
                raise InvalidShape(f"{self.kind} needs positive units")
        elif self.kind == "activation":
            if self.activation not in ACTIVATIONS:
                raise InvalidShape(f"activation must be one of {ACTIVATIONS}")
        if self.params < 0:
            raise InvalidShape("params must be >= 0")


def conv2d(filters: int, kernel: int | tuple[int, int] = 3) -> LayerSpec:
    k = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
    return LayerSpec("conv2d", filters=filters, kernel=k)


def maxpool(size: int = 2) -> LayerSpec:
    return LayerSpec("maxpool", pool=size)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def global_pool() -> LayerSpec:
    return LayerSpec("global_pool")


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


def activation(name: str) -> LayerSpec:
    return LayerSpec("activation", activation=name)


def backbone(units: int, params: int = 0, name: str = "toy") -> LayerSpec:
    return LayerSpec("backbone", units=units, params=params, name=name)


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...] = ()
    head_mode: str = "multiclass"
    frozen_prefix: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.head_mode not in HEAD_MODES:
            raise InvalidShape(f"head_mode must be one of {HEAD_MODES}")
        if not 0 <= self.frozen_prefix <= len(self.layers):
            raise InvalidShape("frozen_prefix out of range")
        if any(v <= 0 for v in self.input_shape):
            raise InvalidShape(f"input shape must be positive: {self.input_shape}")

    @property
    def output_units(self) -> int | None:
        dense_layers = [l for l in self.layers if l.kind == "dense"]
        return dense_layers[-1].units if dense_layers else None

    def check_head(self, n_classes: int | None = None) -> None:
        """Raise unless the spec ends in dense(K)+softmax or dense(1)+sigmoid."""
        if len(self.layers) < 2:
            raise InvalidShape("spec has no output head")
        last, act = self.layers[-2], self.layers[-1]
        want_act = "softmax" if self.head_mode == "multiclass" else "sigmoid"
        if last.kind != "dense" or act.kind != "activation" or act.activation != want_act:
            raise InvalidShape(f"{self.head_mode} head must end in dense + {want_act}")
        if self.head_mode == "binary" and last.units != 1:
            raise InvalidShape("binary head must have a single output unit")
        if self.head_mode == "multiclass" and n_classes is not None and last.units != n_classes:
            raise InvalidShape(f"head has {last.units} outputs for {n_classes} classes")
        layer_shapes(self)

    def to_dict(self) -> dict:
        layers = []
        for l in self.layers:
            d = {k: v for k, v in asdict(l).items() if v is not None and not (k == "params" and v == 0)}
            if "kernel" in d:
                d["kernel"] = list(d["kernel"])
            layers.append(d)
        return {
            "input_shape": list(self.input_shape),
            "layers": layers,
            "head_mode": self.head_mode,
            "frozen_prefix": self.frozen_prefix,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            layers = tuple(LayerSpec(**l) for l in d["layers"])
            return cls(tuple(d["input_shape"]), layers, d.get("head_mode", "multiclass"),
                       int(d.get("frozen_prefix", 0)))
        except (KeyError, TypeError) as exc:
            raise InvalidShape(f"malformed model spec: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


def _layer_output(layer: LayerSpec, shape: tuple[int, ...], index: int) -> tuple[tuple[int, ...], int]:
    """(output shape, parameter count) of ``layer`` fed with ``shape``."""
    k = layer.kind
    if k == "conv2d":
        if len(shape) != 3:
            raise ShapeMismatch(f"layer {index}: conv2d needs (H, W, C) input, got {shape}")
        h, w, c = shape
        kh, kw = layer.kernel
        if h < kh or w < kw:
            raise ShapeMismatch(f"layer {index}: kernel {layer.kernel} larger than input {shape}")
        return (h - kh + 1, w - kw + 1, layer.filters), (kh * kw * c + 1) * layer.filters
    if k == "maxpool":
        if len(shape) != 3:
            raise ShapeMismatch(f"layer {index}: maxpool needs (H, W, C) input, got {shape}")
        h, w, c = shape
        p = layer.pool
        if h < p or w < p:
            raise ShapeMismatch(f"layer {index}: pool {p} larger than input {shape}")
        return (h // p, w // p, c), 0
    if k == "flatten":
        n = 1
        for v in shape:
            n *= v
        return (n,), 0
    if k == "global_pool":
        if len(shape) != 3:
            raise ShapeMismatch(f"layer {index}: global_pool needs (H, W, C) input, got {shape}")
        return (shape[2],), 0
    if k == "dense":
        if len(shape) != 1:
            raise ShapeMismatch(f"layer {index}: dense needs a vector input, got {shape}")
        return (layer.units,), (shape[0] + 1) * layer.units
    if k == "backbone":
        return (layer.units,), layer.params
    return shape, 0  # activation


def layer_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Output shape after each layer."""
    shapes = []
    shape = spec.input_shape
    for i, layer in enumerate(spec.layers):
        shape, _ = _layer_output(layer, shape, i)
        shapes.append(shape)
    return shapes


def layer_parameters(spec: ModelSpec) -> list[int]:
    counts = []
    shape = spec.input_shape
    for i, layer in enumerate(spec.layers):
        shape, n = _layer_output(layer, shape, i)
        counts.append(n)
    return counts


def count_parameters(spec: ModelSpec) -> tuple[int, int]:
    """(total, trainable). Layers in the frozen prefix are not trainable."""
    counts = layer_parameters(spec)
    total = sum(counts)
    trainable = sum(counts[spec.frozen_prefix:])
    return total, trainable


def _head(schema: LabelSchema, head_mode: str) -> list[LayerSpec]:
    if head_mode == "multiclass":
        return [dense(len(schema)), activation("softmax")]
    if head_mode == "binary":
        if len(schema) != 2:
            raise InvalidShape("binary head needs a 2-class schema")
        return [dense(1), activation("sigmoid")]
    raise InvalidShape(f"unknown head mode {head_mode!r}")


def build_baseline_cnn(
    schema: LabelSchema,
    head_mode: str = "multiclass",
    input_shape: Sequence[int] = (64, 64, 1),
    conv_filters: Sequence[int] = (32, 64),
    dense_units: int = 128,
    kernel: int = 3,
) -> ModelSpec:
    """Two conv+relu+maxpool blocks, flatten, dense hidden layer, output head."""
    shape = tuple(int(v) for v in input_shape)
    if len(shape) != 3 or shape[0] < 32 or shape[1] < 32 or shape[2] < 1:
        raise InvalidShape(f"input shape must be (H, W, C) with H, W >= 32, got {shape}")
    layers: list[LayerSpec] = []
    for f in conv_filters:
        layers += [conv2d(f, kernel), activation("relu"), maxpool(2)]
    layers += [flatten(), dense(dense_units), activation("relu")]
    layers += _head(schema, head_mode)
    spec = ModelSpec(shape, tuple(layers), head_mode, 0)
    layer_shapes(spec)
    return spec


def build_transfer_head(
    feature_dim: int,
    schema: LabelSchema,
    head_mode: str = "multiclass",
    hidden: int = 48,
    input_shape: Sequence[int] = (224, 224, 3),
    backbone_name: str = "toy",
    backbone_params: int = 0,
) -> ModelSpec:
    """Frozen backbone placeholder followed by dense(hidden)+relu and the head.

    With 512 features and 48 hidden units the trainable part has 24,820
    parameters for four classes and 24,673 for a binary head.
    """
    if not isinstance(feature_dim, int) or feature_dim <= 0:
        raise InvalidShape(f"feature_dim must be a positive integer, got {feature_dim!r}")
    if hidden <= 0:
        raise InvalidShape("hidden must be positive")
    layers = [backbone(feature_dim, backbone_params, backbone_name), dense(hidden), activation("relu")]
    layers += _head(schema, head_mode)
    return ModelSpec(tuple(input_shape), tuple(layers), head_mode, frozen_prefix=1)
