from .backbone import FeatureExtractor, ToyBackbone, get_backbone, register_backbone
from .network import Network
from .spec import (
    LayerSpec,
    ModelSpec,
    activation,
    backbone,
    build_baseline_cnn,
    build_transfer_head,
    conv2d,
    count_parameters,
    dense,
    flatten,
    global_pool,
    layer_parameters,
    layer_shapes,
    maxpool,
)
from .train import (
    HistoryRow,
    LookupModel,
    TrainConfig,
    TrainedModel,
    TrainingHistory,
    fit,
    labels_from_proba,
    load_model,
    predict_proba,
)

__all__ = [
    "FeatureExtractor",
    "HistoryRow",
    "LayerSpec",
    "LookupModel",
    "ModelSpec",
    "Network",
    "ToyBackbone",
    "TrainConfig",
    "TrainedModel",
    "TrainingHistory",
    "activation",
    "backbone",
    "build_baseline_cnn",
    "build_transfer_head",
    "conv2d",
    "count_parameters",
    "dense",
    "fit",
    "flatten",
    "get_backbone",
    "global_pool",
    "labels_from_proba",
    "layer_parameters",
    "layer_shapes",
    "load_model",
    "maxpool",
    "predict_proba",
    "register_backbone",
]
