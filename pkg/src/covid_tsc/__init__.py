"""One-shot and two-stage cascade classification of chest X-ray style images."""

from .cascade import CascadeModel, RoutingPolicy, cascade_predict, compose_probabilities, evaluate_cascade
from .dataio import (
    FOUR_CLASS,
    STAGE1,
    STAGE2,
    DatasetManifest,
    FoldPlan,
    LabelSchema,
    Sample,
    SplitResult,
    build_stage1_dataset,
    encode_labels,
    filter_stage2,
    make_folds,
    read_manifest,
    sample_balanced,
    scan_directory,
    split_holdout,
    split_train_val,
    write_manifest,
)
from .harness import ExperimentConfig, ExperimentResult, comparison_table, run_cross_validation, run_experiment
from .metrics import (
    ClassificationReport,
    ConfusionMatrix,
    MetricRow,
    accuracy,
    classification_report,
    confusion_matrix,
    precision_recall_f1_support,
)
from .model import (
    ModelSpec,
    TrainConfig,
    TrainedModel,
    build_baseline_cnn,
    build_transfer_head,
    count_parameters,
    fit,
    predict_proba,
)

__version__ = "0.1.0"
