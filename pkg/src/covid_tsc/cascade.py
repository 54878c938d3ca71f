"""Two-stage cascade: normal-vs-disease routing, then disease typing.

Stage 1 is a binary model reporting P(disease); stage 2 a 3-class disease
model. Two routing modes:

* ``hard`` (default): ``p_disease <= threshold`` yields "normal" and stage 2
  is not consulted; otherwise the label is stage 2's argmax.
* ``soft``: stage 2 is consulted for every sample and the label is the
  argmax of the composed 4-class distribution.

The composed distribution is ``P(normal) = 1 - p``, ``P(c) = p * p2(c)``.
For hard-routed normals, where stage 2 is skipped, ``p2`` is taken as
uniform over the disease classes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import (
    DISEASE,
    FOUR_CLASS,
    NORMAL,
    STAGE1,
    STAGE2,
    DatasetManifest,
    LabelSchema,
    filter_stage2,
    to_stage1,
)
from .errors import EmptyTestSet, InvalidDistribution, InvalidSchema, SchemaMismatch, UnfittedStage
from .metrics import ClassificationReport, ConfusionMatrix, classification_report, confusion_matrix

OUTPUT_CLASSES = FOUR_CLASS.classes  # normal, covid, opacity, pneumonia
PREDICTION_HEADER = ["id", "true_label", "pred_label"] + [f"p_{c}" for c in OUTPUT_CLASSES]


@dataclass(frozen=True)
class RoutingPolicy:
    mode: str = "hard"
    disease_threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"routing mode must be 'hard' or 'soft', got {self.mode!r}")
        if not 0 < self.disease_threshold < 1:
            raise ValueError("disease_threshold must lie in (0, 1)")


def compose_probabilities(p_disease: float, p2: Sequence[float]) -> np.ndarray:
    """4-class distribution (normal, covid, opacity, pneumonia)."""
    p2 = np.asarray(p2, dtype=np.float64)
    if not (np.isfinite(p_disease) and 0.0 <= p_disease <= 1.0):
        raise InvalidDistribution(f"p_disease must lie in [0, 1], got {p_disease}")
    if p2.shape != (3,) or (p2 < 0).any() or abs(p2.sum() - 1.0) > 1e-6:
        raise InvalidDistribution(f"stage-2 distribution must be 3 non-negative values summing to 1: {p2}")
    return np.concatenate([[1.0 - p_disease], p_disease * p2])


def compose_batch(p_disease: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Vectorised :func:`compose_probabilities`; p2 rows in covid/opacity/pneumonia order."""
    p_disease = np.asarray(p_disease, dtype=np.float64).reshape(-1)
    p2 = np.asarray(p2, dtype=np.float64).reshape(-1, 3)
    if ((p_disease < 0) | (p_disease > 1) | ~np.isfinite(p_disease)).any():
        raise InvalidDistribution("p_disease outside [0, 1]")
    if (p2 < 0).any() or (np.abs(p2.sum(axis=1) - 1.0) > 1e-6).any():
        raise InvalidDistribution("stage-2 rows must be non-negative and sum to 1")
    return np.column_stack([1.0 - p_disease, p_disease[:, None] * p2])


def _stage_columns(model) -> list[int]:
    """Column indices of covid/opacity/pneumonia in the stage-2 model output."""
    return [list(model.classes).index(c) for c in STAGE2.classes]


@dataclass(frozen=True)
class CascadeModel:
    stage1: object
    stage2: object
    policy: RoutingPolicy = field(default_factory=RoutingPolicy)

    def __post_init__(self):
        for name, stage in (("stage1", self.stage1), ("stage2", self.stage2)):
            if stage is None or not hasattr(stage, "predict_proba"):
                raise UnfittedStage(f"{name} is not a fitted model")
        if set(self.stage1.schema.classes) != set(STAGE1.classes) or self.stage1.head_mode != "binary":
            raise SchemaMismatch("stage1 must be a binary normal/disease model")
        if set(self.stage2.schema.classes) != set(STAGE2.classes):
            raise SchemaMismatch("stage2 must be a covid/opacity/pneumonia model")
        if getattr(self.stage1, "positive", DISEASE) != DISEASE:
            raise SchemaMismatch("stage1 must report P(disease)")

    @property
    def schema(self) -> LabelSchema:
        return FOUR_CLASS


@dataclass(frozen=True)
class CascadePrediction:
    ids: tuple[str, ...]
    labels: tuple[str, ...]
    proba: np.ndarray  # (N, 4), OUTPUT_CLASSES order
    p_disease: np.ndarray
    routed: np.ndarray  # True where the sample went to stage 2 (hard) / p > threshold

    def __len__(self) -> int:
        return len(self.ids)


def _stage2_proba(stage2, manifest: DatasetManifest, store) -> np.ndarray:
    if len(manifest) == 0:
        return np.zeros((0, 3))
    # stage-2 schema for the query; lookup models only read ids
    query = DatasetManifest(STAGE2, tuple(replace(s, label=STAGE2.classes[0]) for s in manifest))
    proba = np.asarray(stage2.predict_proba(query, store=store), dtype=np.float64)
    return proba[:, _stage_columns(stage2)]


def _as_query(samples: DatasetManifest) -> DatasetManifest:
    """Stage-1 view of ``samples`` (labels are placeholders for prediction)."""
    return DatasetManifest(STAGE1, tuple(replace(s, label=NORMAL) for s in samples))


def cascade_predict(cascade: CascadeModel, samples: DatasetManifest, store=None) -> CascadePrediction:
    n = len(samples)
    p_dis = np.asarray(cascade.stage1.predict_proba(_as_query(samples), store=store), dtype=np.float64).reshape(-1)
    if p_dis.shape != (n,):
        raise SchemaMismatch("stage1 must return one probability per sample")
    routed = p_dis > cascade.policy.disease_threshold
    p2 = np.full((n, 3), 1.0 / 3.0)
    if cascade.policy.mode == "soft":
        p2 = _stage2_proba(cascade.stage2, samples, store)
    elif routed.any():
        sub = DatasetManifest(samples.schema, tuple(s for s, r in zip(samples, routed) if r))
        p2[routed] = _stage2_proba(cascade.stage2, sub, store)
    # renormalise to absorb float32 rounding from the networks
    p2 = p2 / p2.sum(axis=1, keepdims=True)
    proba = compose_batch(p_dis, p2)
    if cascade.policy.mode == "soft":
        idx = proba.argmax(axis=1)
        labels = [OUTPUT_CLASSES[i] for i in idx]
    else:
        labels = [
            STAGE2.classes[int(p2[i].argmax())] if routed[i] else NORMAL for i in range(n)
        ]
    return CascadePrediction(tuple(samples.ids), tuple(labels), proba, p_dis, routed)


@dataclass(frozen=True)
class CascadeEvaluation:
    confusion: ConfusionMatrix
    report: ClassificationReport
    stage1_confusion: ConfusionMatrix
    stage1_report: ClassificationReport
    # stage 2 on every truly diseased sample
    stage2_oracle_confusion: ConfusionMatrix | None
    stage2_oracle_report: ClassificationReport | None
    # stage 2 on truly diseased samples that stage 1 actually routed onward
    stage2_pipeline_confusion: ConfusionMatrix | None
    stage2_pipeline_report: ClassificationReport | None
    predictions: CascadePrediction
    true_labels: tuple[str, ...]


def _maybe_report(cm: ConfusionMatrix) -> ClassificationReport | None:
    return classification_report(cm) if cm.total > 0 else None


def evaluate_cascade(cascade: CascadeModel, test: DatasetManifest, store=None) -> CascadeEvaluation:
    """End-to-end 4-class evaluation plus stage-wise reports."""
    if test.schema.stage != FOUR_CLASS.stage:
        raise InvalidSchema("cascade evaluation needs a 4-class test manifest")
    if len(test) == 0:
        raise EmptyTestSet("test manifest is empty")
    pred = cascade_predict(cascade, test, store)
    truth = test.labels
    cm = confusion_matrix(truth, list(pred.labels), FOUR_CLASS)

    s1_truth = to_stage1(test).labels
    s1_pred = [DISEASE if r else NORMAL for r in pred.routed]
    s1_cm = confusion_matrix(s1_truth, s1_pred, STAGE1)

    diseased = filter_stage2(test)
    if len(diseased):
        p2 = _stage2_proba(cascade.stage2, diseased, store)
        s2_pred = [STAGE2.classes[int(i)] for i in p2.argmax(axis=1)]
    else:
        s2_pred = []
    oracle_cm = confusion_matrix(diseased.labels, s2_pred, STAGE2)
    routed_ids = {i for i, r in zip(pred.ids, pred.routed) if r}
    keep = [k for k, s in enumerate(diseased) if s.id in routed_ids]
    pipe_cm = confusion_matrix(
        [diseased.samples[k].label for k in keep], [s2_pred[k] for k in keep], STAGE2
    )
    return CascadeEvaluation(
        confusion=cm,
        report=classification_report(cm),
        stage1_confusion=s1_cm,
        stage1_report=classification_report(s1_cm),
        stage2_oracle_confusion=oracle_cm,
        stage2_oracle_report=_maybe_report(oracle_cm),
        stage2_pipeline_confusion=pipe_cm,
        stage2_pipeline_report=_maybe_report(pipe_cm),
        predictions=pred,
        true_labels=tuple(truth),
    )


def write_predictions_csv(
    pred: CascadePrediction,
    true_labels: Sequence[str],
    path: str | Path,
    fold: int | None = None,
    append: bool = False,
) -> Path:
    """Header ``id,true_label,pred_label,p_normal,p_covid,p_opacity,p_pneumonia``.

    With ``fold`` set, a leading ``fold`` column is added (cross-validation runs).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (["fold"] if fold is not None else []) + PREDICTION_HEADER
    mode = "a" if append and path.exists() else "w"
    with path.open(mode, encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(header)
        for sid, t, p, row in zip(pred.ids, true_labels, pred.labels, pred.proba):
            lead = [fold] if fold is not None else []
            w.writerow(lead + [sid, t, p] + [f"{v:.6g}" for v in row])
    return path


def analytic_cascade_confusion(
    stage1_detected: dict[str, int],
    class_totals: dict[str, int],
    stage2_rows: dict[str, dict[str, int]],
    normal_to_disease: dict[str, int] | None = None,
) -> np.ndarray:
    """Closed-form end-to-end confusion for deterministic stage oracles.

    ``class_totals[c]`` samples of class ``c``; stage 1 flags
    ``stage1_detected[c]`` of them as disease (for "normal", the false
    alarms). Detected disease samples of class ``c`` are typed by stage 2
    according to ``stage2_rows[c]`` (counts over the detected ones); missed
    ones land in "normal". False alarms on normals are typed per
    ``normal_to_disease``.
    """
    classes = list(OUTPUT_CLASSES)
    k = len(classes)
    out = np.zeros((k, k), dtype=np.int64)
    n_idx = classes.index(NORMAL)
    for c in classes:
        i = classes.index(c)
        det = stage1_detected.get(c, 0)
        out[i, n_idx] += class_totals[c] - det
        typed = (normal_to_disease or {}) if c == NORMAL else stage2_rows[c]
        if sum(typed.values()) != det:
            raise ValueError(f"stage-2 counts for {c!r} must sum to its detections ({det})")
        for d, v in typed.items():
            out[i, classes.index(d)] += v
    return out
