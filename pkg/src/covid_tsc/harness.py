"""Experiment orchestration: one-shot, stage 1, stage 2 and cascade runs.

Protocol: the holdout test split is reserved first; training and validation
(or k-fold cross-validation) use only the remainder. Every fold model is
scored on the same untouched holdout and the reported accuracy is the mean
over folds.

Seeds: every random step draws from ``derive_seed(config.seed, <step name>)``
(see ``_rng``), so components never share a stream.

Output directory layout::

    config.snapshot        resolved config (JSON)
    history.csv            per-epoch log (history_stage1/2.csv for cascade)
    confusion_<mode>.csv   confusion matrix summed over folds
    report_<mode>.txt/json classification report (pooled + per fold)
    predictions.csv        per-sample predictions on the holdout
    comparison.csv         one-row comparison table (has wall-clock time)
    result.json            summary read back by ``compare``
    model_<stage>[_fold<i>].npz
"""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._rng import derive_seed
from .cascade import CascadeModel, RoutingPolicy, evaluate_cascade, write_predictions_csv
from .dataio import (
    FOUR_CLASS,
    NORMAL,
    DatasetManifest,
    build_stage1_dataset,
    filter_stage2,
    make_folds,
    read_manifest,
    sample_balanced,
    scan_directory,
    split_holdout,
    split_train_val,
    to_stage1,
)
from .errors import ConfigInvalid, InputError, LeakageError, OutputDirLocked, ParseFailure
from .imaging import ImageStore
from .metrics import (
    ClassificationReport,
    ConfusionMatrix,
    classification_report,
    confusion_matrix,
    write_confusion_csv,
)
from .model import (
    HistoryRow,
    TrainConfig,
    TrainingHistory,
    build_baseline_cnn,
    build_transfer_head,
    count_parameters,
    fit,
    labels_from_proba,
)
from .model.backbone import get_backbone

logger = logging.getLogger(__name__)

MODES = ("one_shot", "stage1", "stage2", "cascade")
HISTORY_HEADER = ["fold", "epoch", "loss", "accuracy", "val_loss", "val_accuracy"]
COMPARISON_HEADER = ["method", "dataset", "time_s", "accuracy", "parameters", "trainable_parameters", "source"]
_HEAD = {"one_shot": "multiclass", "stage1": "binary", "stage2": "multiclass"}
_LOSS = {"multiclass": "categorical_cross_entropy", "binary": "binary_cross_entropy"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Every key of the config file, with its default.

    mode               one_shot | stage1 | stage2 | cascade
    data_root          class-per-folder image root (or use ``manifest``)
    manifest           manifest CSV path (alternative to ``data_root``)
    dataset_name       label for comparison tables
    name               method label for comparison tables (default: mode/model)
    n_per_class        balanced per-class sample size; null = use everything
    test_fraction      holdout fraction, reserved first
    val_fraction       validation fraction when k == 1
    stage1_n_per_side  stage-1 samples per side; null = as many as balance allows
    model              baseline | transfer
    backbone           registered feature-extractor id (transfer)
    feature_dim        backbone output width (transfer)
    hidden             dense hidden units of the transfer head
    input_shape        [H, W, C] network input
    conv_filters       baseline conv widths
    dense_units        baseline dense hidden units
    epochs, batch_size, learning_rate   plain minibatch gradient descent
    loss               null = implied by the head; must match it when set
    k                  folds; 1 = single train/val split, >= 2 = cross-validation
    seed               root seed
    output_dir         artifact directory
    routing            hard | soft (cascade)
    threshold          stage-1 disease threshold (cascade)
    save_models        write model files
    """

    mode: str = "one_shot"
    data_root: str | None = None
    manifest: str | None = None
    dataset_name: str = "synthetic"
    name: str | None = None
    n_per_class: int | None = None
    test_fraction: float = 0.2
    val_fraction: float = 0.25
    stage1_n_per_side: int | None = None
    model: str = "baseline"
    backbone: str = "toy"
    feature_dim: int = 512
    hidden: int = 48
    input_shape: tuple[int, int, int] = (64, 64, 1)
    conv_filters: tuple[int, ...] = (32, 64)
    dense_units: int = 128
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    loss: str | None = None
    k: int = 1
    seed: int = 0
    output_dir: str = "runs/experiment"
    routing: str = "hard"
    threshold: float = 0.5
    save_models: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_filters", tuple(int(v) for v in self.conv_filters))
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigInvalid(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.data_root is None) == (self.manifest is None):
            raise ConfigInvalid("set exactly one of data_root and manifest")
        if self.model not in ("baseline", "transfer"):
            raise ConfigInvalid(f"model must be 'baseline' or 'transfer', got {self.model!r}")
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigInvalid("k must be 1 (no cross-validation) or an integer >= 2")
        for key in ("test_fraction", "val_fraction", "threshold"):
            v = getattr(self, key)
            if not 0 < v < 1:
                raise ConfigInvalid(f"{key} must lie in (0, 1), got {v}")
        if self.routing not in ("hard", "soft"):
            raise ConfigInvalid("routing must be 'hard' or 'soft'")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigInvalid("epochs, batch_size and learning_rate must be positive")
        if len(self.input_shape) != 3:
            raise ConfigInvalid("input_shape must be [H, W, C]")
        if self.loss is not None:
            if self.mode == "cascade":
                raise ConfigInvalid("cascade trains two heads; leave loss unset")
            if self.loss != _LOSS[_HEAD[self.mode]]:
                raise ConfigInvalid(
                    f"loss {self.loss!r} does not match the {_HEAD[self.mode]} head of mode {self.mode}"
                )

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        """Load a JSON config; non-None ``overrides`` win over file values."""
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigInvalid(f"{path}: config must be a JSON object")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["conv_filters"] = list(self.conv_filters)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    @property
    def label(self) -> str:
        return self.name or f"{self.mode}-{self.model}"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    histories: dict[str, TrainingHistory]
    reports: list[ClassificationReport]
    confusions: list[ConfusionMatrix]
    duration_s: float
    parameters: int
    trainable_parameters: int
    stage_reports: dict[str, list[ClassificationReport | None]] = field(default_factory=dict)
    output_dir: Path | None = None

    @property
    def fold_accuracies(self) -> list[float]:
        return [r.accuracy for r in self.reports]

    @property
    def accuracy_mean(self) -> float:
        return statistics.fmean(self.fold_accuracies)

    @property
    def accuracy_std(self) -> float:
        accs = self.fold_accuracies
        return statistics.pstdev(accs) if len(accs) > 1 else 0.0

    @property
    def history(self) -> TrainingHistory:
        return next(iter(self.histories.values()))

    def summary(self) -> dict:
        return {
            "name": self.config.label,
            "mode": self.config.mode,
            "dataset": self.config.dataset_name,
            "k": self.config.k,
            "fold_accuracies": self.fold_accuracies,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "duration_s": self.duration_s,
            "parameters": self.parameters,
            "trainable_parameters": self.trainable_parameters,
        }


# ---------------------------------------------------------------- history CSV


def write_history_csv(history: TrainingHistory | Iterable[HistoryRow], path: str | Path) -> Path:
    rows = list(history)
    if not rows:
        raise InputError("cannot write an empty history")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in rows:
            w.writerow([r.fold, r.epoch, f"{r.loss:.6g}", f"{r.accuracy:.6g}",
                        f"{r.val_loss:.6g}", f"{r.val_accuracy:.6g}"])
    return path


def read_history_csv(path: str | Path) -> TrainingHistory:
    try:
        with Path(path).open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseFailure(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != HISTORY_HEADER:
        raise ParseFailure(f"{path}: expected header {','.join(HISTORY_HEADER)}")
    try:
        return TrainingHistory([
            HistoryRow(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4]), float(r[5]))
            for r in rows[1:]
        ])
    except (ValueError, IndexError) as exc:
        raise ParseFailure(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- plumbing


@contextlib.contextmanager
def output_lock(directory: str | Path):
    """Exclusive use of an output directory for the duration of a run."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputDirLocked(
            f"{directory} is in use by another run (remove {lock} if that run is gone)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def load_dataset(config: ExperimentConfig) -> DatasetManifest:
    if config.manifest is not None:
        manifest = read_manifest(config.manifest, FOUR_CLASS)
    else:
        manifest = scan_directory(config.data_root)
    if config.n_per_class is not None:
        manifest = sample_balanced(manifest, config.n_per_class, derive_seed(config.seed, "sample"))
    return manifest


def _stage_data(stage: str, pool: DatasetManifest, holdout: DatasetManifest, config: ExperimentConfig):
    """(train pool, test manifest) for one trainable stage."""
    if stage == "one_shot":
        return pool, holdout
    if stage == "stage1":
        n_side = config.stage1_n_per_side
        if n_side is None:
            counts = pool.counts()
            disease = [v for c, v in counts.items() if c != NORMAL]
            n_side = min(counts[NORMAL], len(disease) * min(disease))
        return build_stage1_dataset(pool, n_side, derive_seed(config.seed, "stage1")), to_stage1(holdout)
    if stage == "stage2":
        return filter_stage2(pool), filter_stage2(holdout)
    raise ValueError(stage)


def build_spec(config: ExperimentConfig, schema, head_mode: str):
    if config.model == "transfer":
        return build_transfer_head(
            config.feature_dim, schema, head_mode, hidden=config.hidden,
            input_shape=config.input_shape, backbone_name=config.backbone,
        )
    return build_baseline_cnn(
        schema, head_mode, config.input_shape, config.conv_filters, config.dense_units
    )


def _folds(stage: str, train_pool: DatasetManifest, config: ExperimentConfig):
    if config.k >= 2:
        plan = make_folds(train_pool, config.k, derive_seed(config.seed, "folds", stage))
        return [plan.split(train_pool, i) for i in range(config.k)]
    tv = split_train_val(train_pool, config.val_fraction, derive_seed(config.seed, "trainval", stage))
    return [(tv.train, tv.held_out)]


def _check_leakage(holdout_ids: set[str], *manifests: DatasetManifest) -> None:
    for m in manifests:
        overlap = holdout_ids.intersection(m.ids)
        if overlap:
            raise LeakageError(f"{len(overlap)} holdout samples leaked into training data")


def _write_single_predictions(path: Path, test: DatasetManifest, proba, labels, fold: int | None, append: bool):
    classes = list(test.schema.classes)
    if proba.ndim == 1:
        pos = "disease" if "disease" in classes else classes[-1]
        cols = {pos: proba, **{c: 1.0 - proba for c in classes if c != pos}}
    else:
        order = sorted(classes)
        cols = {c: proba[:, order.index(c)] for c in classes}
    header = (["fold"] if fold is not None else []) + ["id", "true_label", "pred_label"] + [f"p_{c}" for c in classes]
    mode = "a" if append else "w"
    with path.open(mode, encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(header)
        for i, s in enumerate(test):
            lead = [fold] if fold is not None else []
            w.writerow(lead + [s.id, s.label, labels[i]] + [f"{float(cols[c][i]):.6g}" for c in classes])


def _write_reports(path: Path, pooled: ClassificationReport, per_fold: Sequence[ClassificationReport | None]) -> None:
    text = pooled.render()
    doc: dict = {"pooled": pooled.to_dict()}
    if len(per_fold) > 1:
        text = f"pooled over {len(per_fold)} folds\n\n" + text
        for i, r in enumerate(per_fold):
            text += f"\nfold {i}\n\n" + (r.render() if r is not None else "(no samples)\n")
        doc["folds"] = [r.to_dict() if r is not None else None for r in per_fold]
    path.write_text(text, encoding="utf-8")
    path.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _pooled(cms: Sequence[ConfusionMatrix | None]) -> ConfusionMatrix | None:
    present = [c for c in cms if c is not None]
    if not present:
        return None
    total = present[0]
    for c in present[1:]:
        total = total + c
    return total


# ---------------------------------------------------------------- runs


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Sample, split, train and evaluate one configuration; write all artifacts."""
    out = Path(config.output_dir)
    with output_lock(out):
        t0 = time.monotonic()
        manifest = load_dataset(config)
        split = split_holdout(manifest, config.test_fraction, derive_seed(config.seed, "holdout"))
        pool, holdout = split.train, split.held_out
        holdout_ids = set(holdout.ids)
        store = ImageStore(config.input_shape)
        stages = ["stage1", "stage2"] if config.mode == "cascade" else [config.mode]

        stage_data = {s: _stage_data(s, pool, holdout, config) for s in stages}
        stage_folds = {s: _folds(s, stage_data[s][0], config) for s in stages}
        n_folds = len(next(iter(stage_folds.values())))
        cv = config.k >= 2

        histories = {s: TrainingHistory() for s in stages}
        reports: list[ClassificationReport] = []
        confusions: list[ConfusionMatrix] = []
        stage_reports: dict[str, list] = {}
        stage_cms: dict[str, list] = {}
        total_params = trainable_params = 0
        pred_path = out / "predictions.csv"

        for fold in range(n_folds):
            models = {}
            for stage in stages:
                train_m, val_m = stage_folds[stage][fold]
                _check_leakage(holdout_ids, train_m, val_m)
                head = "multiclass" if stage in ("one_shot", "stage2") else "binary"
                spec = build_spec(config, train_m.schema, head)
                tcfg = TrainConfig(
                    epochs=config.epochs, batch_size=config.batch_size,
                    learning_rate=config.learning_rate, loss=_LOSS[head],
                    seed=derive_seed(config.seed, "fit", stage, fold),
                )
                extractor = None
                if config.model == "transfer":
                    extractor = get_backbone(config.backbone, feature_dim=config.feature_dim,
                                             input_shape=config.input_shape)
                logger.info("training %s fold %d on %d samples", stage, fold, len(train_m))
                model, hist = fit(spec, train_m, val_m, tcfg, store=store, extractor=extractor,
                                  fold=fold)
                histories[stage].extend(hist)
                models[stage] = model
                if fold == 0:
                    tot, tr = count_parameters(spec)
                    total_params += tot
                    trainable_params += tr
                if config.save_models:
                    suffix = f"_fold{fold}" if cv else ""
                    model.save(out / f"model_{stage}{suffix}.npz")

            if config.mode == "cascade":
                policy = RoutingPolicy(config.routing, config.threshold)
                ev = evaluate_cascade(CascadeModel(models["stage1"], models["stage2"], policy), holdout, store)
                reports.append(ev.report)
                confusions.append(ev.confusion)
                for key, cm, rep in (
                    ("stage1", ev.stage1_confusion, ev.stage1_report),
                    ("stage2", ev.stage2_oracle_confusion, ev.stage2_oracle_report),
                    ("stage2_pipeline", ev.stage2_pipeline_confusion, ev.stage2_pipeline_report),
                ):
                    stage_reports.setdefault(key, []).append(rep)
                    stage_cms.setdefault(key, []).append(cm)
                write_predictions_csv(ev.predictions, ev.true_labels, pred_path,
                                      fold=fold if cv else None, append=fold > 0)
            else:
                stage = stages[0]
                test_m = stage_data[stage][1]
                model = models[stage]
                proba = model.predict_proba(test_m, store=store)
                labels = labels_from_proba(proba, model)
                cm = confusion_matrix(test_m.labels, labels, test_m.schema)
                confusions.append(cm)
                reports.append(classification_report(cm))
                _write_single_predictions(pred_path, test_m, proba, labels, fold if cv else None, fold > 0)

        duration = time.monotonic() - t0
        result = ExperimentResult(
            config=config, histories=histories, reports=reports, confusions=confusions,
            duration_s=duration, parameters=total_params, trainable_parameters=trainable_params,
            stage_reports=stage_reports, output_dir=out,
        )
        _write_artifacts(result, stage_cms)
        return result


def run_cross_validation(config: ExperimentConfig) -> ExperimentResult:
    """k-fold run; each fold model is tested on the shared holdout."""
    if config.k < 2:
        raise ConfigInvalid("cross-validation needs k >= 2")
    return run_experiment(config)


def _write_artifacts(result: ExperimentResult, stage_cms: dict[str, list]) -> None:
    out = result.output_dir
    config = result.config
    (out / "config.snapshot").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if config.mode == "cascade":
        for stage, hist in result.histories.items():
            write_history_csv(hist, out / f"history_{stage}.csv")
    else:
        write_history_csv(result.history, out / "history.csv")

    pooled = _pooled(result.confusions)
    write_confusion_csv(pooled, out / f"confusion_{config.mode}.csv")
    _write_reports(out / f"report_{config.mode}.txt", classification_report(pooled), result.reports)
    for key, cms in stage_cms.items():
        cm = _pooled(cms)
        if cm is None or cm.total == 0:
            continue
        write_confusion_csv(cm, out / f"confusion_{key}.csv")
        _write_reports(out / f"report_{key}.txt", classification_report(cm), result.stage_reports[key])

    comparison_table([result]).to_csv(out / "comparison.csv")
    (out / "result.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


# ---------------------------------------------------------------- comparison


@dataclass
class ComparisonTable:
    rows: list[dict]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COMPARISON_HEADER, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in COMPARISON_HEADER})
        return path

    def render(self) -> str:
        cols = list(COMPARISON_HEADER)
        cells = [[str(r.get(c, "")) for c in cols] for r in self.rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(cols)]
        line = lambda vals: " | ".join(v.ljust(w) for v, w in zip(vals, widths))  # noqa: E731
        out = [line(cols), "-+-".join("-" * w for w in widths)]
        out += [line(row) for row in cells]
        return "\n".join(out) + "\n"


def _result_row(summary: dict) -> dict:
    return {
        "method": summary["name"],
        "dataset": summary["dataset"],
        "time_s": f"{summary['duration_s']:.2f}",
        "accuracy": f"{100 * summary['accuracy_mean']:.1f}",
        "parameters": summary["parameters"],
        "trainable_parameters": summary["trainable_parameters"],
        "source": "measured",
    }


def comparison_table(results: Sequence[ExperimentResult | dict], annotations: Sequence[dict] = ()) -> ComparisonTable:
    """Method / dataset / time / accuracy (%) / parameter rows.

    ``results`` are :class:`ExperimentResult` objects or their ``summary()``
    dicts (as stored in ``result.json``). ``annotations`` are literal rows
    appended as-is with ``source`` defaulting to "reference".
    """
    rows = [_result_row(r.summary() if isinstance(r, ExperimentResult) else r) for r in results]
    for a in annotations:
        row = {k: a.get(k, "") for k in COMPARISON_HEADER}
        row["source"] = a.get("source", "reference")
        rows.append(row)
    return ComparisonTable(rows)


def load_result_summary(directory: str | Path) -> dict:
    path = Path(directory) / "result.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ParseFailure(f"cannot read {path}: {exc}") from exc
