"""Confusion matrices and classification reports.

Rows of a confusion matrix are true classes, columns predicted classes, both
in schema order. Ratios whose denominator is zero are reported as 0 and the
(class, metric) pair is recorded in ``ClassificationReport.zero_division``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import LabelSchema
from .errors import EmptyMatrix, LengthMismatch, NonSquareMatrix, ParseFailure, UnknownLabel


@dataclass(frozen=True)
class ConfusionMatrix:
    schema: LabelSchema
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.schema)
        if counts.shape != (k, k):
            raise NonSquareMatrix(f"expected a {k}x{k} matrix, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def classes(self) -> tuple[str, ...]:
        return self.schema.classes

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConfusionMatrix)
            and self.schema == other.schema
            and np.array_equal(self.counts, other.counts)
        )

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.schema != other.schema:
            raise ValueError("cannot add confusion matrices with different schemas")
        return ConfusionMatrix(self.schema, self.counts + other.counts)

    def __getitem__(self, key: tuple[str, str]) -> int:
        t, p = key
        return int(self.counts[self.classes.index(t), self.classes.index(p)])

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


@dataclass(frozen=True)
class MetricRow:
    name: str
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self) -> dict:
        return {
            "class": self.name,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
        }


@dataclass(frozen=True)
class ClassificationReport:
    schema: LabelSchema
    rows: tuple[MetricRow, ...]
    accuracy: float
    macro: MetricRow
    weighted: MetricRow
    total: int
    zero_division: tuple[tuple[str, str], ...] = field(default=())

    def row(self, name: str) -> MetricRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def micro(self) -> MetricRow:
        # single-label: micro precision = micro recall = accuracy
        return MetricRow("micro avg", self.accuracy, self.accuracy, self.accuracy, self.total)

    def render(self, digits: int = 2) -> str:
        """Plain-text table in the familiar sklearn layout."""
        names = [r.name for r in self.rows] + ["weighted avg"]
        width = max(len(n) for n in names + ["accuracy"])
        head = f"{'':>{width}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>9}"
        fmt = lambda r: (  # noqa: E731
            f"{r.name:>{width}} {r.precision:>9.{digits}f} {r.recall:>9.{digits}f} "
            f"{r.f1:>9.{digits}f} {r.support:>9d}"
        )
        lines = [head, ""]
        lines += [fmt(r) for r in self.rows]
        lines.append("")
        lines.append(f"{'accuracy':>{width}} {'':>9} {'':>9} {self.accuracy:>9.{digits}f} {self.total:>9d}")
        lines.append(fmt(self.macro))
        lines.append(fmt(self.weighted))
        if self.zero_division:
            pairs = ", ".join(f"{c}:{m}" for c, m in self.zero_division)
            lines.append("")
            lines.append(f"zero division set to 0 for: {pairs}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "classes": [r.to_dict() for r in self.rows],
            "accuracy": self.accuracy,
            "macro_avg": self.macro.to_dict(),
            "weighted_avg": self.weighted.to_dict(),
            "total": self.total,
            "zero_division": [list(p) for p in self.zero_division],
        }


def confusion_matrix(y_true: Sequence[str], y_pred: Sequence[str], schema: LabelSchema) -> ConfusionMatrix:
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    index = {c: i for i, c in enumerate(schema.classes)}
    k = len(schema)
    try:
        t = np.fromiter((index[v] for v in y_true), dtype=np.int64, count=len(y_true))
        p = np.fromiter((index[v] for v in y_pred), dtype=np.int64, count=len(y_pred))
    except KeyError as exc:
        raise UnknownLabel(f"label {exc.args[0]!r} not in {schema.classes}") from None
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(schema, counts)


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def _f1(p: float, r: float) -> tuple[float, bool]:
    if p + r == 0:
        return 0.0, True
    return 2 * p * r / (p + r), False


def _rows(cm: ConfusionMatrix) -> tuple[list[MetricRow], list[tuple[str, str]]]:
    c = cm.counts
    rows, flags = [], []
    for i, name in enumerate(cm.classes):
        tp = int(c[i, i])
        support = int(c[i].sum())
        precision, zp = _ratio(tp, int(c[:, i].sum()))
        recall, zr = _ratio(tp, support)
        f1, zf = _f1(precision, recall)
        for bad, metric in ((zp, "precision"), (zr, "recall"), (zf, "f1")):
            if bad:
                flags.append((name, metric))
        rows.append(MetricRow(name, precision, recall, f1, support))
    return rows, flags


def precision_recall_f1_support(cm: ConfusionMatrix) -> list[MetricRow]:
    return _rows(cm)[0]


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def classification_report(cm: ConfusionMatrix) -> ClassificationReport:
    if cm.total == 0:
        raise EmptyMatrix("report of an empty confusion matrix")
    rows, flags = _rows(cm)
    k = len(rows)
    total = cm.total
    macro = MetricRow(
        "macro avg",
        sum(r.precision for r in rows) / k,
        sum(r.recall for r in rows) / k,
        sum(r.f1 for r in rows) / k,
        total,
    )
    weighted = MetricRow(
        "weighted avg",
        sum(r.precision * r.support for r in rows) / total,
        sum(r.recall * r.support for r in rows) / total,
        sum(r.f1 * r.support for r in rows) / total,
        total,
    )
    return ClassificationReport(cm.schema, tuple(rows), accuracy(cm), macro, weighted, total, tuple(flags))


# ---------------------------------------------------------------- files


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> Path:
    """Header row and first column carry class names; top-left cell is empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *cm.classes])
        for name, row in zip(cm.classes, cm.counts.tolist()):
            w.writerow([name, *row])
    return path


def read_confusion_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """(class names, counts) from a confusion CSV; no schema validation."""
    try:
        with Path(path).open(encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ParseFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseFailure(f"{path} is empty")
    names = rows[0][1:]
    body = rows[1:]
    if len(body) != len(names) or any(len(r) != len(names) + 1 for r in body):
        raise NonSquareMatrix(f"{path}: confusion matrix is not square")
    if [r[0] for r in body] != names:
        raise ParseFailure(f"{path}: row labels do not match column labels")
    try:
        counts = np.array([[int(v) for v in r[1:]] for r in body], dtype=np.int64).reshape(len(names), len(names))
    except ValueError as exc:
        raise ParseFailure(f"{path}: {exc}") from exc
    return names, counts


def write_report(report: ClassificationReport, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>`` (text) and the same stem with ``.json`` (structured)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.render(), encoding="utf-8")
    jpath = path.with_suffix(".json")
    jpath.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, jpath
