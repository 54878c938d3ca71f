"""Dataset manifests, sampling, stratified splits and fold plans.

A :class:`DatasetManifest` is an immutable, ordered list of ``(id, path,
label)`` samples under a :class:`LabelSchema`. Every operation here is a pure
function of its inputs and an integer seed.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from PIL import Image

from ._rng import make_rng
from .errors import (
    ClassTooSmall,
    EmptyDataset,
    InsufficientSamples,
    InvalidFraction,
    InvalidK,
    InvalidSchema,
    MissingClassDirectory,
    ParseFailure,
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

MULTICLASS4 = "multiclass4"
STAGE1_BINARY = "stage1_binary"
STAGE2_DISEASE = "stage2_disease"

NORMAL = "normal"
DISEASE = "disease"
DISEASE_CLASSES = ("covid", "opacity", "pneumonia")

# Folder names used by the public COVID-19 Radiography Database.
RADIOGRAPHY_FOLDERS = {
    "normal": "Normal",
    "covid": "COVID",
    "opacity": "Lung_Opacity",
    "pneumonia": "Viral Pneumonia",
}

_STAGE_SIZES = {MULTICLASS4: 4, STAGE1_BINARY: 2, STAGE2_DISEASE: 3}


@dataclass(frozen=True)
class LabelSchema:
    classes: tuple[str, ...]
    stage: str = MULTICLASS4

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.stage not in _STAGE_SIZES:
            raise InvalidSchema(f"unknown stage {self.stage!r}")
        if any(not c for c in self.classes):
            raise InvalidSchema("class names must be non-empty")
        if len(set(self.classes)) != len(self.classes):
            raise InvalidSchema(f"duplicate class names in {self.classes}")
        if len(self.classes) != _STAGE_SIZES[self.stage]:
            raise InvalidSchema(
                f"{self.stage} needs {_STAGE_SIZES[self.stage]} classes, "
                f"got {len(self.classes)}"
            )
        if self.stage == STAGE1_BINARY and set(self.classes) != {NORMAL, DISEASE}:
            raise InvalidSchema("stage1_binary classes must be 'normal' and 'disease'")

    def __contains__(self, label: object) -> bool:
        return label in self.classes

    def __len__(self) -> int:
        return len(self.classes)

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "stage": self.stage}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelSchema":
        return cls(tuple(d["classes"]), d["stage"])


FOUR_CLASS = LabelSchema((NORMAL, *DISEASE_CLASSES), MULTICLASS4)
STAGE1 = LabelSchema((NORMAL, DISEASE), STAGE1_BINARY)
STAGE2 = LabelSchema(DISEASE_CLASSES, STAGE2_DISEASE)


def infer_schema(labels: Iterable[str]) -> LabelSchema:
    """Pick the built-in schema that covers ``labels``."""
    found = set(labels)
    for schema in (STAGE1, STAGE2, FOUR_CLASS):
        if found <= set(schema.classes):
            return schema
    raise InvalidSchema(f"labels {sorted(found)} fit no known schema")


@dataclass(frozen=True)
class Sample:
    id: str
    path: str
    label: str
    origin: str | None = None  # original 4-class label after relabeling


@dataclass(frozen=True)
class DatasetManifest:
    schema: LabelSchema
    samples: tuple[Sample, ...] = ()
    build_log: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for s in self.samples:
            if s.label not in self.schema:
                raise InvalidSchema(
                    f"sample {s.id!r} has label {s.label!r} outside {self.schema.classes}"
                )
            if s.id in seen:
                raise InvalidSchema(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.samples]

    def counts(self) -> dict[str, int]:
        """Per-class sample counts in schema order (zeros included)."""
        c = Counter(s.label for s in self.samples)
        return {name: c.get(name, 0) for name in self.schema.classes}

    def by_class(self) -> dict[str, list[Sample]]:
        groups: dict[str, list[Sample]] = {name: [] for name in self.schema.classes}
        for s in self.samples:
            groups[s.label].append(s)
        return groups

    def subset(self, ids: Iterable[str]) -> "DatasetManifest":
        """Samples whose id is in ``ids``, in manifest order."""
        keep = set(ids)
        return replace(self, samples=tuple(s for s in self.samples if s.id in keep))


@dataclass(frozen=True)
class SplitResult:
    train: DatasetManifest
    held_out: DatasetManifest
    seed: int
    fraction: float


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: Mapping[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignments.items() if f == fold]

    def split(self, manifest: DatasetManifest, fold: int) -> tuple[DatasetManifest, DatasetManifest]:
        """(train, validation) manifests for ``fold``."""
        val = set(self.fold_ids(fold))
        train = [s for s in manifest if s.id not in val]
        held = [s for s in manifest if s.id in val]
        return replace(manifest, samples=tuple(train)), replace(manifest, samples=tuple(held))

    def sizes(self) -> list[int]:
        c = Counter(self.assignments.values())
        return [c.get(i, 0) for i in range(self.k)]


# ---------------------------------------------------------------- ingestion


def _class_folder(root: Path, name: str, folders: Mapping[str, str] | None) -> Path | None:
    wanted = [folders[name]] if folders and name in folders else [name]
    if name in RADIOGRAPHY_FOLDERS:
        wanted.append(RADIOGRAPHY_FOLDERS[name])
    for w in wanted:
        if (root / w).is_dir():
            return root / w
    lowered = {w.lower() for w in wanted}
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name.lower() in lowered:
            return child
    return None


def _image_files(folder: Path) -> list[Path]:
    files = [p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    # Radiography-database layout keeps images (and masks) in subfolders.
    if not files and (folder / "images").is_dir():
        files = [
            p for p in (folder / "images").iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        ]
    return files


def _decodable(path: Path) -> str | None:
    try:
        with Image.open(path) as im:
            im.verify()
    except Exception as exc:  # PIL raises a zoo of exception types
        return f"{type(exc).__name__}: {exc}"
    return None


def scan_directory(
    root: str | Path,
    schema: LabelSchema = FOUR_CLASS,
    folders: Mapping[str, str] | None = None,
    check_decode: bool = True,
) -> DatasetManifest:
    """Index a class-per-folder image dataset.

    Each schema class must have a folder under ``root``, found by exact
    name, by the optional ``folders`` mapping, by the radiography-database
    folder name, or case-insensitively. Sample ids are the root-relative
    posix paths; samples are sorted by that path. Files that fail to decode
    are skipped and noted in ``build_log``.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingClassDirectory(f"dataset root {root} does not exist")
    samples: list[Sample] = []
    log: list[str] = []
    for name in schema.classes:
        folder = _class_folder(root, name, folders)
        if folder is None:
            raise MissingClassDirectory(f"no folder for class {name!r} under {root}")
        for path in _image_files(folder):
            if check_decode:
                problem = _decodable(path)
                if problem is not None:
                    msg = f"skipped {path}: {problem}"
                    logger.warning(msg)
                    log.append(msg)
                    continue
            rel = path.relative_to(root).as_posix()
            samples.append(Sample(id=rel, path=str(path), label=name))
    if not samples:
        raise EmptyDataset(f"no images found under {root}")
    samples.sort(key=lambda s: s.id)
    return DatasetManifest(schema, tuple(samples), tuple(log))


# ---------------------------------------------------------------- sampling


def sample_balanced(manifest: DatasetManifest, n_per_class: int, seed: int) -> DatasetManifest:
    """Draw exactly ``n_per_class`` samples of every class without replacement."""
    groups = manifest.by_class()
    for name, members in groups.items():
        if len(members) < n_per_class:
            raise InsufficientSamples(name, len(members), n_per_class)
    rng = make_rng(seed)
    chosen: set[str] = set()
    for name in manifest.schema.classes:
        members = groups[name]
        picks = rng.choice(len(members), size=n_per_class, replace=False)
        chosen.update(members[i].id for i in picks)
    return manifest.subset(chosen)


def stratified_count(n: int, fraction: float) -> int:
    """round(n * fraction) with halves rounded up, computed exactly."""
    exact = Decimal(n) * Decimal(repr(float(fraction)))
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _stratified_split(manifest: DatasetManifest, fraction: float, seed: int) -> SplitResult:
    if not (isinstance(fraction, (int, float)) and 0 < fraction < 1) or math.isnan(fraction):
        raise InvalidFraction(f"fraction must lie strictly in (0, 1), got {fraction!r}")
    groups = manifest.by_class()
    for name, members in groups.items():
        if len(members) < 2:
            raise ClassTooSmall(f"class {name!r} has {len(members)} samples, need >= 2")
    rng = make_rng(seed)
    held: set[str] = set()
    for name in manifest.schema.classes:
        members = groups[name]
        n_held = stratified_count(len(members), fraction)
        order = rng.permutation(len(members))
        held.update(members[i].id for i in order[:n_held])
    train = replace(manifest, samples=tuple(s for s in manifest if s.id not in held))
    test = replace(manifest, samples=tuple(s for s in manifest if s.id in held))
    return SplitResult(train=train, held_out=test, seed=seed, fraction=float(fraction))


def split_holdout(manifest: DatasetManifest, test_fraction: float = 0.2, seed: int = 0) -> SplitResult:
    """Stratified train/test split; ``held_out`` is the test part."""
    return _stratified_split(manifest, test_fraction, seed)


def split_train_val(train: DatasetManifest, val_fraction: float = 0.25, seed: int = 0) -> SplitResult:
    """Stratified train/validation split; ``held_out`` is the validation part."""
    return _stratified_split(train, val_fraction, seed)


def make_folds(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified k-fold plan.

    Each class is shuffled and dealt round-robin into folds. The dealing
    position carries over from one class to the next, so overall fold sizes
    also differ by at most one.
    """
    if not isinstance(k, int) or k < 2:
        raise InvalidK(f"k must be an integer >= 2, got {k!r}")
    groups = manifest.by_class()
    for name, members in groups.items():
        if len(members) < k:
            raise ClassTooSmall(f"class {name!r} has {len(members)} samples, need >= {k}")
    rng = make_rng(seed)
    assignments: dict[str, int] = {}
    cursor = 0
    for name in manifest.schema.classes:
        members = groups[name]
        for i in rng.permutation(len(members)):
            assignments[members[i].id] = cursor % k
            cursor += 1
    ordered = {s.id: assignments[s.id] for s in manifest}
    return FoldPlan(k=k, assignments=ordered)


# ---------------------------------------------------------------- stage data


def _require_four_class(manifest: DatasetManifest) -> None:
    if manifest.schema.stage != MULTICLASS4:
        raise InvalidSchema(f"expected a 4-class manifest, got {manifest.schema.stage}")


def disease_quota(n_per_side: int, disease_classes: Sequence[str]) -> dict[str, int]:
    """Split ``n_per_side`` evenly; leftovers go to the first classes in order."""
    q, r = divmod(n_per_side, len(disease_classes))
    return {c: q + (1 if i < r else 0) for i, c in enumerate(disease_classes)}


def build_stage1_dataset(manifest: DatasetManifest, n_per_side: int, seed: int) -> DatasetManifest:
    """Balanced normal-vs-disease manifest.

    ``n_per_side`` normals plus ``n_per_side`` disease samples drawn evenly
    from the disease classes in schema order; the original label is kept in
    ``Sample.origin``.
    """
    _require_four_class(manifest)
    groups = manifest.by_class()
    disease = [c for c in manifest.schema.classes if c != NORMAL]
    quota = {NORMAL: n_per_side, **disease_quota(n_per_side, disease)}
    for name, want in quota.items():
        if len(groups[name]) < want:
            raise InsufficientSamples(name, len(groups[name]), want)
    rng = make_rng(seed)
    chosen: set[str] = set()
    for name in manifest.schema.classes:
        members = groups[name]
        picks = rng.choice(len(members), size=quota[name], replace=False)
        chosen.update(members[i].id for i in picks)
    return to_stage1(manifest.subset(chosen))


def to_stage1(manifest: DatasetManifest) -> DatasetManifest:
    """Relabel every sample of a 4-class manifest as normal/disease."""
    _require_four_class(manifest)
    samples = tuple(
        replace(s, label=NORMAL if s.label == NORMAL else DISEASE, origin=s.label)
        for s in manifest
    )
    return DatasetManifest(STAGE1, samples, manifest.build_log)


def filter_stage2(manifest: DatasetManifest) -> DatasetManifest:
    """Keep only disease samples, under the 3-class disease schema."""
    _require_four_class(manifest)
    samples = tuple(s for s in manifest if s.label in STAGE2)
    return DatasetManifest(STAGE2, samples, manifest.build_log)


def encode_labels(schema: LabelSchema) -> dict[str, int]:
    """Class name -> index, by alphabetical class order."""
    return {name: i for i, name in enumerate(sorted(schema.classes))}


def decode_labels(schema: LabelSchema) -> list[str]:
    return sorted(schema.classes)


# ---------------------------------------------------------------- files

MANIFEST_HEADER = ["id", "filepath", "label"]
FOLDS_HEADER = ["id", "fold"]


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for s in manifest:
            w.writerow([s.id, s.path, s.label])
    return path


def read_manifest(path: str | Path, schema: LabelSchema | None = None) -> DatasetManifest:
    """Load a manifest CSV. Without ``schema`` the built-in one is inferred."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseFailure(f"cannot read manifest {path}: {exc}") from exc
    if not rows or rows[0] != MANIFEST_HEADER:
        raise ParseFailure(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
    body = rows[1:]
    if any(len(r) != 3 for r in body):
        raise ParseFailure(f"{path}: every row needs 3 fields")
    if schema is None:
        schema = infer_schema(r[2] for r in body)
    return DatasetManifest(schema, tuple(Sample(id=r[0], path=r[1], label=r[2]) for r in body))


def write_folds(plan: FoldPlan, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FOLDS_HEADER)
        for sid, fold in plan.assignments.items():
            w.writerow([sid, fold])
    return path


def read_folds(path: str | Path) -> FoldPlan:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != FOLDS_HEADER:
        raise ParseFailure(f"{path}: expected header id,fold")
    assignments = {r[0]: int(r[1]) for r in rows[1:]}
    k = max(assignments.values()) + 1 if assignments else 0
    return FoldPlan(k=k, assignments=assignments)
