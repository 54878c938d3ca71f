"""Training loop, fitted models and model files."""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .._rng import derive_seed, make_rng
from ..dataio import DISEASE, DatasetManifest, LabelSchema, decode_labels, encode_labels
from ..errors import (
    ConfigInvalid,
    EmptyTrainingSet,
    InvalidShape,
    NonFiniteLoss,
    ParseFailure,
    SchemaMismatch,
)
from ..imaging import ImageStore, preprocess
from .backbone import backbone_from_dict, get_backbone
from .network import Network, sigmoid_binary_cross_entropy, softmax_cross_entropy
from .spec import ModelSpec

logger = logging.getLogger(__name__)

LOSSES = ("categorical_cross_entropy", "binary_cross_entropy")
_LOSS_FOR_HEAD = {"multiclass": "categorical_cross_entropy", "binary": "binary_cross_entropy"}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    loss: str = "categorical_cross_entropy"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigInvalid("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigInvalid("learning_rate must be positive")
        if self.loss not in LOSSES:
            raise ConfigInvalid(f"loss must be one of {LOSSES}, got {self.loss!r}")

    @classmethod
    def for_head(cls, head_mode: str, **kwargs) -> "TrainConfig":
        return cls(loss=_LOSS_FOR_HEAD[head_mode], **kwargs)


@dataclass(frozen=True)
class HistoryRow:
    fold: int
    epoch: int
    loss: float
    accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainingHistory:
    rows: list[HistoryRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def extend(self, other: "TrainingHistory") -> "TrainingHistory":
        self.rows.extend(other.rows)
        return self

    def folds(self) -> list[int]:
        return sorted({r.fold for r in self.rows})

    def for_fold(self, fold: int) -> list[HistoryRow]:
        return [r for r in self.rows if r.fold == fold]

    @property
    def final(self) -> HistoryRow:
        return self.rows[-1]


def positive_class(schema: LabelSchema) -> str:
    """Class whose probability a sigmoid head reports."""
    return DISEASE if DISEASE in schema.classes else decode_labels(schema)[-1]


class TrainedModel:
    """A fitted network bound to its spec and label schema.

    ``predict_proba`` returns (N, K) probabilities with columns in
    ``classes`` (alphabetical) order for multiclass heads, and (N,)
    probabilities of ``positive`` for binary heads.
    """

    def __init__(self, spec: ModelSpec, schema: LabelSchema, network: Network, extractor=None):
        self.spec = spec
        self.schema = schema
        self.network = network
        self.extractor = extractor
        self.classes = decode_labels(schema)
        self.positive = positive_class(schema) if spec.head_mode == "binary" else None

    @property
    def head_mode(self) -> str:
        return self.spec.head_mode

    def _inputs(self, samples, store: ImageStore | None) -> np.ndarray:
        if isinstance(samples, DatasetManifest):
            if store is None or store.input_shape != self.spec.input_shape:
                store = ImageStore(self.spec.input_shape)
            return store.batch(samples)
        arr = samples if isinstance(samples, np.ndarray) else list(samples)
        if isinstance(arr, np.ndarray) and arr.ndim == 4 and arr.shape[1:] == self.spec.input_shape:
            return arr.astype(np.float32, copy=False)
        return np.stack([preprocess(im, self.spec.input_shape) for im in arr]) if len(arr) else (
            np.zeros((0, *self.spec.input_shape), np.float32)
        )

    def predict_proba(self, samples, store: ImageStore | None = None) -> np.ndarray:
        return self.network.predict(self._inputs(samples, store))

    def predict(self, samples, store: ImageStore | None = None) -> list[str]:
        return labels_from_proba(self.predict_proba(samples, store), self)

    # ------------------------------------------------------------ files

    def save(self, path: str | Path) -> Path:
        """Write a zip of .npy members (numpy-loadable), byte-deterministic."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "kind": "network",
            "spec": self.spec.to_dict(),
            "schema": self.schema.to_dict(),
            "dtype": self.network.dtype.name,
            "extractor": self.extractor.to_dict() if self.extractor is not None else None,
        }
        arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
        arrays.update(self.network.get_weights())
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.external_attr = 0o644 << 16
                zf.writestr(info, buf.getvalue())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(bytes(data["__meta__"]).decode())
                weights = {k: data[k] for k in data.files if k != "__meta__"}
        except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
            raise ParseFailure(f"cannot load model {path}: {exc}") from exc
        spec = ModelSpec.from_dict(meta["spec"])
        schema = LabelSchema.from_dict(meta["schema"])
        extractor = backbone_from_dict(meta["extractor"]) if meta.get("extractor") else None
        net = Network(spec, seed=0, dtype=meta["dtype"], extractor=extractor)
        net.set_weights(weights)
        return cls(spec, schema, net, extractor)


def labels_from_proba(proba: np.ndarray, model) -> list[str]:
    """Argmax labels (multiclass) or ``p > 0.5`` (binary)."""
    if model.head_mode == "binary":
        other = [c for c in model.schema.classes if c != model.positive][0]
        return [model.positive if p > 0.5 else other for p in np.asarray(proba)]
    idx = np.asarray(proba).argmax(axis=1)
    return [model.classes[i] for i in idx]


def targets_for(manifest: DatasetManifest, spec: ModelSpec) -> np.ndarray:
    if spec.head_mode == "binary":
        pos = positive_class(manifest.schema)
        return np.array([1 if s.label == pos else 0 for s in manifest], dtype=np.int64)
    enc = encode_labels(manifest.schema)
    return np.array([enc[s.label] for s in manifest], dtype=np.int64)


def _default_extractor(spec: ModelSpec):
    for layer in spec.layers:
        if layer.kind == "backbone":
            return get_backbone(layer.name or "toy", feature_dim=layer.units, input_shape=spec.input_shape)
    return None


def _check_inputs(spec: ModelSpec, train: DatasetManifest, val: DatasetManifest, config: TrainConfig):
    if len(train) == 0:
        raise EmptyTrainingSet("training manifest is empty")
    if len(val) == 0:
        raise EmptyTrainingSet("validation manifest is empty")
    if train.schema != val.schema:
        raise SchemaMismatch("training and validation manifests use different schemas")
    try:
        spec.check_head(len(train.schema))
    except InvalidShape as exc:
        raise SchemaMismatch(str(exc)) from exc
    if spec.head_mode == "binary" and len(train.schema) != 2:
        raise SchemaMismatch("binary head needs a 2-class schema")
    if config.loss != _LOSS_FOR_HEAD[spec.head_mode]:
        raise ConfigInvalid(f"loss {config.loss!r} does not match a {spec.head_mode} head")


def _evaluate(net: Network, h: np.ndarray, y: np.ndarray, batch: int = 256) -> tuple[float, float]:
    start = min(net.frozen_prefix, len(net.body))
    total_loss = 0.0
    correct = 0
    for i in range(0, len(h), batch):
        z, _ = net.forward_range(h[i:i + batch], start, len(net.body))
        yb = y[i:i + batch]
        if net.head == "softmax":
            loss, _ = softmax_cross_entropy(z, yb)
            correct += int((z.argmax(axis=1) == yb).sum())
        else:
            loss, _ = sigmoid_binary_cross_entropy(z, yb)
            correct += int(((z[:, 0] > 0).astype(np.int64) == yb).sum())
        total_loss += loss * len(yb)
    return total_loss / len(h), correct / len(h)


def _prefix_batched(net: Network, x: np.ndarray, batch: int = 256) -> np.ndarray:
    if net.frozen_prefix == 0:
        return x.astype(net.dtype, copy=False)
    return np.concatenate([net.prefix(x[i:i + batch]) for i in range(0, len(x), batch)])


def fit(
    spec: ModelSpec,
    train: DatasetManifest,
    val: DatasetManifest,
    config: TrainConfig,
    *,
    store: ImageStore | None = None,
    extractor=None,
    fold: int = 0,
) -> tuple[TrainedModel, TrainingHistory]:
    """Train ``spec`` with plain minibatch gradient descent.

    Frozen-prefix outputs are computed once and cached; only layers after
    the prefix receive updates. One history row is recorded per epoch:
    running mean training loss/accuracy over the epoch's batches, then loss
    and accuracy on ``val``.

    Raises:
        EmptyTrainingSet: ``train`` or ``val`` is empty.
        SchemaMismatch: manifest schema does not fit the spec's head.
        NonFiniteLoss: the loss became NaN or infinite.
    """
    _check_inputs(spec, train, val, config)
    if extractor is None:
        extractor = _default_extractor(spec)
    if store is None or store.input_shape != spec.input_shape:
        store = ImageStore(spec.input_shape)

    net = Network(spec, seed=derive_seed(config.seed, "init"), dtype=config.dtype, extractor=extractor)
    h_train = _prefix_batched(net, store.batch(train))
    h_val = _prefix_batched(net, store.batch(val))
    y_train = targets_for(train, spec)
    y_val = targets_for(val, spec)

    lr = np.asarray(config.learning_rate, dtype=net.dtype)
    rng = make_rng(derive_seed(config.seed, "shuffle"))
    history = TrainingHistory()
    n = len(h_train)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            loss_sum = 0.0
            correct = 0
            for i in range(0, n, config.batch_size):
                idx = order[i:i + config.batch_size]
                yb = y_train[idx]
                loss, z, grads = net.loss_and_grads(h_train[idx], yb)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(f"loss became {loss} in epoch {epoch} (fold {fold})")
                for (offset, name), g in grads.items():
                    param = net.body[offset].params()[name]
                    param -= lr * g.astype(net.dtype, copy=False)
                loss_sum += loss * len(idx)
                if net.head == "softmax":
                    correct += int((z.argmax(axis=1) == yb).sum())
                else:
                    correct += int(((z[:, 0] > 0).astype(np.int64) == yb).sum())
            val_loss, val_acc = _evaluate(net, h_val, y_val)
            if not (np.isfinite(val_loss) and np.isfinite(loss_sum)):
                raise NonFiniteLoss(f"validation loss became {val_loss} in epoch {epoch} (fold {fold})")
            row = HistoryRow(fold, epoch, loss_sum / n, correct / n, val_loss, val_acc)
            history.rows.append(row)
            logger.info(
                "fold %d epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                fold, epoch, row.loss, row.accuracy, row.val_loss, row.val_accuracy,
            )
    return TrainedModel(spec, train.schema, net, extractor), history


def predict_proba(model, samples, store: ImageStore | None = None) -> np.ndarray:
    return model.predict_proba(samples, store=store)


class LookupModel:
    """Predictor that returns fixed, pre-assigned probabilities by sample id.

    Used as a deterministic stage oracle for cascade evaluation. Binary
    tables hold P(positive) floats; multiclass tables hold rows ordered like
    ``classes`` (alphabetical).
    """

    def __init__(self, schema: LabelSchema, table: dict, head_mode: str | None = None, default=None):
        self.schema = schema
        self.head_mode = head_mode or ("binary" if len(schema) == 2 else "multiclass")
        self.classes = decode_labels(schema)
        self.positive = positive_class(schema) if self.head_mode == "binary" else None
        self.table = dict(table)
        self.default = default

    @classmethod
    def from_labels(cls, schema: LabelSchema, labels: dict[str, str], head_mode: str | None = None,
                    default: str | None = None) -> "LookupModel":
        """One-hot oracle predicting ``labels[id]`` for each sample id."""
        mode = head_mode or ("binary" if len(schema) == 2 else "multiclass")
        classes = decode_labels(schema)
        pos = positive_class(schema)

        def row(label):
            if mode == "binary":
                return 1.0 if label == pos else 0.0
            return [1.0 if c == label else 0.0 for c in classes]

        return cls(schema, {k: row(v) for k, v in labels.items()}, mode,
                   None if default is None else row(default))

    def predict_proba(self, samples, store=None) -> np.ndarray:
        if not isinstance(samples, DatasetManifest):
            raise TypeError("lookup models predict on manifests only")
        rows = []
        for s in samples:
            if s.id in self.table:
                rows.append(self.table[s.id])
            elif self.default is not None:
                rows.append(self.default)
            else:
                raise KeyError(f"lookup model has no entry for sample {s.id!r}")
        if self.head_mode == "binary":
            return np.asarray(rows, dtype=np.float64).reshape(-1)
        return np.asarray(rows, dtype=np.float64).reshape(-1, len(self.classes))

    def predict(self, samples, store=None) -> list[str]:
        return labels_from_proba(self.predict_proba(samples), self)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "kind": "lookup",
            "schema": self.schema.to_dict(),
            "head_mode": self.head_mode,
            "table": self.table,
            "default": self.default,
        }
        path.write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "LookupModel":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(LabelSchema.from_dict(doc["schema"]), doc["table"], doc["head_mode"], doc.get("default"))
        except (OSError, ValueError, KeyError) as exc:
            raise ParseFailure(f"cannot load lookup model {path}: {exc}") from exc


def load_model(path: str | Path):
    """Load a :class:`TrainedModel` (``.npz``) or :class:`LookupModel` (``.json``)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return LookupModel.load(path)
    return TrainedModel.load(path)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
