"""Exploratory statistics: class distribution and per-image channel mean/std."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import DatasetManifest
from .errors import EmptyImage, ParseFailure
from .imaging import load_sample


@dataclass(frozen=True)
class ImageStats:
    sample_id: str
    label: str
    channel_mean: tuple[float, ...]
    channel_std: tuple[float, ...]

    @property
    def channels(self) -> int:
        return len(self.channel_mean)


def image_channel_stats(image, sample_id: str = "", label: str = "") -> ImageStats:
    """Per-channel mean and population std of an image scaled to [0, 1].

    Integer images are read as 8-bit (divided by 255); float images are taken
    to be in [0, 1] already. A 2-D array is one channel.
    """
    arr = np.asarray(image)
    if arr.size == 0:
        raise EmptyImage("image has no pixels")
    # integer pixels are reduced before scaling so constant images give std exactly 0
    scale = 255.0 if arr.dtype.kind in "iub" else 1.0
    arr = arr.astype(np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise EmptyImage(f"expected an (H, W) or (H, W, C) image, got shape {arr.shape}")
    flat = arr.reshape(-1, arr.shape[2])
    mean = flat.mean(axis=0) / scale
    std = flat.std(axis=0) / scale  # ddof=0
    return ImageStats(
        sample_id=sample_id,
        label=label,
        channel_mean=tuple(float(v) for v in mean),
        channel_std=tuple(float(v) for v in std),
    )


def class_distribution(manifest: DatasetManifest) -> dict[str, int]:
    return manifest.counts()


def scatter_table(manifest: DatasetManifest) -> list[ImageStats]:
    """One :class:`ImageStats` row per sample, in manifest order.

    Decode errors surface as :class:`DecodeFailure` carrying the sample id.
    """
    return [image_channel_stats(load_sample(s), s.id, s.label) for s in manifest]


def write_scatter_csv(rows: list[ImageStats], path: str | Path) -> Path:
    """Header ``id,label,mean_c0..,std_c0..``; width set by the widest image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = max((r.channels for r in rows), default=1)
    header = ["id", "label"] + [f"mean_c{i}" for i in range(n)] + [f"std_c{i}" for i in range(n)]
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            pad = [""] * (n - r.channels)
            means = [f"{v:.6g}" for v in r.channel_mean] + pad
            stds = [f"{v:.6g}" for v in r.channel_std] + pad
            w.writerow([r.sample_id, r.label, *means, *stds])
    return path


def read_scatter_csv(path: str | Path) -> list[ImageStats]:
    try:
        with Path(path).open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseFailure(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0][:2] != ["id", "label"]:
        raise ParseFailure(f"{path}: expected header starting with id,label")
    header = rows[0]
    mean_cols = [i for i, h in enumerate(header) if h.startswith("mean_c")]
    std_cols = [i for i, h in enumerate(header) if h.startswith("std_c")]
    if not mean_cols or len(mean_cols) != len(std_cols):
        raise ParseFailure(f"{path}: mismatched mean/std columns")
    out = []
    try:
        for r in rows[1:]:
            means = tuple(float(r[i]) for i in mean_cols if r[i] != "")
            stds = tuple(float(r[i]) for i in std_cols if r[i] != "")
            out.append(ImageStats(r[0], r[1], means, stds))
    except (ValueError, IndexError) as exc:
        raise ParseFailure(f"{path}: {exc}") from exc
    return out


def write_distribution_csv(dist: dict[str, int], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "count"])
        for label, count in dist.items():
            w.writerow([label, count])
    return path


def read_distribution_csv(path: str | Path) -> dict[str, int]:
    try:
        with Path(path).open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseFailure(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != ["label", "count"]:
        raise ParseFailure(f"{path}: expected header label,count")
    try:
        return {r[0]: int(r[1]) for r in rows[1:]}
    except (ValueError, IndexError) as exc:
        raise ParseFailure(f"{path}: {exc}") from exc
