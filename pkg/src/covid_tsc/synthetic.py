"""Synthetic class-per-folder corpus of pattern-stamped grayscale images.

Each class gets a distinct geometric stamp (bar, ring, disk, cross) at a
jittered position and size on a noisy background with a random intensity
gradient. Used for desk-scale end-to-end checks; not a model of real
radiographs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from ._rng import derive_seed, make_rng
from .dataio import FOUR_CLASS, LabelSchema

STAMPS = {"normal": "bar", "covid": "ring", "opacity": "disk", "pneumonia": "cross"}


def _stamp_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    jitter = size / 8
    cy = size / 2 + rng.uniform(-jitter, jitter)
    cx = size / 2 + rng.uniform(-jitter, jitter)
    s = size / 64 * rng.uniform(0.85, 1.15)
    if kind == "bar":
        return (np.abs(yy - cy) <= 3.5 * s) & (np.abs(xx - cx) <= 16 * s)
    if kind == "ring":
        r = np.hypot(yy - cy, xx - cx)
        return (r >= 9 * s) & (r <= 13 * s)
    if kind == "disk":
        return np.hypot(yy - cy, xx - cx) <= 10 * s
    if kind == "cross":
        dy, dx = yy - cy, xx - cx
        inside = (np.abs(dy) <= 13 * s) & (np.abs(dx) <= 13 * s)
        return inside & ((np.abs(dy - dx) <= 2.5 * s) | (np.abs(dy + dx) <= 2.5 * s))
    raise ValueError(f"unknown stamp {kind!r}")


def synth_image(kind: str, size: int, rng: np.random.Generator, noise: float = 0.08) -> np.ndarray:
    """One uint8 (size, size) image carrying stamp ``kind``."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = rng.uniform(0.2, 0.4)
    gy, gx = rng.uniform(-0.1, 0.1, size=2)
    img = base + gy * yy + gx * xx
    img = img + rng.uniform(0.3, 0.45) * _stamp_mask(kind, size, rng)
    img = img + rng.normal(0.0, noise, size=(size, size))
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def make_synthetic_corpus(
    root: str | Path,
    n_per_class: int | Sequence[int] = 500,
    size: int = 64,
    seed: int = 0,
    schema: LabelSchema = FOUR_CLASS,
    noise: float = 0.08,
    rgb: bool = False,
) -> Path:
    """Write ``root/<class>/<class>_<i>.png`` for every schema class.

    ``n_per_class`` may be one count or a count per schema class. Output is
    deterministic in ``seed``.
    """
    root = Path(root)
    counts = [n_per_class] * len(schema) if isinstance(n_per_class, int) else list(n_per_class)
    kinds = list(STAMPS.values())
    for ci, (name, n) in enumerate(zip(schema.classes, counts)):
        kind = STAMPS.get(name, kinds[ci % len(kinds)])
        folder = root / name
        folder.mkdir(parents=True, exist_ok=True)
        rng = make_rng(derive_seed(seed, "synthetic", name))
        for i in range(n):
            arr = synth_image(kind, size, rng, noise)
            im = Image.fromarray(arr, mode="L")
            if rgb:
                im = im.convert("RGB")
            im.save(folder / f"{name}_{i:05d}.png")
    return root
