"""Image decoding and preprocessing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .dataio import DatasetManifest, Sample
from .errors import DecodeFailure


def decode_image(path: str | Path) -> np.ndarray:
    """Decode to an integer array of shape (H, W) or (H, W, 3), native size.

    Grayscale stays single-channel; every other mode is converted to RGB.
    """
    with Image.open(path) as im:
        if im.mode in ("L", "1", "LA"):
            return np.asarray(im.convert("L"))
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return np.clip(np.round(arr / 257.0), 0, 255).astype(np.uint8)
        return np.asarray(im.convert("RGB"))


def load_sample(sample: Sample) -> np.ndarray:
    try:
        return decode_image(sample.path)
    except Exception as exc:
        raise DecodeFailure(sample.id, str(exc)) from exc


def preprocess(image: np.ndarray, input_shape: tuple[int, int, int]) -> np.ndarray:
    """Resize to ``input_shape`` and scale to [0, 1] float32.

    Grayscale is replicated to three channels when three are required; RGB is
    reduced to luminance when one is required.
    """
    h, w, c = input_shape
    arr = np.asarray(image)
    if arr.dtype.kind == "f":
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    arr = arr.astype(np.uint8, copy=False)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    im = Image.fromarray(arr)
    if c == 1:
        im = im.convert("L")
    else:
        im = im.convert("RGB")
    if im.size != (w, h):
        im = im.resize((w, h), Image.BILINEAR)
    out = np.asarray(im, dtype=np.float32) / np.float32(255.0)
    if out.ndim == 2:
        out = out[:, :, None]
    return out


class ImageStore:
    """Decoded, preprocessed images cached by sample id for one input shape."""

    def __init__(self, input_shape: tuple[int, int, int]):
        self.input_shape = tuple(input_shape)
        self._cache: dict[str, np.ndarray] = {}

    def get(self, sample: Sample) -> np.ndarray:
        arr = self._cache.get(sample.id)
        if arr is None:
            arr = preprocess(load_sample(sample), self.input_shape)
            self._cache[sample.id] = arr
        return arr

    def batch(self, manifest: DatasetManifest) -> np.ndarray:
        if len(manifest) == 0:
            return np.zeros((0, *self.input_shape), dtype=np.float32)
        return np.stack([self.get(s) for s in manifest])

    def __len__(self) -> int:
        return len(self._cache)
