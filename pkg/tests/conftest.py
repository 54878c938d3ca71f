import numpy as np
import pytest

from covid_tsc.dataio import FOUR_CLASS, DatasetManifest, LabelSchema, Sample
from covid_tsc.synthetic import make_synthetic_corpus


def make_manifest(counts: dict[str, int], schema: LabelSchema = FOUR_CLASS, prefix: str = "") -> DatasetManifest:
    samples = []
    for label, n in counts.items():
        for i in range(n):
            sid = f"{prefix}{label}/{i:05d}"
            samples.append(Sample(id=sid, path=f"/nonexistent/{sid}.png", label=label))
    samples.sort(key=lambda s: s.id)
    return DatasetManifest(schema, tuple(samples))


@pytest.fixture
def manifest_factory():
    return make_manifest


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 classes x 10 synthetic 64x64 PNGs."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    return make_synthetic_corpus(root, 10, size=64, seed=3)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 classes x 60 synthetic 64x64 PNGs, enough for short training runs."""
    root = tmp_path_factory.mktemp("small_corpus")
    return make_synthetic_corpus(root, 60, size=64, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
