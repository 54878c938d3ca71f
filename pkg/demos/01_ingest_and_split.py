"""Ingest a class-per-folder image set and carve out reproducible splits.

Run: python demos/01_ingest_and_split.py [workdir]
"""

# %%
import sys
import tempfile
from pathlib import Path

from covid_tsc import dataio
from covid_tsc.synthetic import make_synthetic_corpus

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="tsc_demo_"))

# %% [markdown]
# A synthetic stand-in for a radiography folder: one folder per class, each
# image carrying a class-specific geometric stamp plus noise.

# %%
root = make_synthetic_corpus(work / "data", n_per_class=50, size=64, seed=0)
manifest = dataio.scan_directory(root)
print("scanned", len(manifest), "images:", manifest.counts())

# %% [markdown]
# Balanced sampling, then the holdout is reserved before anything else.

# %%
balanced = dataio.sample_balanced(manifest, 40, seed=1)
split = dataio.split_holdout(balanced, 0.2, seed=2)
print("train pool", split.train.counts())
print("holdout   ", split.held_out.counts())

tv = dataio.split_train_val(split.train, 0.25, seed=3)
print("train/val ", len(tv.train), "/", len(tv.held_out))

# %%
plan = dataio.make_folds(split.train, k=5, seed=4)
print("fold sizes", plan.sizes())

# %% [markdown]
# Stage datasets for the cascade: normal vs disease with an even spread of
# disease types, and a disease-only view for the second stage.

# %%
stage1 = dataio.build_stage1_dataset(split.train, 30, seed=5)
print("stage 1", stage1.counts(), "disease origins", dataio.disease_quota(30, ["covid", "opacity", "pneumonia"]))
stage2 = dataio.filter_stage2(split.train)
print("stage 2", stage2.counts())
print("label codes", dataio.encode_labels(dataio.FOUR_CLASS))

# %%
path = dataio.write_manifest(balanced, work / "manifest.csv")
dataio.write_folds(plan, work / "folds.csv")
assert dataio.read_manifest(path) == balanced
print("wrote", path)
