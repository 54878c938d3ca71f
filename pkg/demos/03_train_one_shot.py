"""Train the baseline CNN as a flat 4-class classifier.

Run: python demos/03_train_one_shot.py [workdir]   (about a minute)
"""

# %%
import sys
import tempfile
from pathlib import Path

from covid_tsc import dataio
from covid_tsc.harness import write_history_csv
from covid_tsc.metrics import classification_report, confusion_matrix
from covid_tsc.model import TrainConfig, build_baseline_cnn, count_parameters, fit, load_model
from covid_tsc.report import render_curves
from covid_tsc.synthetic import make_synthetic_corpus

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="tsc_demo_"))
manifest = dataio.scan_directory(make_synthetic_corpus(work / "data", 250, size=64, seed=0))
split = dataio.split_holdout(manifest, 0.2, seed=0)
tv = dataio.split_train_val(split.train, 0.25, seed=1)

# %% [markdown]
# Two conv/relu/pool blocks, a dense hidden layer and a softmax head.

# %%
spec = build_baseline_cnn(dataio.FOUR_CLASS, input_shape=(64, 64, 1))
total, trainable = count_parameters(spec)
print(f"{total:,} parameters ({trainable:,} trainable)")

# %%
model, history = fit(spec, tv.train, tv.held_out, TrainConfig(epochs=8, seed=0))
for row in history:
    print(f"epoch {row.epoch}: loss {row.loss:.3f} acc {row.accuracy:.3f} "
          f"val_loss {row.val_loss:.3f} val_acc {row.val_accuracy:.3f}")

# %% [markdown]
# Score on the untouched holdout.

# %%
pred = model.predict(split.held_out)
report = classification_report(confusion_matrix(split.held_out.labels, pred, dataio.FOUR_CLASS))
print(report.render())

# %%
saved = model.save(work / "one_shot.npz")
assert load_model(saved).predict(split.held_out) == pred
print("curves:", render_curves(write_history_csv(history, work / "history.csv"), work / "curves.png"))
