"""Config-driven experiments and a one-shot vs cascade comparison table.

Run: python demos/05_compare.py [workdir]   (a few minutes)
"""

# %%
import sys
import tempfile
from pathlib import Path

from covid_tsc.harness import ExperimentConfig, comparison_table, run_experiment
from covid_tsc.synthetic import make_synthetic_corpus

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="tsc_demo_"))
root = make_synthetic_corpus(work / "data", 200, size=64, seed=0)

# %% [markdown]
# One config object, varied per run. Each run writes its own directory
# (history, confusion matrices, reports, predictions, models).

# %%
base = ExperimentConfig(data_root=str(root), epochs=6, seed=0, output_dir=str(work / "unused"))
runs = [
    base.replace(mode="one_shot", output_dir=str(work / "one_shot")),
    base.replace(mode="cascade", output_dir=str(work / "cascade")),
    base.replace(mode="one_shot", model="transfer", input_shape=[64, 64, 3], epochs=20,
                 learning_rate=0.1, output_dir=str(work / "transfer")),
]
results = []
for cfg in runs:
    res = run_experiment(cfg)
    results.append(res)
    print(f"{cfg.label:>18}: {100 * res.accuracy_mean:.1f}% "
          f"({res.trainable_parameters:,} trainable of {res.parameters:,})")

# %% [markdown]
# Published numbers can sit beside measured ones as annotated rows.

# %%
table = comparison_table(results, [{"method": "cascade (reference)", "dataset": "radiography", "accuracy": 82.4}])
print(table.render())
table.to_csv(work / "comparison.csv")

# %%
k5 = run_experiment(base.replace(k=5, output_dir=str(work / "cv")))
print("5-fold accuracies", [round(a, 3) for a in k5.fold_accuracies],
      f"mean {k5.accuracy_mean:.3f} +/- {k5.accuracy_std:.3f}")
