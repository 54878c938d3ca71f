"""Two-stage cascade: normal vs disease first, then the disease type.

Run: python demos/04_cascade.py [workdir]   (about two minutes)
"""

# %%
import sys
import tempfile
from pathlib import Path

from covid_tsc import dataio
from covid_tsc.cascade import CascadeModel, RoutingPolicy, compose_probabilities, evaluate_cascade
from covid_tsc.model import TrainConfig, build_baseline_cnn, fit
from covid_tsc.synthetic import make_synthetic_corpus

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="tsc_demo_"))
manifest = dataio.scan_directory(make_synthetic_corpus(work / "data", 250, size=64, seed=0))
split = dataio.split_holdout(manifest, 0.2, seed=0)

# %% [markdown]
# How stage outputs combine: P(normal) = 1 - p, P(c) = p * p2(c).

# %%
print(compose_probabilities(0.6, [0.5, 0.25, 0.25]))

# %% [markdown]
# Stage 1 sees as many normals as diseased samples, diseases evenly mixed.
# Stage 2 only ever sees diseased samples.

# %%
s1_data = dataio.build_stage1_dataset(split.train, 200, seed=1)
s1_tv = dataio.split_train_val(s1_data, 0.25, seed=2)
stage1, _ = fit(build_baseline_cnn(dataio.STAGE1, "binary"), s1_tv.train, s1_tv.held_out,
                TrainConfig.for_head("binary", epochs=8, seed=3))

s2_tv = dataio.split_train_val(dataio.filter_stage2(split.train), 0.25, seed=4)
stage2, _ = fit(build_baseline_cnn(dataio.STAGE2), s2_tv.train, s2_tv.held_out,
                TrainConfig(epochs=12, learning_rate=0.02, seed=5))

# %%
for policy in (RoutingPolicy("hard"), RoutingPolicy("soft"), RoutingPolicy("hard", 0.9)):
    ev = evaluate_cascade(CascadeModel(stage1, stage2, policy), split.held_out)
    print(f"{policy.mode} @ {policy.disease_threshold}: accuracy {ev.report.accuracy:.3f}, "
          f"predicted normal {ev.predictions.labels.count('normal')}")

# %% [markdown]
# Stage-wise view: stage 1 on its own binary task, stage 2 on every truly
# diseased sample and on those stage 1 actually passed on.

# %%
ev = evaluate_cascade(CascadeModel(stage1, stage2), split.held_out)
print(ev.stage1_report.render())
print("stage 2, all diseased:", ev.stage2_oracle_report.accuracy)
print("stage 2, as routed:   ", ev.stage2_pipeline_report.accuracy)
print(ev.report.render())
