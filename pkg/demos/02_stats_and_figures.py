"""Exploratory statistics: class counts and per-image channel mean/std.

Run: python demos/02_stats_and_figures.py [workdir]
"""

# %%
import sys
import tempfile
from pathlib import Path

from covid_tsc import dataio, report, stats
from covid_tsc.synthetic import make_synthetic_corpus

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="tsc_demo_"))
manifest = dataio.scan_directory(make_synthetic_corpus(work / "data", 30, size=64, seed=0))

# %% [markdown]
# Pixel values are scaled to [0, 1] and the std is the population one, so a
# constant image has std exactly 0.

# %%
rows = stats.scatter_table(manifest)
for label in dataio.FOUR_CLASS.classes:
    means = [r.channel_mean[0] for r in rows if r.label == label]
    print(f"{label:>9}: mean intensity {sum(means) / len(means):.3f}")

# %%
scatter_csv = stats.write_scatter_csv(rows, work / "scatter.csv")
dist_csv = stats.write_distribution_csv(stats.class_distribution(manifest), work / "distribution.csv")

# %% [markdown]
# Figures are rendered from the CSVs alone, never from live objects.

# %%
for path in (
    report.render_distribution(dist_csv, work / "distribution.png"),
    report.render_scatter(scatter_csv, work / "scatter.png"),
    report.render_scatter(scatter_csv, work / "scatter_per_class.png", per_class=True),
):
    print("wrote", path)
