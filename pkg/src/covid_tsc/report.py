"""Static figures rendered from the pipeline's CSV artifacts.

Each ``render_*`` function reads a CSV, writes one image and returns its
path. The matching ``*_figure`` builder returns the matplotlib figure so
callers (and tests) can inspect it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .errors import InputError  # noqa: E402
from .harness import read_history_csv  # noqa: E402
from .metrics import read_confusion_csv  # noqa: E402
from .stats import read_distribution_csv, read_scatter_csv  # noqa: E402

FORMATS = ("png", "svg", "pdf")


def _save(fig, out: str | Path, fmt: str | None) -> Path:
    out = Path(out)
    fmt = fmt or (out.suffix.lstrip(".").lower() or "png")
    if fmt not in FORMATS:
        raise InputError(f"format must be one of {FORMATS}, got {fmt!r}")
    if out.suffix.lstrip(".").lower() != fmt:
        out = out.with_suffix("." + fmt)
    out.parent.mkdir(parents=True, exist_ok=True)
    # strip timestamps/version strings so re-rendering gives identical bytes
    meta = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None},
            "pdf": {"CreationDate": None, "Producer": None, "Creator": None}}[fmt]
    kwargs = {"metadata": meta}
    if fmt == "svg":
        with matplotlib.rc_context({"svg.hashsalt": "covid-tsc"}):
            fig.savefig(out, format=fmt, **kwargs)
    else:
        fig.savefig(out, format=fmt, **kwargs)
    plt.close(fig)
    return out


def curves_figure(history_csv: str | Path, title: str | None = None):
    """Two panels (accuracy, loss); train and validation series per fold."""
    hist = read_history_csv(history_csv)
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(11, 4))
    for fold in hist.folds():
        rows = hist.for_fold(fold)
        ep = [r.epoch for r in rows]
        tag = f" f{fold}" if len(hist.folds()) > 1 else ""
        ax_acc.plot(ep, [r.accuracy for r in rows], "-", label=f"train{tag}")
        ax_acc.plot(ep, [r.val_accuracy for r in rows], "--", label=f"val{tag}")
        ax_loss.plot(ep, [r.loss for r in rows], "-", label=f"train{tag}")
        ax_loss.plot(ep, [r.val_loss for r in rows], "--", label=f"val{tag}")
    for ax, name in ((ax_acc, "accuracy"), (ax_loss, "loss")):
        ax.set_xlabel("epoch")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_ylabel(name)
        ax.set_title(name)
        ax.grid(alpha=0.3)
        if ax.lines:
            ax.legend(fontsize="small", ncol=2)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def render_curves(history_csv, out, fmt: str | None = None, title: str | None = None) -> Path:
    return _save(curves_figure(history_csv, title), out, fmt)


def heatmap_figure(cm_csv: str | Path, title: str | None = None):
    names, counts = read_confusion_csv(cm_csv)
    k = len(names)
    fig, ax = plt.subplots(figsize=(1.2 * k + 2.5, 1.2 * k + 1.8))
    vmax = max(int(counts.max()) if counts.size else 0, 1)
    im = ax.imshow(counts, cmap="Blues", vmin=0, vmax=vmax)
    for i in range(k):
        for j in range(k):
            v = int(counts[i, j])
            ax.text(j, i, str(v), ha="center", va="center",
                    color="white" if v > vmax / 2 else "black")
    ax.set_xticks(range(k), names, rotation=30, ha="right")
    ax.set_yticks(range(k), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title or "Confusion matrix")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return fig


def render_confusion_heatmap(cm_csv, out, fmt: str | None = None, title: str | None = None) -> Path:
    return _save(heatmap_figure(cm_csv, title), out, fmt)


def distribution_figure(dist_csv: str | Path, title: str | None = None):
    dist = read_distribution_csv(dist_csv)
    labels = list(dist)
    counts = [dist[l] for l in labels]
    fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(labels) + 2), 4))
    bars = ax.bar(labels, counts, color="tab:blue")
    ax.bar_label(bars, labels=[str(c) for c in counts])
    ax.set_ylabel("samples")
    ax.set_title(title or "Class distribution")
    ax.margins(y=0.12)
    fig.tight_layout()
    return fig


def render_distribution(dist_csv, out, fmt: str | None = None, title: str | None = None) -> Path:
    return _save(distribution_figure(dist_csv, title), out, fmt)


def scatter_figure(stats_csv: str | Path, per_class: bool = False, channel: int = 0, title: str | None = None):
    """Mean vs std of one channel, coloured by class; one panel per class if asked."""
    rows = read_scatter_csv(stats_csv)
    labels = list(dict.fromkeys(r.label for r in rows))
    colors = {l: plt.cm.tab10(i % 10) for i, l in enumerate(labels)}

    def points(subset):
        m = np.array([r.channel_mean[channel] for r in subset], dtype=float)
        s = np.array([r.channel_std[channel] for r in subset], dtype=float)
        return m, s

    if per_class:
        n = max(len(labels), 1)
        fig, axes = plt.subplots(1, n, figsize=(3.6 * n, 3.6), squeeze=False, sharex=True, sharey=True)
        for ax, l in zip(axes[0], labels):
            m, s = points([r for r in rows if r.label == l])
            ax.scatter(m, s, s=8, color=colors[l], label=l)
            ax.set_title(l)
            ax.set_xlabel("mean")
        axes[0][0].set_ylabel("std")
    else:
        fig, ax = plt.subplots(figsize=(5.5, 4.5))
        for l in labels:
            m, s = points([r for r in rows if r.label == l])
            ax.scatter(m, s, s=8, color=colors[l], label=l, alpha=0.7)
        ax.set_xlabel("mean")
        ax.set_ylabel("std")
        if labels:
            ax.legend(fontsize="small")
    fig.suptitle(title or ("Class scatter" if per_class else "Samples scatter"))
    fig.tight_layout()
    return fig


def render_scatter(stats_csv, out, per_class: bool = False, fmt: str | None = None,
                   title: str | None = None) -> Path:
    return _save(scatter_figure(stats_csv, per_class, title=title), out, fmt)
