"""Report figures written to files (non-interactive matplotlib backend)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .mapping import CLASS_NAMES  # noqa: E402

CLASS_COLORS = ("#2b83ba", "#abdda4", "#ffffbf", "#fdae61", "#d7191c")
DPI = 110


def _save(fig, path):
    fig.tight_layout()
    # Fixed metadata keeps reruns byte-identical.
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)


def roc_curves(curves, path, title="ROC"):
    """``curves``: mapping label -> RocCurve."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for label, c in curves.items():
        ax.plot(c.fpr, c.tpr, label=f"{label} (AUC={c.auc:.3f})")
    ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def training_curves(report, path):
    epochs = np.arange(1, len(report.train_loss) + 1)
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.2))
    a.plot(epochs, report.train_loss, label="train")
    a.plot(epochs, report.val_loss, label="validation")
    if report.best_epoch >= 0:
        a.axvline(report.best_epoch + 1, color="0.5", ls=":", lw=0.8)
    a.set_xlabel("epoch")
    a.set_ylabel("BCE loss")
    a.legend(fontsize=8)
    b.plot(epochs, report.val_accuracy)
    b.set_xlabel("epoch")
    b.set_ylabel("validation accuracy")
    _save(fig, path)


def susceptibility_map(smap, path, points=None):
    classes = np.ma.masked_where(smap.classes == 0, smap.classes)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(classes, cmap=ListedColormap(CLASS_COLORS), vmin=0.5, vmax=5.5,
                   interpolation="nearest")
    if points:
        fl = [(p.col, p.row) for p in points if p.label == 1]
        if fl:
            xs, ys = zip(*fl)
            ax.scatter(xs, ys, s=4, c="k", marker=".", label="flood events")
            ax.legend(loc="lower right", fontsize=7)
    bar = fig.colorbar(im, ax=ax, ticks=range(1, 6), shrink=0.8)
    bar.ax.set_yticklabels(CLASS_NAMES)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.set_title("Flash flood susceptibility")
    _save(fig, path)


def class_stats(smap, path):
    x = np.arange(len(smap.class_area_pct))
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.bar(x - 0.2, smap.class_area_pct, 0.4, label="area (%)")
    ax.bar(x + 0.2, smap.event_pct, 0.4, label="flood events (%)")
    ax.set_xticks(x, CLASS_NAMES[:len(x)], fontsize=8)
    ax.legend(fontsize=8)
    _save(fig, path)


def jackknife_bars(report, path):
    entries = [e for e in sorted(report.entries, key=lambda e: e["rank"]) if e["prd"] is not None]
    fig, ax = plt.subplots(figsize=(5.5, 0.28 * len(entries) + 1.2))
    names = [e["factor"] for e in entries][::-1]
    ax.barh(names, [e["prd"] for e in entries][::-1], color="#4575b4")
    ax.set_xlabel("PRD of AUC (%)")
    ax.tick_params(axis="y", labelsize=8)
    _save(fig, path)


def correlation_heatmap(report, path):
    n = len(report.names)
    fig, ax = plt.subplots(figsize=(0.38 * n + 2.5, 0.38 * n + 2))
    im = ax.imshow(report.pearson, cmap="RdBu_r", vmin=-1, vmax=1)
    ax.set_xticks(range(n), report.names, rotation=90, fontsize=7)
    ax.set_yticks(range(n), report.names, fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    _save(fig, path)


def bench_chart(rows, path, metric="auc"):
    """Grouped bars of one metric for every (backbone, placement) row."""
    kinds = list(dict.fromkeys(r["kind"] for r in rows))
    placements = list(dict.fromkeys(r["placement"] for r in rows))
    width = 0.8 / max(1, len(placements))
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for j, pl in enumerate(placements):
        vals = [next((r[metric] or 0.0 for r in rows
                      if r["kind"] == k and r["placement"] == pl), 0.0) for k in kinds]
        ax.bar(np.arange(len(kinds)) + j * width, vals, width, label=pl)
    ax.set_xticks(np.arange(len(kinds)) + width * (len(placements) - 1) / 2, kinds)
    ax.set_ylabel(f"test {metric.upper()}")
    ax.legend(fontsize=8, ncol=len(placements))
    _save(fig, path)
