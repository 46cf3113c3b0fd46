"""Static figure rendering for reports (PNG files next to the CSV/JSON outputs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
SET_ORDER = ("many", "medium", "few")


def _figure(width=4.5, ratio=0.62, **kw):
    with plt.rc_context(RC):
        return plt.subplots(figsize=(width, width * ratio), **kw)


def _save(fig, path):
    with plt.rc_context(RC):
        fig.savefig(path)
    plt.close(fig)


def plot_curve(curve, path):
    fig, ax = _figure()
    epochs = [r["epoch"] for r in curve]
    ax.plot(epochs, [r["train_loss"] for r in curve], color="0.2", lw=1.2, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    evals = [(r["epoch"], r["top1"]) for r in curve if r["top1"] is not None]
    if evals:
        ax2 = ax.twinx()
        ax2.plot(*zip(*evals), "o-", color="tab:red", ms=3, lw=1, label="top-1")
        ax2.set_ylabel("eval top-1 (%)")
    _save(fig, path)


def plot_per_set(runs: dict, path):
    """Grouped bars of Many/Medium/Few accuracy; ``runs`` maps run name -> per_set dict."""
    fig, ax = _figure()
    names = list(runs)
    width = 0.8 / max(len(names), 1)
    x = np.arange(len(SET_ORDER))
    for i, name in enumerate(names):
        vals = [runs[name].get(s) for s in SET_ORDER]
        ax.bar(x + i * width, [np.nan if v is None else v for v in vals], width, label=name)
    ax.set_xticks(x + width * (len(names) - 1) / 2, [s.capitalize() for s in SET_ORDER])
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    if len(names) > 1:
        ax.legend(frameon=False)
    _save(fig, path)


def plot_ablation(rows, path):
    """``rows``: list of (config name, mean top-1, std top-1)."""
    fig, ax = _figure(width=3.5)
    names = [r[0] for r in rows]
    ax.bar(names, [r[1] for r in rows], yerr=[r[2] for r in rows], color="0.55", capsize=3)
    lo = min(r[1] - r[2] for r in rows)
    ax.set_ylim(max(0.0, lo - 5), None)
    ax.set_ylabel("top-1 (%)")
    _save(fig, path)


def plot_tsne(coords, labels, path, title=None):
    fig, ax = _figure(width=4.5, ratio=1.0)
    labels = np.asarray(labels)
    groups = list(dict.fromkeys(labels.tolist()))
    cmap = plt.get_cmap("tab20", max(len(groups), 1))
    for i, g in enumerate(groups):
        m = labels == g
        ax.scatter(coords[m, 0], coords[m, 1], s=6, color=cmap(i), label=g, lw=0)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    if len(groups) <= 20:
        ax.legend(frameon=False, markerscale=2, loc="center left", bbox_to_anchor=(1, 0.5))
    _save(fig, path)


def plot_cosine_hist(values, path, label="cos(direct, difference)"):
    fig, ax = _figure()
    vals = [v for v in values if v is not None]
    ax.hist(vals, bins=30, range=(-1, 1), color="0.4")
    ax.set_xlabel(label)
    ax.set_ylabel("count")
    _save(fig, path)
