"""Batch figures for the CLI report path.  Everything renders off-screen
(Agg) straight to PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no version or timestamp in the file, so reruns produce identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_history(history, keys, path, title="", ylabel="loss", logy=False) -> Path:
    """One line per ``keys`` entry against the ``epoch`` column."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = [h["epoch"] for h in history]
    for key in keys:
        ax.plot(epochs, [h[key] for h in history], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_regression(true, predicted, path, title="") -> Path:
    true = np.asarray(true, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(true, predicted, s=12, alpha=0.8)
    lo = min(true.min(), predicted.min())
    hi = max(true.max(), predicted.max())
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.set_xlabel("finite-element Q_rob")
    ax.set_ylabel("predicted Q_rob")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_trace(traces, path, best_training=None) -> Path:
    """Predicted objective per iteration for each restart, with the FE
    checkpoints overlaid."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k, trace in enumerate(traces):
        line, = ax.plot(np.arange(len(trace.q)), trace.q, label=f"restart {k} (Q_NN)")
        if trace.checkpoints:
            it, _, fe = zip(*trace.checkpoints)
            ax.plot(it, fe, "o", ms=3, color=line.get_color(), alpha=0.6)
    if best_training is not None:
        ax.axhline(best_training, color="k", ls=":", lw=1, label="best training")
    ax.set_xlabel("iteration")
    ax.set_ylabel("robust compliance")
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_designs(images, path, titles=None, ncols=4) -> Path:
    images = [np.asarray(im) for im in images]
    n = len(images)
    ncols = min(ncols, n)
    nrows = -(-n // ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(1.8 * ncols, 1.8 * nrows), squeeze=False)
    for i, ax in enumerate(axes.flat):
        ax.axis("off")
        if i < n:
            ax.imshow(images[i], cmap="gray_r", vmin=0, vmax=1, interpolation="nearest")
            if titles:
                ax.set_title(titles[i], fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_corpus(rows, path) -> Path:
    """Label against the sampled realization, coloured by split."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for tag in ("train", "test", "excluded"):
        sel = [r for r in rows if r.split == tag]
        if sel:
            ax.scatter([r.xi for r in sel], [r.q_rob for r in sel], s=10, label=tag)
    ax.set_xlabel("xi")
    ax.set_ylabel("Q_rob")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)
