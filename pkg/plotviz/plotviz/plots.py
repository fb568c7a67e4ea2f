"""Figure builders for run artifacts.

All three renderers take files a run already produced and write a PNG.
Layouts are deterministic: fixed figure sizes, sorted labels, stable color
assignment by first appearance.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .pgmio import read_pgm_dir


def _read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"missing CSV: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"empty CSV: {path}")
    return rows


def plot_losses(losses_csv, out_png) -> Path:
    """Loss curves over iterations, with the stage boundary marked."""
    rows = _read_csv(losses_csv)
    iters = [int(r["iter"]) for r in rows]
    loss_d = [float(r["loss_d"]) for r in rows]
    total = [float(r["loss_total"]) for r in rows]
    loss_a = [(int(r["iter"]), float(r["loss_a"])) for r in rows if r["loss_a"] != ""]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(iters, loss_d, label="denoising", color="tab:blue")
    ax.plot(iters, total, label="total", color="tab:gray", alpha=0.6)
    if loss_a:
        ax.plot(*zip(*loss_a), label="alignment", color="tab:orange")
    stage2_rows = [int(r["iter"]) for r in rows if r["stage"] == "2"]
    if stage2_rows:
        ax.axvline(stage2_rows[0], color="black", linestyle="--", linewidth=1, label="stage 2 start")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right")
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def plot_embeddings(embeddings_csv, out_png) -> Path:
    """2-D scatter, one color per set label, one point per CSV row."""
    rows = _read_csv(embeddings_csv)
    labels: list[str] = []
    for r in rows:
        if r["set_label"] not in labels:
            labels.append(r["set_label"])
    cmap = plt.get_cmap("tab10")

    fig, ax = plt.subplots(figsize=(5.5, 5))
    for i, label in enumerate(labels):
        xs = [float(r["x"]) for r in rows if r["set_label"] == label]
        ys = [float(r["y"]) for r in rows if r["set_label"] == label]
        ax.scatter(xs, ys, s=18, color=cmap(i % 10), label=label, alpha=0.8)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend()
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def plot_grid(dirs, out_png) -> Path:
    """Image grid of every PGM in the given directories, ceil(sqrt(N)) columns."""
    images = []
    for d in dirs:
        images.extend(read_pgm_dir(d))
    if not images:
        raise ValueError("no images to draw")
    cols = math.ceil(math.sqrt(len(images)))
    rows_n = math.ceil(len(images) / cols)

    fig, axes = plt.subplots(rows_n, cols, figsize=(1.2 * cols, 1.2 * rows_n), squeeze=False)
    for k, ax in enumerate(axes.flat):
        ax.set_axis_off()
        if k < len(images):
            ax.imshow(images[k], cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    fig.tight_layout(pad=0.2)
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
