"""Heatmap exports and report figures.

Raw exports (dense CSV, 8-bit PGM of ``log(1 + count)``) keep the matrix's
row and column order. Figures are rendered to PNG with matplotlib's Agg
backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402


def log_intensity(dense):
    """``log(1 + count)`` scaled to integers 0..255 (0 everywhere for an all-zero matrix)."""
    v = np.log1p(np.asarray(dense, dtype=float))
    top = v.max() if v.size else 0.0
    if top <= 0:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.rint(255.0 * v / top).astype(np.uint8)


def write_pgm(dense, path):
    """Binary (P5) 8-bit PGM, one pixel per cell; width = columns, height = rows."""
    img = log_intensity(dense)
    h, w = img.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path):
    """Read a binary PGM written by :func:`write_pgm`."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def plot_heatmap(dense, path, biclusters=(), truth=(), title=None):
    """Heatmap of ``log(1 + count)`` with estimated (solid) and true (dashed) outlines.

    Outlines are drawn around each bicluster's bounding box, which is exact
    for contiguous blocks.
    """
    dense = np.asarray(dense)
    fig, ax = plt.subplots(figsize=(5, 5 * max(dense.shape[0], 1) / max(dense.shape[1], 1)
                                    if dense.shape[1] else 5))
    ax.imshow(np.log1p(dense), cmap="Greys", interpolation="nearest", aspect="auto")
    for group, style in ((truth, dict(ls="--", ec="tab:blue")),
                         (biclusters, dict(ls="-", ec="tab:red"))):
        for b in group:
            if not b.rows or not b.cols:
                continue
            r0, c0 = min(b.rows), min(b.cols)
            ax.add_patch(Rectangle((c0 - 0.5, r0 - 0.5), max(b.cols) - c0 + 1,
                                   max(b.rows) - r0 + 1, fill=False, lw=1.2, **style))
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_k_traces(traces, path):
    """Cluster count per iteration; ``traces`` maps a label to a K sequence."""
    fig, ax = plt.subplots(figsize=(6, 3))
    for label, ks in traces.items():
        ax.step(np.arange(len(ks)), ks, where="post", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("clusters")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_benchmark(rows, path):
    """Mean Jaccard per case with one standard deviation error bars."""
    fig, ax = plt.subplots(figsize=(5, 3))
    labels = [f"{r['case']}\n{r['method']}" for r in rows]
    ax.bar(range(len(rows)), [r["mean_jaccard"] for r in rows],
           yerr=[r["sd_jaccard"] for r in rows], color="tab:gray", capsize=3)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("Jaccard")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
