"""Matplotlib figures written straight to files.

SVG output is byte-stable for identical input: the hash salt is pinned and
the date metadata is dropped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "easvo",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
}

ANGLE_NAMES = ("roll", "pitch", "yaw")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if path.suffix == ".svg" else {}
    if path.suffix == ".png":
        meta = {"Software": None}
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def write_svg_plot(series, path, title=None):
    """Euler-angle traces of an estimate against ground truth, one panel per angle.

    ``series`` holds ``t`` (n,), ``estimate`` (n, 3) and optionally
    ``ground_truth`` (n, 3), angles in radians.
    """
    t = np.asarray(series["t"], dtype=float)
    est = np.asarray(series["estimate"], dtype=float).reshape(-1, 3)
    gt = series.get("ground_truth")
    if len(t) == 0:
        raise ValueError("nothing to plot")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(6.0, 5.0), sharex=True)
        for k, ax in enumerate(axes):
            if gt is not None:
                ax.plot(t, np.degrees(np.asarray(gt)[:, k]), color="0.2", ls="--", label="ground truth")
            ax.plot(t, np.degrees(est[:, k]), color="tab:red", label="estimate")
            ax.set_ylabel(f"{ANGLE_NAMES[k]} [deg]")
        axes[-1].set_xlabel("t [s]")
        axes[0].legend(loc="upper left", frameon=False, ncol=2)
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
        _save(fig, path)


def write_source_gallery(images, path, ncols=3):
    """Grid of grey images keyed by caption, e.g. one frame per input source."""
    names = list(images)
    if not names:
        raise ValueError("no images")
    nrows = -(-len(names) // ncols)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(2.4 * ncols, 2.0 * nrows), squeeze=False)
        for ax in axes.ravel():
            ax.axis("off")
        for ax, name in zip(axes.ravel(), names):
            ax.imshow(np.asarray(images[name]), cmap="gray", vmin=0, vmax=255, interpolation="nearest")
            ax.set_title(name)
        fig.tight_layout()
        _save(fig, path)


def write_results_bars(rows, path):
    """Average APE and NC per source as two bar panels (``rows``: dicts)."""
    rows = [r for r in rows if r.get("average_ape") is not None]
    if not rows:
        raise ValueError("no results to plot")
    names = [r["source"] for r in rows]
    x = np.arange(len(names))
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.0, 2.6))
        a1.bar(x, [r["average_nc"] for r in rows], color="0.5")
        a1.set_ylabel("average NC")
        a2.bar(x, [r["average_ape"] for r in rows], color="tab:red")
        a2.set_ylabel("average APE [rad]")
        for ax in (a1, a2):
            ax.set_xticks(x, names, rotation=30)
        fig.tight_layout()
        _save(fig, path)
