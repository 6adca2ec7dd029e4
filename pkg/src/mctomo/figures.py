"""Figure rendering for the experiment pipeline.

Two figure kinds cover the whole report: semilog convergence curves
(measured trajectories plus predicted-rate guide lines) and grayscale
image panels (truth, converged references, epoch snapshots).  All
rendering targets files through the Agg backend so the pipeline runs
headless.
"""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first
import numpy as np

__all__ = ["save_convergence_plot", "save_panel_grid"]


def _ensure_parent(path: str | os.PathLike) -> str:
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def save_convergence_plot(
    path: str | os.PathLike,
    curves: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    guides: Sequence[tuple[str, float, float, float]] = (),
    title: str = "convergence",
    ylabel: str = "squared distance to saddle point",
) -> str:
    """Render semilog convergence curves and optional rate guide lines.

    ``curves`` holds ``(label, epochs, values)`` triples; nonpositive
    values cannot sit on a log axis and are dropped per curve.
    ``guides`` holds ``(label, rate, anchor_epoch, anchor_value)`` and
    draws the dashed geometric line ``anchor_value * rate**(e - e0)``
    over the epoch span of the data.  Returns the written path.
    """
    if not curves:
        raise ValueError("at least one curve required")
    path = _ensure_parent(path)
    fig, ax = plt.subplots(figsize=(7.0, 4.6), constrained_layout=True)
    span_lo, span_hi = np.inf, -np.inf
    for label, epochs, values in curves:
        epochs = np.asarray(epochs, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        keep = np.isfinite(values) & (values > 0)
        if not keep.any():
            continue
        span_lo = min(span_lo, float(epochs[keep].min()))
        span_hi = max(span_hi, float(epochs[keep].max()))
        ax.semilogy(epochs[keep], values[keep], linewidth=1.4, label=label)
    if not np.isfinite(span_lo):
        raise ValueError("no positive finite values to plot")
    for label, rate, anchor_epoch, anchor_value in guides:
        if not (rate > 0 and anchor_value > 0):
            continue
        es = np.linspace(span_lo, span_hi, 200)
        ax.semilogy(
            es,
            anchor_value * rate ** (es - anchor_epoch),
            linestyle="--",
            linewidth=1.0,
            alpha=0.8,
            label=label,
        )
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.25)
    ax.legend(fontsize=8, ncol=2)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_panel_grid(
    path: str | os.PathLike,
    panels: Sequence[tuple[str, np.ndarray]],
    suptitle: str | None = None,
    columns: int = 3,
) -> str:
    """Render labeled grayscale image panels on a shared intensity scale.

    The shared scale keeps reconstructions visually comparable; a
    panel full of one constant value falls back to a unit window
    around it.  Returns the written path.
    """
    if not panels:
        raise ValueError("at least one panel required")
    if columns < 1:
        raise ValueError("columns must be >= 1")
    path = _ensure_parent(path)
    images = [np.asarray(img, dtype=np.float64) for _, img in panels]
    vmin = min(float(img.min()) for img in images)
    vmax = max(float(img.max()) for img in images)
    if vmax <= vmin:
        vmin, vmax = vmin - 0.5, vmin + 0.5
    ncols = min(columns, len(panels))
    nrows = -(-len(panels) // ncols)
    fig, axes = plt.subplots(
        nrows,
        ncols,
        figsize=(3.0 * ncols, 3.3 * nrows),
        constrained_layout=True,
        squeeze=False,
    )
    for ax in axes.ravel():
        ax.set_axis_off()
    for ax, (label, _), img in zip(axes.ravel(), panels, images):
        ax.imshow(img, cmap="gray", vmin=vmin, vmax=vmax, interpolation="nearest")
        ax.set_title(label, fontsize=9)
    if suptitle:
        fig.suptitle(suptitle)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
