"""PNG renderings written next to the CSV outputs.

Figures are built on :class:`matplotlib.figure.Figure` with the Agg canvas
directly, so no global pyplot state is touched and files are reproducible.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_METADATA = {"Software": None}
_DPI = 120


def _new(width=5.0, height=3.4):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_METADATA)
    return path


def sd_histogram(hist, path, half_width: float | None = 0.04) -> Path:
    fig, ax = _new()
    edges = np.asarray(hist.bin_edges)
    ax.bar(edges[:-1], hist.relative_frequency(), width=np.diff(edges), align="edge",
           color="0.35", edgecolor="none")
    if half_width:
        for x in (-half_width, half_width):
            ax.axvline(x, color="tab:red", lw=0.8, ls="--")
    ax.set_xlabel("SD (V)")
    ax.set_ylabel("relative frequency")
    return _save(fig, path)


def exceedance(thresholds, fractions, path) -> Path:
    fig, ax = _new()
    ax.plot(np.asarray(thresholds), 100.0 * np.asarray(fractions), color="tab:blue")
    ax.set_xlabel("SD threshold (V)")
    ax.set_ylabel("cells with |SD| >= threshold (%)")
    ax.set_ylim(0, 100)
    return _save(fig, path)


def sup_histogram(hist, path, low: float = 0.09, high: float = 0.91) -> Path:
    fig, ax = _new()
    edges = np.asarray(hist.bin_edges)
    ax.bar(edges[:-1], hist.relative_frequency(), width=np.diff(edges), align="edge",
           color="0.35", edgecolor="none")
    ax.set_yscale("log")
    for x in (low, high):
        ax.axvline(x, color="tab:red", lw=0.8, ls="--")
    ax.set_xlabel("SUP1")
    ax.set_ylabel("relative frequency")
    return _save(fig, path)


def spatial_map(grid, path) -> Path:
    grid = np.asarray(grid, dtype=float)
    fig, ax = _new(4.0, 6.0)
    im = ax.imshow(grid, aspect="auto", cmap="gray", vmin=0.0, vmax=1.0,
                   interpolation="nearest")
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    fig.colorbar(im, ax=ax, label="SUP1")
    return _save(fig, path)


def transfer_curves(sd, sup, curves: dict, path) -> Path:
    """Rank-paired data with fitted curves; ``curves`` maps label -> callable."""
    fig, ax = _new()
    ax.plot(sd, sup, ".", ms=2, color="0.6", label="paired data")
    x = np.linspace(float(np.min(sd)), float(np.max(sd)), 801)
    for label, f in curves.items():
        ax.plot(x, f(x), lw=1.2, label=label)
    ax.set_xlabel("SD (V)")
    ax.set_ylabel("SUP1")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def overlay_histogram(centers, measured, predicted: dict, path) -> Path:
    fig, ax = _new()
    ax.step(centers, measured, where="mid", color="0.2", label="measured")
    for label, freq in predicted.items():
        ax.step(centers, freq, where="mid", label=label)
    ax.set_yscale("log")
    ax.set_xlabel("SUP1")
    ax.set_ylabel("relative frequency")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
