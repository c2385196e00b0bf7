"""Figure writers for CLI reports (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["line_band", "histograms", "surface_error", "scatter_xy"]

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def line_band(path, x, curves: dict, band=None, xlabel="", ylabel="", title="") -> Path:
    """Curves against x with an optional shaded (lo, hi) band."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if band is not None:
        ax.fill_between(x, band[0], band[1], color="0.8", label="95% band")
    for label, y in curves.items():
        ax.plot(x, y, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def histograms(path, samples: dict, bins=40, xlabel="", title="") -> Path:
    """Overlaid density histograms on common bins."""
    fig, ax = plt.subplots(figsize=(6, 4))
    allv = np.concatenate([np.asarray(v, dtype=float).ravel() for v in samples.values()])
    edges = np.histogram_bin_edges(allv[np.isfinite(allv)], bins=bins)
    for label, v in samples.items():
        ax.hist(np.asarray(v)[np.isfinite(v)], bins=edges, density=True, histtype="step", label=label)
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def surface_error(path, x, y, exact, approx, xlabel="", ylabel="") -> Path:
    """Exact surface and surrogate error side by side on a grid."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    c0 = axes[0].contourf(x, y, exact, levels=20)
    fig.colorbar(c0, ax=axes[0])
    axes[0].set_title("exact")
    c1 = axes[1].contourf(x, y, approx - exact, levels=20, cmap="RdBu_r")
    fig.colorbar(c1, ax=axes[1])
    axes[1].set_title("surrogate - exact")
    for ax in axes:
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save(fig, path)


def scatter_xy(path, x, ys: dict, xlabel="", ylabel="", title="") -> Path:
    """Scatter of one or more series against x."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in ys.items():
        ax.scatter(x, y, s=8, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
