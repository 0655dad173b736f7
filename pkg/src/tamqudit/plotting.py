"""PNG figures for counts images, density matrices and Wigner slices.

Everything renders through the Agg backend in-process. Counts use a
sequential map; Wigner values use a diverging map centered on zero.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import TwoSlopeNorm  # noqa: E402

COUNTS_CMAP = "viridis"
WIGNER_CMAP = "RdBu_r"
# No software/version stamp, so identical inputs give identical bytes.
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def save_counts_png(counts: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(3.2, 3.0))
    im = ax.imshow(counts, cmap=COUNTS_CMAP, origin="lower", interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    _save(fig, path)


def _diverging_norm(values):
    m = float(np.max(np.abs(values))) or 1.0
    return TwoSlopeNorm(vmin=-m, vcenter=0.0, vmax=m)


def save_slice_png(sl, path) -> None:
    first, second = sl.pair.split("-")
    fig, ax = plt.subplots(figsize=(3.4, 3.0))
    ext = [-sl.extent, sl.extent, -sl.extent, sl.extent]
    # values[i, j]: first coordinate along i, so it goes on the horizontal axis after .T
    im = ax.imshow(sl.values.T, cmap=WIGNER_CMAP, norm=_diverging_norm(sl.values), origin="lower", extent=ext)
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_xlabel(first)
    ax.set_ylabel(second)
    ax.set_title(sl.pair, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def save_slices_figure(slices, path, title: str = "") -> None:
    fig, axes = plt.subplots(2, 3, figsize=(9, 5.6))
    for ax, sl in zip(axes.ravel(), slices):
        ext = [-sl.extent, sl.extent, -sl.extent, sl.extent]
        im = ax.imshow(sl.values.T, cmap=WIGNER_CMAP, norm=_diverging_norm(sl.values), origin="lower", extent=ext)
        first, second = sl.pair.split("-")
        ax.set_xlabel(first)
        ax.set_ylabel(second)
        fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def save_dataset_figure(ds, path) -> None:
    """Grid of counts images: rows are inputs, columns analyzers."""
    n_in, n_an = len(ds.inputs), len(ds.analyzers)
    fig, axes = plt.subplots(n_in, n_an, figsize=(2.2 * n_an, 2.2 * n_in), squeeze=False)
    for i, inp in enumerate(ds.inputs):
        for j, ana in enumerate(ds.analyzers):
            ax = axes[i][j]
            ax.imshow(ds.images[i][j].counts, cmap=COUNTS_CMAP, origin="lower", interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(ana, fontsize=9)
            if j == 0:
                ax.set_ylabel(inp, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def save_density_figure(results, path, labels=None) -> None:
    """Real and imaginary parts of each reconstructed density matrix."""
    n = len(results)
    fig, axes = plt.subplots(2, n, figsize=(2.6 * n, 5.0), squeeze=False)
    for k, res in enumerate(results):
        rho = res.rho.entries
        for row, part in enumerate((rho.real, rho.imag)):
            ax = axes[row][k]
            ax.imshow(part, cmap=WIGNER_CMAP, vmin=-0.5, vmax=0.5)
            for (a, b), v in np.ndenumerate(part):
                ax.text(b, a, f"{v:.2f}", ha="center", va="center", fontsize=7)
            ax.set_xticks(range(rho.shape[0]), [str(i + 1) for i in range(rho.shape[0])])
            ax.set_yticks(range(rho.shape[0]), [str(i + 1) for i in range(rho.shape[0])])
        name = labels[k] if labels else res.input_pol
        axes[0][k].set_title(f"{name}  Re", fontsize=9)
        axes[1][k].set_title(f"{name}  Im", fontsize=9)
    fig.tight_layout()
    _save(fig, path)
