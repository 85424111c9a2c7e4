"""Heat-map rendering of a fitted graphon, written as SVG with an embedded raster."""
from __future__ import annotations

import numpy as np

from .graphon import SbsgmModel, evaluate, marginal_g

LOG_EPS = 1e-4
GRID = 400


def render_grid(model: SbsgmModel, n: int = GRID, log_scale: bool = False) -> np.ndarray:
    """``w`` at cell centres ``(i + 0.5) / n``; row i is u, column j is v."""
    g = (np.arange(n) + 0.5) / n
    U, V = np.meshgrid(g, g, indexing="ij")
    W = np.asarray(evaluate(model, U, V))
    return np.log(W + LOG_EPS) if log_scale else W


def _scale_ticks(vmax: float, log_scale: bool):
    """Tick positions (in plotted units) and labels, always including 0 and the maximum."""
    values = np.unique(np.linspace(0.0, vmax, 4))
    labels = [f"{v:.3g}" for v in values]
    pos = np.log(values + LOG_EPS) if log_scale else values
    return pos, labels


def render_svg(model: SbsgmModel, path, positions=None, log_scale: bool = False, n: int = GRID,
               cmap: str = "viridis") -> np.ndarray:
    """Write heat map, block boundaries, colour scale and marginal ``g`` to ``path``.

    ``positions`` (optional) are drawn as a rug under the marginal panel.
    Returns the plotted grid so callers can inspect it.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = render_grid(model, n, log_scale)
    vmax = float(np.max(model.gamma))
    lo = np.log(LOG_EPS) if log_scale else 0.0
    hi = np.log(vmax + LOG_EPS) if log_scale else vmax
    if hi <= lo:
        hi = lo + 1e-9

    with matplotlib.rc_context({"svg.hashsalt": "sbsgm", "svg.fonttype": "none", "svg.image_inline": True}):
        fig = plt.figure(figsize=(6.0, 7.2))
        ax = fig.add_axes([0.1, 0.32, 0.7, 0.62])
        cax = fig.add_axes([0.84, 0.32, 0.03, 0.62])
        mx = fig.add_axes([0.1, 0.07, 0.7, 0.18])

        im = ax.imshow(grid, origin="upper", extent=(0, 1, 1, 0), cmap=cmap, vmin=lo, vmax=hi,
                       interpolation="nearest")
        for z in model.zeta[1:-1]:
            ax.axhline(z, color="white", lw=1.0)
            ax.axvline(z, color="white", lw=1.0)
        ax.set_xlabel("v")
        ax.set_ylabel("u")
        cb = fig.colorbar(im, cax=cax)
        ticks, labels = _scale_ticks(vmax, log_scale)
        cb.set_ticks(ticks)
        cb.set_ticklabels(labels)
        cb.set_label("w(u, v)" + (" (log scale)" if log_scale else ""))

        g = (np.arange(n) + 0.5) / n
        mx.plot(g, marginal_g(model, g), color="k", lw=1.2)
        for z in model.zeta[1:-1]:
            mx.axvline(z, color="grey", lw=0.8, ls="--")
        if positions is not None:
            mx.plot(np.asarray(positions, dtype=float), np.zeros(len(positions)), "|", color="tab:red",
                    ms=6, alpha=0.4)
        mx.set_xlim(0, 1)
        mx.set_ylim(bottom=0)
        mx.set_xlabel("u")
        mx.set_ylabel("g(u)")

        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return grid
