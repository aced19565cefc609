"""Static SVG figure emission for the batch front-end.

Figures are rendered with the non-interactive Agg backend and written with
fixed element-id salting and no date metadata, so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "fermion-monitor"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_OPTS = {"format": "svg", "metadata": {"Date": None}, "bbox_inches": "tight"}


def save_line_plot(path, x, series, xlabel="t", ylabel="", title=""):
    """One panel of labelled lines; ``series`` maps label -> y array."""
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for label, y in series.items():
        ax.plot(x, y, lw=1.4, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_sweep_plot(path, curves, xlabel, ylabel, title=""):
    """Error-bar curves per system size; ``curves`` is a list of
    ``(L, x, y, yerr)``."""
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for L, x, y, yerr in curves:
        ax.errorbar(x, y, yerr=yerr, marker="o", ms=3.5, lw=1.2, capsize=2,
                    label=f"L = {L}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_collapse_plot(path, rows, ylabel, title=""):
    """Rescaled scatter of ``(L, x, x_rescaled, y, sigma)`` rows."""
    rows = list(rows)
    sizes = sorted({r[0] for r in rows})
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for L in sizes:
        pts = [(r[2], r[3], r[4]) for r in rows if r[0] == L]
        xr, y, s = (np.array(v) for v in zip(*pts))
        order = np.argsort(xr)
        ax.errorbar(xr[order], y[order], yerr=s[order], marker="o", ms=3.5,
                    lw=0.8, capsize=2, label=f"L = {L}")
    ax.set_xlabel("rescaled control parameter")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def _ternary_xy(points):
    """Map ``(w, gamma, alpha)`` simplex points into the unit triangle.

    The gamma corner sits at the origin, alpha at (1, 0) and w at the top.
    """
    pts = np.asarray(points, dtype=float)
    x = pts[:, 2] + 0.5 * pts[:, 0]
    y = (np.sqrt(3.0) / 2.0) * pts[:, 0]
    return x, y


def save_ternary_plot(path, points, values, label, title="", discrete=None):
    """Colored scatter over the ``w + gamma + alpha = 1`` simplex.

    ``discrete`` maps value -> legend text for categorical data; otherwise
    a continuous colorbar is drawn.
    """
    x, y = _ternary_xy(points)
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(5.4, 5.0))
    if discrete:
        cmap = plt.get_cmap("viridis", len(discrete))
        keys = sorted(discrete)
        for i, v in enumerate(keys):
            sel = values == v
            ax.scatter(x[sel], y[sel], s=14, color=cmap(i), label=discrete[v])
        ax.legend(frameon=False, fontsize=9, loc="upper right")
    else:
        sc = ax.scatter(x, y, s=14, c=values, cmap="viridis")
        fig.colorbar(sc, ax=ax, label=label, shrink=0.8)
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0], [0.0, 0.0]])
    ax.plot(tri[:, 0], tri[:, 1], color="0.3", lw=1.0)
    for xy, text, off in [
        ((0.0, 0.0), "gamma", (-0.04, -0.05)),
        ((1.0, 0.0), "alpha", (0.01, -0.05)),
        ((0.5, np.sqrt(3.0) / 2.0), "w", (0.0, 0.03)),
    ]:
        ax.annotate(text, xy, xytext=(xy[0] + off[0], xy[1] + off[1]), fontsize=10)
    ax.set_aspect("equal")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
