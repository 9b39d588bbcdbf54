"""Report figures rendered to PNG files.

Uses the object-oriented matplotlib API on an Agg canvas, so no display or
global pyplot state is involved.  PNGs are written without the software tag
and with fixed rcParams, which keeps reruns byte-identical.
"""

from contextlib import contextmanager

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "path.simplify": False,
}
CLASS_COLORS = {"authentic": "#3b75af", "fake": "#c4453c"}
DPI = 100


@contextmanager
def _style():
    with matplotlib.rc_context(STYLE):
        yield


def _new(width=4.0, height=3.2):
    fig = Figure(figsize=(width, height), dpi=DPI)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=DPI, metadata={"Software": None})
    return path


def plot_roc(curve, path, label=None):
    with _style():
        fig, ax = _new()
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        ax.step(curve.fpr, curve.tpr, where="post", color="k", lw=1.2,
                label=f"{label or 'model'} (AUC {curve.auc:.3f})")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_class_histogram(edges, counts_by_class, path, xlabel="cosine distance"):
    """Side-by-side bars per class over shared bin edges."""
    with _style():
        fig, ax = _new()
        edges = np.asarray(edges, dtype=float)
        width = np.diff(edges)
        names = sorted(counts_by_class)
        for k, name in enumerate(names):
            w = width / len(names)
            ax.bar(edges[:-1] + k * w, counts_by_class[name], width=w, align="edge",
                   color=CLASS_COLORS.get(name, "0.5"), label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("frames")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_contingency(contingency, path):
    """2x2 heat map of flip proportions, inner set by rows."""
    with _style():
        fig, ax = _new(3.4, 3.0)
        p = contingency.proportions()
        grid = np.array([[p["both"], p["inner_only"]], [p["all_only"], p["neither"]]])
        ax.imshow(grid, vmin=0, vmax=1, cmap="Greys")
        for (i, j), v in np.ndenumerate(grid):
            ax.text(j, i, f"{v:.2f}", ha="center", va="center",
                    color="w" if v > 0.5 else "k")
        ax.set_xticks([0, 1], ["flipped", "correct"])
        ax.set_yticks([0, 1], ["flipped", "correct"])
        ax.set_xlabel("all landmarks")
        ax.set_ylabel("inner landmarks")
        return _save(fig, path)
