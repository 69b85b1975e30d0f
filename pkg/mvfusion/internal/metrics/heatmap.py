"""
Similarity heatmap export. Values in [-1, 1] map onto a blue-white-red ramp:
-1 is (0, 0, 255), 0 is white and 1 is (255, 0, 0).
"""
import numpy as np
from matplotlib import figure
from matplotlib.backends.backend_agg import FigureCanvasAgg as FigureCanvas

from mvfusion.errors import InvalidMatrix


def color_ramp(values):
    """uint8 RGB array of shape values.shape + (3,)."""
    t = (np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0) + 1.0) / 2.0
    rgb = np.empty(t.shape + (3,), dtype=np.float64)
    lower = t < 0.5
    # blue -> white
    rgb[lower, 0] = rgb[lower, 1] = 2.0 * t[lower]
    rgb[lower, 2] = 1.0
    # white -> red
    rgb[~lower, 0] = 1.0
    rgb[~lower, 1] = rgb[~lower, 2] = 2.0 * (1.0 - t[~lower])
    return np.rint(255.0 * rgb).astype(np.uint8)


def pixmap_bytes(values):
    values = np.asarray(values)
    if values.ndim != 2:
        raise InvalidMatrix("heatmap needs a 2-D matrix")
    rows, cols = values.shape
    header = "P6\n{} {}\n255\n".format(cols, rows).encode("ascii")
    return header + color_ramp(values).tobytes(order="C")


def export_heatmap(sim, path):
    """Writes `<path>.ppm` and `<path>.txt`; returns both paths."""
    ppm_path, txt_path = "{}.ppm".format(path), "{}.txt".format(path)
    with open(ppm_path, "wb") as f:
        f.write(pixmap_bytes(sim.values))
    np.savetxt(txt_path, sim.values, delimiter=",", fmt="%.17g")
    return ppm_path, txt_path


def load_heatmap_text(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def render_png(sim, path, title=None, dpi=150):
    fig = figure.Figure(figsize=(5, 5))
    FigureCanvas(fig)
    ax = fig.add_subplot(1, 1, 1)
    image = ax.imshow(sim.values, cmap="bwr", vmin=-1.0, vmax=1.0, interpolation="nearest")
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)

    # class boundaries
    edges = np.flatnonzero(np.diff(sim.labels)) + 0.5
    for edge in edges:
        ax.axhline(edge, color="black", linewidth=0.5)
        ax.axvline(edge, color="black", linewidth=0.5)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=dpi, bbox_inches="tight")
    return path
