"""Figure builders for the optimizer's artifacts.

Figures are assembled directly on matplotlib Figure objects, with a fixed
size and resolution, so rendering the same input twice produces identical
files. No pyplot state is touched.
"""

import numpy as np
from matplotlib.collections import LineCollection, PolyCollection
from matplotlib.figure import Figure

from .contours import boundary_edges, subzero_polygons
from .errors import FormatError
from .history import HistoryFrame, read_history
from .vtkread import VtkGrid, read_vtk

FIGSIZE = (8.0, 5.0)
DPI = 120

# part 1 is where the design is clamped, part 2 is where it is driven
TAG_COLORS = {1: "tab:red", 2: "tab:blue", 3: "tab:green", 4: "tab:orange"}
UNTAGGED_COLOR = "0.55"


def history_figure(frame: HistoryFrame) -> Figure:
    """Cost curves on top, constraint error on a log scale below."""
    fig = Figure(figsize=FIGSIZE, dpi=DPI)
    top, bottom = fig.subplots(2, 1, sharex=True, height_ratios=[2, 1])
    it = frame["iter"]
    top.plot(it, frame["J"], color="tab:blue", label="cost J")
    top.plot(it, frame["L"], color="tab:orange", linestyle="--", label="lagrangian L")
    top.set_ylabel("cost")
    top.legend(loc="upper right")
    top.grid(True, alpha=0.3)
    err = np.where(frame["ctrn_err"] > 0.0, frame["ctrn_err"], np.nan)
    bottom.plot(it, err, color="tab:red")
    bottom.set_yscale("log")
    bottom.set_ylabel("constraint error")
    bottom.set_xlabel("iteration")
    bottom.grid(True, alpha=0.3)
    fig.subplots_adjust(hspace=0.12)
    return fig


def domain_figure(grid: VtkGrid) -> Figure:
    """Subzero region filled black, outer boundary drawn, tagged parts colored."""
    if "phi" not in grid.point_data:
        raise FormatError("no 'phi' scalar field in the file")
    phi = grid.point_data["phi"]
    if phi.ndim != 1:
        raise FormatError("'phi' must be a scalar field")

    fig = Figure(figsize=FIGSIZE, dpi=DPI)
    ax = fig.subplots()

    polys = [p for p in subzero_polygons(grid.points, grid.triangles, phi) if len(p) >= 3]
    if polys:
        # the thin matching edge seals antialiasing seams between triangles
        ax.add_collection(
            PolyCollection(polys, facecolors="black", edgecolors="black", linewidths=0.3)
        )

    edges = boundary_edges(grid.triangles)
    tags = grid.point_data.get("boundary_tag")
    segments = grid.points[edges]
    colors = []
    widths = []
    for a, b in edges:
        tag = 0
        if tags is not None and tags[a] == tags[b]:
            tag = int(tags[a])
        colors.append(TAG_COLORS.get(tag, UNTAGGED_COLOR) if tag > 0 else UNTAGGED_COLOR)
        widths.append(2.5 if tag > 0 else 0.8)
    if len(segments):
        ax.add_collection(LineCollection(segments, colors=colors, linewidths=widths))

    lo = grid.points.min(axis=0)
    hi = grid.points.max(axis=0)
    pad = 0.03 * max(hi - lo)
    ax.set_xlim(lo[0] - pad, hi[0] + pad)
    ax.set_ylim(lo[1] - pad, hi[1] + pad)
    ax.set_aspect("equal")
    ax.set_axis_off()
    return fig


def plot_history(csv_path, png_path) -> None:
    """Render one history CSV to a PNG; bad input raises before any output."""
    fig = history_figure(read_history(csv_path))
    fig.savefig(png_path, dpi=DPI)


def plot_domain(vtk_path, png_path) -> None:
    """Render the material region of one VTK snapshot to a PNG."""
    fig = domain_figure(read_vtk(vtk_path))
    fig.savefig(png_path, dpi=DPI)
