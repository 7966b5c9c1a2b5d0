"""Plotting companion for the lsopt optimizer.

Consumes the two artifact kinds a run leaves behind, history CSVs and legacy
ASCII VTK snapshots, and renders convergence curves and filled domain images.
"""

from .contours import boundary_edges, subzero_polygons, zero_segments
from .errors import FormatError
from .history import HistoryFrame, read_history
from .plots import domain_figure, history_figure, plot_domain, plot_history
from .vtkread import VtkGrid, read_vtk

__all__ = [
    "FormatError",
    "HistoryFrame",
    "VtkGrid",
    "boundary_edges",
    "domain_figure",
    "history_figure",
    "plot_domain",
    "plot_history",
    "read_history",
    "read_vtk",
    "subzero_polygons",
    "zero_segments",
]
