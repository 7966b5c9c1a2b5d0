"""Reader for the legacy ASCII VTK snapshots the optimizer writes.

Only the subset the optimizer emits is understood: an unstructured grid of
linear triangles with nodal SCALARS and VECTORS blocks. Everything else is
rejected with a message naming the offending line.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError


@dataclass(frozen=True)
class VtkGrid:
    """Triangulation plus nodal fields; the z coordinate is dropped."""

    points: np.ndarray
    triangles: np.ndarray
    point_data: dict = field(default_factory=dict)


class _Cursor:
    """Line iterator that reports what it was looking for when input ends."""

    def __init__(self, path, lines):
        self.path = path
        self.lines = lines
        self.k = 0

    def next(self, what: str) -> str:
        while self.k < len(self.lines):
            line = self.lines[self.k].strip()
            self.k += 1
            if line:
                return line
        raise FormatError(f"{self.path}: file ended while reading {what}")

    def peek(self):
        while self.k < len(self.lines):
            line = self.lines[self.k].strip()
            if line:
                return line
            self.k += 1
        return None

    def floats(self, what, count):
        parts = self.next(what).split()
        if len(parts) != count:
            raise FormatError(f"{self.path}: {what} has {len(parts)} values, expected {count}")
        try:
            return [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{self.path}: non-numeric value in {what}") from None


def _header_count(cur, keyword, what):
    parts = cur.next(what).split()
    if len(parts) < 2 or parts[0] != keyword:
        raise FormatError(f"{cur.path}: expected a {keyword} header, got {' '.join(parts)!r}")
    try:
        return int(parts[1]), parts
    except ValueError:
        raise FormatError(f"{cur.path}: bad count in {keyword} header") from None


def read_vtk(path) -> VtkGrid:
    """Parse one snapshot file into points, triangles, and nodal fields."""
    with open(path, encoding="ascii") as handle:
        cur = _Cursor(path, handle.read().splitlines())

    if not cur.next("the version line").startswith("# vtk DataFile"):
        raise FormatError(f"{path}: missing the VTK version line")
    cur.next("the title line")
    if (fmt := cur.next("the format line")) != "ASCII":
        raise FormatError(f"{path}: only ASCII files are supported, got {fmt!r}")
    if (kind := cur.next("the dataset line")) != "DATASET UNSTRUCTURED_GRID":
        raise FormatError(f"{path}: expected DATASET UNSTRUCTURED_GRID, got {kind!r}")

    npts, _ = _header_count(cur, "POINTS", "the POINTS header")
    points = np.empty((npts, 2))
    for i in range(npts):
        points[i] = cur.floats(f"point {i}", 3)[:2]

    ncells, cells_header = _header_count(cur, "CELLS", "the CELLS header")
    if len(cells_header) != 3 or cells_header[2] != str(4 * ncells):
        raise FormatError(f"{path}: CELLS size entry must be {4 * ncells}")
    triangles = np.empty((ncells, 3), dtype=int)
    for i in range(ncells):
        parts = cur.next(f"cell {i}").split()
        if len(parts) != 4 or parts[0] != "3":
            raise FormatError(f"{path}: cell {i} is not a triangle entry")
        try:
            triangles[i] = [int(p) for p in parts[1:]]
        except ValueError:
            raise FormatError(f"{path}: non-integer index in cell {i}") from None
    if triangles.size and (triangles.min() < 0 or triangles.max() >= npts):
        raise FormatError(f"{path}: cell indices outside 0..{npts - 1}")

    ntypes, _ = _header_count(cur, "CELL_TYPES", "the CELL_TYPES header")
    if ntypes != ncells:
        raise FormatError(f"{path}: CELL_TYPES count {ntypes} != CELLS count {ncells}")
    for i in range(ntypes):
        if cur.next(f"cell type {i}") != "5":
            raise FormatError(f"{path}: cell {i} is not of triangle type")

    ndata, _ = _header_count(cur, "POINT_DATA", "the POINT_DATA header")
    if ndata != npts:
        raise FormatError(f"{path}: POINT_DATA count {ndata} != point count {npts}")

    point_data = {}
    while (line := cur.peek()) is not None:
        parts = line.split()
        cur.next("a field header")
        if parts[0] == "SCALARS":
            if len(parts) != 4 or parts[3] != "1":
                raise FormatError(f"{path}: unsupported SCALARS header {line!r}")
            if cur.next("the lookup table line") != "LOOKUP_TABLE default":
                raise FormatError(f"{path}: SCALARS {parts[1]} missing its lookup table line")
            values = np.empty(npts)
            for i in range(npts):
                values[i] = cur.floats(f"value {i} of {parts[1]}", 1)[0]
            point_data[parts[1]] = values
        elif parts[0] == "VECTORS":
            if len(parts) != 3:
                raise FormatError(f"{path}: unsupported VECTORS header {line!r}")
            values = np.empty((npts, 2))
            for i in range(npts):
                values[i] = cur.floats(f"value {i} of {parts[1]}", 3)[:2]
            point_data[parts[1]] = values
        else:
            raise FormatError(f"{path}: unexpected block {line!r} in point data")

    return VtkGrid(points, triangles, point_data)
