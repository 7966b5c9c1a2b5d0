"""Serialization of run artifacts: history CSV and legacy ASCII VTK.

Both writers are pure functions of their inputs (floats rendered with
``repr`` for exact round-trips), so identical runs produce identical bytes
except for measured wall times.
"""

from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "HISTORY_BASE_HEADER",
    "history_header",
    "history_row",
    "write_history_csv",
    "HistoryWriter",
    "write_vtk",
]

HISTORY_BASE_HEADER = "iter,J,L,ctrn_err,t_end,steps,Btt,wall_ms"


def _fmt(x) -> str:
    return repr(float(x))


def history_header(nc: int) -> str:
    return HISTORY_BASE_HEADER + "".join(f",lambda{i}" for i in range(nc))


def history_row(record) -> str:
    cells = [
        str(record.iteration),
        _fmt(record.cost),
        _fmt(record.lagrangian),
        _fmt(record.ctrn_err),
        _fmt(record.t_end),
        str(record.steps),
        _fmt(record.form_value),
        _fmt(record.wall_ms),
    ]
    cells.extend(_fmt(v) for v in record.multipliers)
    return ",".join(cells)


def write_history_csv(path, history) -> None:
    nc = history[0].multipliers.size if history else 0
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(history_header(nc) + "\n")
        for record in history:
            fh.write(history_row(record) + "\n")


class HistoryWriter:
    """Streaming CSV log: one row per appended record, flushed immediately.

    The header is written with the first record (its multiplier count fixes
    the column set), so partial histories survive an aborted run.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._fh = None

    def append(self, record) -> None:
        if self._fh is None:
            self._fh = open(self.path, "w", encoding="ascii", newline="\n")
            self._fh.write(history_header(record.multipliers.size) + "\n")
        self._fh.write(history_row(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_vtk(mesh, fields, path) -> None:
    """Write mesh plus named nodal fields as an ASCII legacy VTK file.

    ``fields`` maps names to FemFields on this mesh; scalars become SCALARS
    blocks, vector fields VECTORS blocks with a zero third component. Byte
    output is deterministic for fixed input.
    """
    lines = [
        "# vtk DataFile Version 3.0",
        "lsopt fields",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(mesh.vertices)} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0.0")
    nt = len(mesh.triangles)
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    lines.append(f"POINT_DATA {len(mesh.vertices)}")
    for name, fld in fields.items():
        if not name or any(ch.isspace() for ch in name):
            raise ConfigError(f"VTK field names must be nonempty without spaces: {name!r}")
        if fld.space.mesh is not mesh:
            raise ConfigError(f"field {name!r} lives on a different mesh")
        if fld.space.value_rank == 1:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in fld.values)
        else:
            lines.append(f"VECTORS {name} double")
            for vx, vy in np.asarray(fld.values).reshape(-1, 2):
                lines.append(f"{_fmt(vx)} {_fmt(vy)} 0.0")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
