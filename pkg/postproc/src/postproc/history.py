"""Reader for the optimizer's history CSVs.

One row per outer iteration. The fixed leading columns are followed by one
``lambda<k>`` column per constraint, in constraint order.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

BASE_COLUMNS = ("iter", "J", "L", "ctrn_err", "t_end", "steps", "Btt", "wall_ms")


@dataclass(frozen=True)
class HistoryFrame:
    """Column-oriented view of one history file."""

    columns: dict

    def __len__(self) -> int:
        return len(self.columns["iter"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def multiplier_names(self) -> tuple:
        return tuple(n for n in self.columns if n.startswith("lambda"))


def read_history(path) -> HistoryFrame:
    """Parse a history CSV, rejecting anything that strays from the layout."""
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    rows = [row for row in rows if row]
    if not rows:
        raise FormatError(f"{path}: empty file, expected a history header")
    header = tuple(rows[0])
    if header[: len(BASE_COLUMNS)] != BASE_COLUMNS:
        raise FormatError(
            f"{path}: header starts with {','.join(header[: len(BASE_COLUMNS)])!r}, "
            f"expected {','.join(BASE_COLUMNS)!r}"
        )
    extras = header[len(BASE_COLUMNS) :]
    if extras != tuple(f"lambda{k}" for k in range(len(extras))):
        raise FormatError(f"{path}: unexpected trailing columns {list(extras)}")
    if len(rows) == 1:
        raise FormatError(f"{path}: header but no iterations")
    table = np.empty((len(rows) - 1, len(header)))
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}: line {k} has {len(row)} fields, expected {len(header)}")
        try:
            table[k - 2] = [float(cell) for cell in row]
        except ValueError:
            raise FormatError(f"{path}: line {k} has a non-numeric field") from None
    return HistoryFrame({name: table[:, j].copy() for j, name in enumerate(header)})
