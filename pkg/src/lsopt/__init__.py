"""Level-set shape optimization of PDE-constrained designs.

Geometry is carried by a nodal level-set field on a structured triangle
mesh; sensitivities are volume-form tensor pairs driving a smoothed descent
velocity; the interface moves by a stabilized transport solve.
"""

from .driver import (
    IterationRecord,
    RunParams,
    adaptive_time,
    run,
    solve_concurrent,
    stopping_check,
)
from .errors import ConfigError, NewtonError, SolverError
from .levelset import (
    InitialLevelSpec,
    LevelSetField,
    initial_level,
    reinitialize,
    transport,
    zero_contour_segments,
)
from .mesh import RectMesh, build_rect_mesh, mesh_diameter, tag_boundary

__all__ = [
    "ConfigError",
    "NewtonError",
    "SolverError",
    "RunParams",
    "IterationRecord",
    "adaptive_time",
    "stopping_check",
    "solve_concurrent",
    "run",
    "RectMesh",
    "build_rect_mesh",
    "mesh_diameter",
    "tag_boundary",
    "InitialLevelSpec",
    "LevelSetField",
    "initial_level",
    "reinitialize",
    "transport",
    "zero_contour_segments",
]

__version__ = "0.1.0"
