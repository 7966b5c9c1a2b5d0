"""Shared fixtures.

Tests may lean on the lsopt package itself to produce authentic artifacts;
the postproc package under test must stay importable and usable without it.
"""

import os
import subprocess
import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]


@pytest.fixture(scope="session")
def disk_snapshot(tmp_path_factory):
    """VTK snapshot of a disk-shaped material region, plus the source field.

    The disk radius hits grid nodes exactly (0.25 on a 1/16 grid), so the
    snapshot exercises the vertex-on-the-zero-level path as well as ordinary
    edge crossings.
    """
    from lsopt.fem import FunctionSpace
    from lsopt.levelset import InitialLevelSpec, initial_level
    from lsopt.mesh import build_rect_mesh
    from lsopt.output import write_vtk

    mesh = build_rect_mesh((0.0, 0.0, 1.0, 1.0), 16, 16)
    space = FunctionSpace(mesh, 1)
    phi = initial_level(
        InitialLevelSpec(centers=((0.5, 0.5),), radii=(0.25,), factor=-1.0), space
    )
    path = tmp_path_factory.mktemp("disk") / "disk.vtk"
    write_vtk(mesh, {"phi": phi.field}, path)
    return path, phi


@pytest.fixture(scope="session")
def cantilever_artifacts(tmp_path_factory):
    """Artifacts of one full cantilever optimization run, via the lsopt CLI."""
    out = tmp_path_factory.mktemp("cantilever")
    env = dict(os.environ, LSOPT_OUTPUT_DIR=str(out))
    code = "import sys; from lsopt.cli import cli_main; sys.exit(cli_main(sys.argv[1:]))"
    config = REPO_ROOT / "configs" / "compliance_ex1.toml"
    subprocess.run(
        [sys.executable, "-c", code, "run", str(config)],
        env=env,
        check=True,
        capture_output=True,
        timeout=600,
    )
    assert (out / "history.csv").exists()
    assert (out / "final.vtk").exists()
    return out
