"""Config parsing, serialization round-trips, and artifact writers."""

import numpy as np
import pytest

from lsopt import ConfigError
from lsopt.config import (
    RunConfig,
    build_initial,
    build_mesh,
    build_model,
    config_from_dict,
    parse_config,
    serialize_config,
    with_explicit_adjoints,
)
from lsopt.driver import IterationRecord, RunParams
from lsopt.fem import FemField, FunctionSpace
from lsopt.models import ComplianceModel, HeatModel, InverseElasticityModel, LogisticModel
from lsopt.output import (
    HISTORY_BASE_HEADER,
    HistoryWriter,
    history_header,
    history_row,
    write_history_csv,
    write_vtk,
)

CONFIG_FILES = [
    "configs/compliance_ex1.toml",
    "configs/heat_ex3.toml",
    "configs/logistic.toml",
    "configs/inverse_twin.toml",
]


def minimal_doc(kind="heat"):
    doc = {
        "model": {"kind": kind, "volume": 0.5},
        "mesh": {"bounds": [0.0, 0.0, 1.0, 1.0], "nx": 8, "ny": 8},
        "boundary": [{"tag": 1, "side": "all"}],
        "initial": {"centers": [[0.5, 0.5]], "radii": [0.25]},
    }
    if kind == "logistic":
        doc["model"] = {"kind": "logistic", "volume": 0.5, "growth": 10.0}
    return doc


class TestParsing:
    def test_minimal_doc_fills_defaults(self):
        config = config_from_dict(minimal_doc())
        assert config.params == RunParams()
        assert config.output_dir == "out"
        assert config.snapshot_every == 0
        assert not config.explicit_adjoint and not config.fd_check
        assert config.model.source.kind == "uniform"

    def test_missing_required_key_is_named(self):
        doc = minimal_doc()
        del doc["mesh"]["nx"]
        with pytest.raises(ConfigError, match="mesh.nx"):
            config_from_dict(doc)

    def test_unknown_keys_all_reported_with_location(self):
        doc = minimal_doc()
        doc["model"]["typo_one"] = 1
        doc["run"] = {"typo_two": 2}
        doc["stray"] = {}
        with pytest.raises(ConfigError) as err:
            config_from_dict(doc)
        message = str(err.value)
        for name in ("model.typo_one", "run.typo_two", "stray"):
            assert name in message

    def test_bad_tolerance_rejected(self):
        doc = minimal_doc()
        doc["run"] = {"ctrn_tol": -1.0}
        with pytest.raises(ConfigError, match="ctrn_tol"):
            config_from_dict(doc)

    def test_span_requires_specific_side(self):
        doc = minimal_doc()
        doc["boundary"] = [{"tag": 1, "side": "all", "span": [0.2, 0.8]}]
        with pytest.raises(ConfigError, match="span"):
            config_from_dict(doc)

    def test_decreasing_span_rejected(self):
        doc = minimal_doc()
        doc["boundary"].append({"tag": 2, "side": "left", "span": [0.8, 0.2]})
        with pytest.raises(ConfigError, match="increasing"):
            config_from_dict(doc)

    def test_inverse_requires_twin_and_forces(self):
        doc = minimal_doc()
        doc["model"] = {"kind": "inverse", "measured_tag": [1]}
        with pytest.raises(ConfigError, match="twin"):
            config_from_dict(doc)

    def test_explicit_adjoint_restricted_to_closed_forms(self):
        doc = minimal_doc("logistic")
        doc["verify"] = {"explicit_adjoint": True}
        with pytest.raises(ConfigError, match="explicit_adjoint"):
            config_from_dict(doc)

    def test_reinit_step_zero_means_off(self):
        doc = minimal_doc()
        doc["run"] = {"reinit_step": 0}
        assert config_from_dict(doc).params.reinit_step is None

    def test_invalid_toml_reports_file(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[model\nkind=")
        with pytest.raises(ConfigError, match="broken.toml"):
            parse_config(path)

    def test_shipped_compliance_values(self):
        config = parse_config("configs/compliance_ex1.toml")
        assert config.model.kind == "compliance"
        assert config.mesh.nx == 80 and config.mesh.ny == 40
        assert config.params.smooth is True
        assert config.params.reinit_step == 4
        assert config.params.ctrn_tol == pytest.approx(1e-3)
        assert config.params.seed == 1


class TestRoundTrip:
    @pytest.mark.parametrize("path", CONFIG_FILES)
    def test_serialize_parse_is_fixed_point(self, path, tmp_path):
        config = parse_config(path)
        text = serialize_config(config)
        reparsed_path = tmp_path / "echo.toml"
        reparsed_path.write_text(text)
        reparsed = parse_config(reparsed_path)
        assert reparsed == config
        assert serialize_config(reparsed) == text

    def test_defaults_survive_round_trip(self, tmp_path):
        config = config_from_dict(minimal_doc())
        path = tmp_path / "echo.toml"
        path.write_text(serialize_config(config))
        assert parse_config(path) == config


class TestBuilders:
    def test_compliance_mesh_tags(self):
        config = parse_config("configs/compliance_ex1.toml")
        mesh = build_mesh(config)
        assert mesh.facets_with_tag((1,)).size == 40  # whole left edge
        assert mesh.facets_with_tag((2,)).size == 4   # load strip
        phi = build_initial(config, mesh)
        assert phi.values.shape == (81 * 41,)

    def test_inverse_mesh_strip_tags(self):
        config = parse_config("configs/inverse_twin.toml")
        mesh = build_mesh(config)
        assert mesh.facets_with_tag((3,)).size == 12
        assert mesh.facets_with_tag((4,)).size == 12
        assert mesh.facets_with_tag((5,)).size == 12
        assert mesh.facets_with_tag((1,)).size == 64
        # the catch-all picks up whatever the strips left over
        total = 2 * (64 + 32)
        assert mesh.facets_with_tag((2,)).size == total - 64 - 3 * 12

    @pytest.mark.parametrize(
        "path,cls",
        [
            ("configs/compliance_ex1.toml", ComplianceModel),
            ("configs/heat_ex3.toml", HeatModel),
            ("configs/logistic.toml", LogisticModel),
        ],
    )
    def test_model_kinds(self, path, cls):
        config = parse_config(path)
        mesh = build_mesh(config)
        assert isinstance(build_model(config, mesh), cls)

    def test_inverse_model_reuses_twin_values(self):
        config = parse_config("configs/inverse_twin.toml")
        config = RunConfig(
            model=config.model,
            mesh=type(config.mesh)(
                bounds=config.mesh.bounds, nx=16, ny=8, boundary=config.mesh.boundary
            ),
            initial=config.initial,
        )
        mesh = build_mesh(config)
        from lsopt.config import twin_measurement_values

        values = twin_measurement_values(config)
        model = build_model(config, mesh, twin_values=values)
        assert isinstance(model, InverseElasticityModel)
        assert len(model.pairs) == 3
        stored = model.pairs[0].measured.values
        assert np.array_equal(stored, values[0][2])
        assert stored is not values[0][2]

    def test_explicit_adjoint_wrapper_matches_closed_form(self):
        config = config_from_dict(minimal_doc())
        mesh = build_mesh(config)
        model = build_model(config, mesh)
        wrapped = with_explicit_adjoints(model, "heat")
        phi = build_initial(config, mesh)
        from lsopt.driver import solve_concurrent

        states = solve_concurrent(model.pde(phi))
        explicit = solve_concurrent(wrapped.adjoint(phi, states))
        closed = model.adjoint(phi, states)
        assert np.max(np.abs(explicit[0].values - closed[0].values)) < 1e-9

    def test_wrapper_rejects_unknown_kind(self):
        config = config_from_dict(minimal_doc("logistic"))
        mesh = build_mesh(config)
        model = build_model(config, mesh)
        with pytest.raises(ConfigError):
            with_explicit_adjoints(model, "logistic")


def make_record(it, nc=1):
    return IterationRecord(
        iteration=it,
        cost=1.5 + it,
        constraint=np.full(nc, 1.01),
        lagrangian=2.5 + it,
        ctrn_err=0.01,
        multipliers=np.arange(1.0, nc + 1.0),
        t_end=0.05,
        steps=12,
        form_value=0.3,
        wall_ms=17.0,
    )


class TestHistoryCsv:
    def test_header_layout(self):
        assert history_header(0) == HISTORY_BASE_HEADER
        assert history_header(2) == HISTORY_BASE_HEADER + ",lambda0,lambda1"

    def test_row_round_trips_through_repr(self):
        rec = make_record(3)
        cells = history_row(rec).split(",")
        assert int(cells[0]) == 3
        assert float(cells[1]) == rec.cost
        assert float(cells[4]) == rec.t_end
        assert int(cells[5]) == rec.steps
        assert float(cells[8]) == rec.multipliers[0]

    def test_write_and_stream_agree(self, tmp_path):
        records = [make_record(i) for i in range(4)]
        batch = tmp_path / "batch.csv"
        stream = tmp_path / "stream.csv"
        write_history_csv(batch, records)
        with HistoryWriter(stream) as writer:
            for rec in records:
                writer.append(rec)
        assert batch.read_bytes() == stream.read_bytes()
        lines = batch.read_text().splitlines()
        assert lines[0] == history_header(1)
        assert len(lines) == 5

    def test_empty_history_writes_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_history_csv(path, [])
        assert path.read_text() == HISTORY_BASE_HEADER + "\n"


@pytest.fixture
def small_mesh():
    from lsopt.mesh import build_rect_mesh

    return build_rect_mesh((0.0, 0.0, 1.0, 1.0), 1, 1, [(1, lambda p: np.full(len(p), True))])


class TestVtk:
    def test_scalar_structure(self, small_mesh, tmp_path):
        space = FunctionSpace(small_mesh, 1)
        field = FemField(space, np.arange(4.0))
        path = tmp_path / "out.vtk"
        write_vtk(small_mesh, {"phi": field}, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# vtk DataFile Version 3.0"
        assert "POINTS 4 double" in lines
        assert "CELLS 2 8" in lines
        assert "CELL_TYPES 2" in lines
        idx = lines.index("SCALARS phi double 1")
        assert lines[idx + 1] == "LOOKUP_TABLE default"
        values = [float(v) for v in lines[idx + 2 : idx + 6]]
        assert values == [0.0, 1.0, 2.0, 3.0]
        # every point row carries a zero third coordinate
        point_rows = lines[5:9]
        assert all(row.split()[2] == "0.0" for row in point_rows)

    def test_vector_blocks_pad_z(self, small_mesh, tmp_path):
        space = FunctionSpace(small_mesh, 2)
        field = FemField(space, np.arange(8.0))
        path = tmp_path / "vec.vtk"
        write_vtk(small_mesh, {"disp": field}, path)
        lines = path.read_text().splitlines()
        idx = lines.index("VECTORS disp double")
        first = lines[idx + 1].split()
        assert [float(v) for v in first] == [0.0, 1.0, 0.0]

    def test_byte_determinism(self, small_mesh, tmp_path):
        space = FunctionSpace(small_mesh, 1)
        field = FemField(space, np.linspace(-1.0, 1.0, 4) / 3.0)
        a, b = tmp_path / "a.vtk", tmp_path / "b.vtk"
        write_vtk(small_mesh, {"phi": field}, a)
        write_vtk(small_mesh, {"phi": field}, b)
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_bad_name_and_foreign_mesh(self, small_mesh, tmp_path):
        space = FunctionSpace(small_mesh, 1)
        field = FemField(space, np.zeros(4))
        with pytest.raises(ConfigError, match="names"):
            write_vtk(small_mesh, {"bad name": field}, tmp_path / "x.vtk")
        from lsopt.mesh import build_rect_mesh

        other = build_rect_mesh(
            (0.0, 0.0, 1.0, 1.0), 1, 1, [(1, lambda p: np.full(len(p), True))]
        )
        with pytest.raises(ConfigError, match="different mesh"):
            write_vtk(other, {"phi": field}, tmp_path / "y.vtk")
