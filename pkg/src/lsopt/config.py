"""Run configuration: TOML parsing, validation, serialization, assembly.

A config file is fully declarative (plain numbers, arrays and tables), so
parse -> serialize -> parse is a fixed point. Validation happens before any
mesh or matrix is allocated, and every unknown key is reported at once with
its location.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .driver import RunParams
from .errors import ConfigError
from .fem import FemField, FunctionSpace
from .levelset import InitialLevelSpec, initial_level
from .mesh import build_rect_mesh
from .models import (
    ComplianceModel,
    HeatModel,
    InverseElasticityModel,
    LogisticModel,
    MeasurementPair,
    generate_measurements,
)
from .models.base import LinearProblem

__all__ = [
    "BoundaryRegion",
    "MeshSpec",
    "InitialSpec",
    "SourceSpec",
    "ForceSpec",
    "TwinSpec",
    "ModelSpec",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "build_mesh",
    "build_initial",
    "build_model",
    "twin_measurement_values",
    "with_explicit_adjoints",
]

MODEL_KINDS = ("compliance", "heat", "logistic", "inverse")
SIDES = ("left", "right", "bottom", "top", "all")

# Closed-form adjoints are p = scale * u for these kinds; the explicit
# verification mode re-solves the shared state matrix with a scaled load.
ADJOINT_SCALE = {"compliance": -2.0, "heat": -1.0}


@dataclass(frozen=True)
class BoundaryRegion:
    tag: int
    side: str
    span: Optional[tuple] = None


@dataclass(frozen=True)
class MeshSpec:
    bounds: tuple
    nx: int
    ny: int
    boundary: tuple


@dataclass(frozen=True)
class InitialSpec:
    centers: tuple
    radii: tuple
    factor: float = 1.0
    norm: float = 2.0


@dataclass(frozen=True)
class SourceSpec:
    """Heat source: a constant, or the cosine bump amp*(1+cos(pi r/cutoff))
    supported on r < cutoff about a center (its gradient stays analytic)."""

    kind: str = "uniform"
    value: float = 1.0
    center: tuple = (0.5, 0.5)
    amplitude: float = 25.0
    cutoff: float = 0.1


@dataclass(frozen=True)
class ForceSpec:
    traction: tuple
    tag: int


@dataclass(frozen=True)
class TwinSpec:
    """Synthetic-measurement protocol: the data come from a solve with a
    known disk inclusion on a ``refine``-times finer mesh."""

    center: tuple
    radius: float
    refine: int = 2


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    volume: float = 1.0
    fixed_tag: tuple = (1,)
    load_tag: tuple = (2,)
    load: tuple = (0.0, -1.0)
    frozen_box: Optional[tuple] = None
    source: Optional[SourceSpec] = None
    growth: float = 10.0
    measured_tag: tuple = (2,)
    contrast: float = 10.0
    alpha: float = 1.0
    beta: float = 1.0
    forces: tuple = ()
    twin: Optional[TwinSpec] = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    mesh: MeshSpec
    initial: InitialSpec
    params: RunParams = field(default_factory=RunParams)
    output_dir: str = "out"
    snapshot_every: int = 0
    explicit_adjoint: bool = False
    fd_check: bool = False


# -- parsing -------------------------------------------------------------------

_MISSING = object()


class _Section:
    """One config table; tracks consumed keys so leftovers can be reported."""

    def __init__(self, data, location, unknown):
        self.data = dict(data)
        self.location = location
        self.unknown = unknown

    def take(self, key, default=_MISSING):
        if key in self.data:
            return self.data.pop(key)
        if default is _MISSING:
            raise ConfigError(f"missing required key {self.location}.{key}")
        return default

    def finish(self):
        self.unknown.extend(f"{self.location}.{k}" for k in self.data)


def _floats(value, location, count=None) -> tuple:
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{location} must be an array of numbers, got {value!r}")
    if count is not None and len(out) != count:
        raise ConfigError(f"{location} must have {count} entries, got {len(out)}")
    return out


def _points(value, location) -> tuple:
    return tuple(_floats(v, location, 2) for v in value)


def _tags(value, location) -> tuple:
    items = value if isinstance(value, list) else [value]
    try:
        out = tuple(int(v) for v in items)
    except (TypeError, ValueError):
        raise ConfigError(f"{location} must be a tag or list of tags, got {value!r}")
    if not out:
        raise ConfigError(f"{location} needs at least one tag")
    return out


def _norm_order(value, location) -> float:
    num = float(value)
    if num not in (2.0, math.inf):
        raise ConfigError(f"{location} must be 2 or inf, got {value!r}")
    return num


def parse_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}")
    return config_from_dict(doc)


def config_from_dict(doc) -> RunConfig:
    unknown: list = []
    doc = dict(doc)

    model = _parse_model(_Section(doc.pop("model", None) or {}, "model", unknown), unknown)
    mesh = _parse_mesh(
        _Section(doc.pop("mesh", None) or {}, "mesh", unknown),
        doc.pop("boundary", None),
        unknown,
    )
    initial = _parse_initial(_Section(doc.pop("initial", None) or {}, "initial", unknown))
    params = _parse_run(_Section(doc.pop("run", None) or {}, "run", unknown))

    out = _Section(doc.pop("output", None) or {}, "output", unknown)
    output_dir = str(out.take("directory", "out"))
    snapshot_every = int(out.take("snapshot_every", 0))
    out.finish()
    if snapshot_every < 0:
        raise ConfigError(f"output.snapshot_every must be nonnegative, got {snapshot_every}")

    verify = _Section(doc.pop("verify", None) or {}, "verify", unknown)
    explicit_adjoint = bool(verify.take("explicit_adjoint", False))
    fd_check = bool(verify.take("fd_check", False))
    verify.finish()

    unknown.extend(str(k) for k in doc)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    if explicit_adjoint and model.kind not in ADJOINT_SCALE:
        raise ConfigError(
            f"verify.explicit_adjoint needs a closed-form adjoint model, not {model.kind}"
        )
    return RunConfig(
        model=model,
        mesh=mesh,
        initial=initial,
        params=params,
        output_dir=output_dir,
        snapshot_every=snapshot_every,
        explicit_adjoint=explicit_adjoint,
        fd_check=fd_check,
    )


def _parse_model(sec: _Section, unknown) -> ModelSpec:
    kind = str(sec.take("kind"))
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {kind!r}")
    fields = {"kind": kind}
    if kind == "compliance":
        fields["volume"] = float(sec.take("volume"))
        fields["fixed_tag"] = _tags(sec.take("fixed_tag", 1), "model.fixed_tag")
        fields["load_tag"] = _tags(sec.take("load_tag", 2), "model.load_tag")
        fields["load"] = _floats(sec.take("load"), "model.load", 2)
        box = sec.take("frozen_box", None)
        if box is not None:
            fields["frozen_box"] = _floats(box, "model.frozen_box", 4)
    elif kind == "heat":
        fields["volume"] = float(sec.take("volume"))
        fields["fixed_tag"] = _tags(sec.take("fixed_tag", 1), "model.fixed_tag")
        src = _Section(sec.take("source", None) or {}, "model.source", unknown)
        src_kind = str(src.take("kind", "uniform"))
        if src_kind not in ("uniform", "radial"):
            raise ConfigError(f"model.source.kind must be uniform or radial, got {src_kind!r}")
        fields["source"] = SourceSpec(
            kind=src_kind,
            value=float(src.take("value", 1.0)),
            center=_floats(src.take("center", (0.5, 0.5)), "model.source.center", 2),
            amplitude=float(src.take("amplitude", 25.0)),
            cutoff=float(src.take("cutoff", 0.1)),
        )
        src.finish()
        if fields["source"].cutoff <= 0.0:
            raise ConfigError("model.source.cutoff must be positive")
    elif kind == "logistic":
        fields["volume"] = float(sec.take("volume"))
        fields["growth"] = float(sec.take("growth"))
    else:
        fields["fixed_tag"] = _tags(sec.take("fixed_tag", 1), "model.fixed_tag")
        fields["measured_tag"] = _tags(sec.take("measured_tag"), "model.measured_tag")
        fields["contrast"] = float(sec.take("contrast", 10.0))
        fields["alpha"] = float(sec.take("alpha", 1.0))
        fields["beta"] = float(sec.take("beta", 1.0))
        twin = _Section(sec.take("twin"), "model.twin", unknown)
        fields["twin"] = TwinSpec(
            center=_floats(twin.take("center"), "model.twin.center", 2),
            radius=float(twin.take("radius")),
            refine=int(twin.take("refine", 2)),
        )
        twin.finish()
        if fields["twin"].radius <= 0.0 or fields["twin"].refine < 2:
            raise ConfigError("model.twin needs radius > 0 and refine >= 2")
        forces = sec.take("force")
        if not isinstance(forces, list) or not forces:
            raise ConfigError("model.force must list at least one force table")
        parsed = []
        for i, entry in enumerate(forces):
            fsec = _Section(entry, f"model.force[{i}]", unknown)
            parsed.append(
                ForceSpec(
                    traction=_floats(fsec.take("traction"), f"model.force[{i}].traction", 2),
                    tag=int(fsec.take("tag")),
                )
            )
            fsec.finish()
        fields["forces"] = tuple(parsed)
    sec.finish()
    return ModelSpec(**fields)


def _parse_mesh(sec: _Section, boundary, unknown) -> MeshSpec:
    bounds = _floats(sec.take("bounds"), "mesh.bounds", 4)
    nx = int(sec.take("nx"))
    ny = int(sec.take("ny"))
    sec.finish()
    x0, y0, x1, y1 = bounds
    if not (x0 < x1 and y0 < y1):
        raise ConfigError(f"mesh.bounds must satisfy x0 < x1 and y0 < y1, got {bounds}")
    if nx < 1 or ny < 1:
        raise ConfigError(f"mesh needs nx, ny >= 1, got ({nx}, {ny})")
    if not isinstance(boundary, list) or not boundary:
        raise ConfigError("need at least one [[boundary]] region")
    regions = []
    for i, entry in enumerate(boundary):
        bsec = _Section(entry, f"boundary[{i}]", unknown)
        tag = int(bsec.take("tag"))
        side = str(bsec.take("side"))
        span = bsec.take("span", None)
        bsec.finish()
        if side not in SIDES:
            raise ConfigError(f"boundary[{i}].side must be one of {SIDES}, got {side!r}")
        if span is not None:
            if side == "all":
                raise ConfigError(f"boundary[{i}]: span needs a specific side")
            span = _floats(span, f"boundary[{i}].span", 2)
            if span[0] >= span[1]:
                raise ConfigError(f"boundary[{i}].span must be increasing, got {span}")
        if tag < 1:
            raise ConfigError(f"boundary[{i}].tag must be a positive integer, got {tag}")
        regions.append(BoundaryRegion(tag=tag, side=side, span=span))
    return MeshSpec(bounds=bounds, nx=nx, ny=ny, boundary=tuple(regions))


def _parse_initial(sec: _Section) -> InitialSpec:
    spec = InitialSpec(
        centers=_points(sec.take("centers"), "initial.centers"),
        radii=_floats(sec.take("radii"), "initial.radii"),
        factor=float(sec.take("factor", 1.0)),
        norm=_norm_order(sec.take("norm", 2.0), "initial.norm"),
    )
    sec.finish()
    # reuse the level-set validation (lengths, positivity, nonzero factor)
    InitialLevelSpec(spec.centers, spec.radii, spec.factor, spec.norm)
    return spec


def _parse_run(sec: _Section) -> RunParams:
    reinit_step = int(sec.take("reinit_step", 0))
    params = RunParams(
        niter=int(sec.take("niter", 100)),
        dfactor=float(sec.take("dfactor", 1e-2)),
        lv_time=_floats(sec.take("lv_time", (1e-3, 1e-1)), "run.lv_time", 2),
        lv_iter=tuple(int(v) for v in sec.take("lv_iter", (8, 16))),
        smooth=bool(sec.take("smooth", False)),
        reinit_step=None if reinit_step == 0 else reinit_step,
        reinit_pars=_floats(sec.take("reinit_pars", (8, 1e-1)), "run.reinit_pars", 2),
        start_to_check=int(sec.take("start_to_check", 30)),
        ctrn_tol=float(sec.take("ctrn_tol", 1e-2)),
        lgrn_tol=float(sec.take("lgrn_tol", 1e-2)),
        cost_tol=float(sec.take("cost_tol", 1e-2)),
        prev=int(sec.take("prev", 10)),
        random_pars=(int(sec.take("seed", 1)), float(sec.take("spread", 0.05))),
        task_parallel=bool(sec.take("task_parallel", False)),
    )
    sec.finish()
    return params


# -- serialization ---------------------------------------------------------------


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def _emit(lines, key, value):
    lines.append(f"{key} = {_toml_value(value)}")


def serialize_config(config: RunConfig) -> str:
    m, lines = config.model, ["[model]"]
    _emit(lines, "kind", m.kind)
    if m.kind in ("compliance", "heat", "logistic"):
        _emit(lines, "volume", m.volume)
    if m.kind in ("compliance", "heat", "inverse"):
        _emit(lines, "fixed_tag", list(m.fixed_tag))
    if m.kind == "compliance":
        _emit(lines, "load_tag", list(m.load_tag))
        _emit(lines, "load", list(m.load))
        if m.frozen_box is not None:
            _emit(lines, "frozen_box", list(m.frozen_box))
    if m.kind == "logistic":
        _emit(lines, "growth", m.growth)
    if m.kind == "inverse":
        _emit(lines, "measured_tag", list(m.measured_tag))
        _emit(lines, "contrast", m.contrast)
        _emit(lines, "alpha", m.alpha)
        _emit(lines, "beta", m.beta)
    if m.kind == "heat":
        src = m.source or SourceSpec()
        lines += ["", "[model.source]"]
        _emit(lines, "kind", src.kind)
        if src.kind == "uniform":
            _emit(lines, "value", src.value)
        else:
            _emit(lines, "center", list(src.center))
            _emit(lines, "amplitude", src.amplitude)
            _emit(lines, "cutoff", src.cutoff)
    if m.kind == "inverse":
        lines += ["", "[model.twin]"]
        _emit(lines, "center", list(m.twin.center))
        _emit(lines, "radius", m.twin.radius)
        _emit(lines, "refine", m.twin.refine)
        for force in m.forces:
            lines += ["", "[[model.force]]"]
            _emit(lines, "traction", list(force.traction))
            _emit(lines, "tag", force.tag)

    lines += ["", "[mesh]"]
    _emit(lines, "bounds", list(config.mesh.bounds))
    _emit(lines, "nx", config.mesh.nx)
    _emit(lines, "ny", config.mesh.ny)
    for region in config.mesh.boundary:
        lines += ["", "[[boundary]]"]
        _emit(lines, "tag", region.tag)
        _emit(lines, "side", region.side)
        if region.span is not None:
            _emit(lines, "span", list(region.span))

    lines += ["", "[initial]"]
    _emit(lines, "centers", [list(c) for c in config.initial.centers])
    _emit(lines, "radii", list(config.initial.radii))
    _emit(lines, "factor", config.initial.factor)
    _emit(lines, "norm", config.initial.norm)

    p = config.params
    lines += ["", "[run]"]
    _emit(lines, "niter", p.niter)
    _emit(lines, "dfactor", p.dfactor)
    _emit(lines, "lv_time", list(p.lv_time))
    _emit(lines, "lv_iter", list(p.lv_iter))
    _emit(lines, "smooth", p.smooth)
    _emit(lines, "reinit_step", 0 if p.reinit_step is None else p.reinit_step)
    _emit(lines, "reinit_pars", list(p.reinit_pars))
    _emit(lines, "start_to_check", p.start_to_check)
    _emit(lines, "ctrn_tol", p.ctrn_tol)
    _emit(lines, "lgrn_tol", p.lgrn_tol)
    _emit(lines, "cost_tol", p.cost_tol)
    _emit(lines, "prev", p.prev)
    _emit(lines, "seed", p.seed)
    _emit(lines, "spread", p.spread)
    _emit(lines, "task_parallel", p.task_parallel)

    lines += ["", "[output]"]
    _emit(lines, "directory", config.output_dir)
    _emit(lines, "snapshot_every", config.snapshot_every)

    lines += ["", "[verify]"]
    _emit(lines, "explicit_adjoint", config.explicit_adjoint)
    _emit(lines, "fd_check", config.fd_check)
    return "\n".join(lines) + "\n"


# -- assembly --------------------------------------------------------------------


def _region_predicate(bounds, region: BoundaryRegion):
    x0, y0, x1, y1 = bounds
    tol = 1e-9 * max(x1 - x0, y1 - y0)
    side, span = region.side, region.span

    def predicate(p):
        if side == "all":
            return np.full(len(p), True)
        if side == "left":
            hit, running = p[:, 0] < x0 + tol, p[:, 1]
        elif side == "right":
            hit, running = p[:, 0] > x1 - tol, p[:, 1]
        elif side == "bottom":
            hit, running = p[:, 1] < y0 + tol, p[:, 0]
        else:
            hit, running = p[:, 1] > y1 - tol, p[:, 0]
        if span is not None:
            hit = hit & (running > span[0] - tol) & (running < span[1] + tol)
        return hit

    return predicate


def _boundary_rules(mesh_spec: MeshSpec):
    return [
        (region.tag, _region_predicate(mesh_spec.bounds, region))
        for region in mesh_spec.boundary
    ]


def build_mesh(config: RunConfig):
    spec = config.mesh
    return build_rect_mesh(spec.bounds, spec.nx, spec.ny, _boundary_rules(spec))


def build_initial(config: RunConfig, mesh):
    spec = InitialLevelSpec(
        config.initial.centers,
        config.initial.radii,
        config.initial.factor,
        config.initial.norm,
    )
    return initial_level(spec, FunctionSpace(mesh, 1))


def _heat_source_closures(src: SourceSpec):
    if src.kind == "uniform":
        value = src.value
        return (lambda p: np.full(len(p), value)), None
    cx, cy = src.center
    amp, cut = src.amplitude, src.cutoff

    def source(p):
        r = np.hypot(p[:, 0] - cx, p[:, 1] - cy)
        return np.where(r < cut, amp * (1.0 + np.cos(np.pi * r / cut)), 0.0)

    def gradient(p):
        x, y = p[:, 0] - cx, p[:, 1] - cy
        r = np.hypot(x, y)
        mag = np.where(
            (r < cut) & (r > 0.0),
            -amp * np.pi / cut * np.sin(np.pi * r / cut) / np.maximum(r, 1e-30),
            0.0,
        )
        return np.stack([mag * x, mag * y], axis=1)

    return source, gradient


def twin_measurement_values(config: RunConfig) -> list:
    """Synthesize measurements on the refined twin mesh once.

    Returns (traction, tag, nodal values) triples; values are plain arrays
    so they can be reattached to any congruent mesh (the derivative check
    rebuilds models on perturbed vertices with frozen data).
    """
    m = config.model
    spec = config.mesh
    coarse = build_rect_mesh(spec.bounds, spec.nx, spec.ny, _boundary_rules(spec))
    fine = build_rect_mesh(
        spec.bounds, m.twin.refine * spec.nx, m.twin.refine * spec.ny,
        _boundary_rules(spec),
    )
    cx, cy = m.twin.center
    radius = m.twin.radius
    inclusion = lambda p: np.hypot(p[:, 0] - cx, p[:, 1] - cy) - radius
    pairs = generate_measurements(
        fine, coarse, inclusion,
        [(f.traction, f.tag) for f in m.forces],
        m.fixed_tag, m.measured_tag, contrast=m.contrast,
    )
    return [(p.traction, p.force_tags, p.measured.values.copy()) for p in pairs]


def build_model(config: RunConfig, mesh, twin_values=None):
    m = config.model
    if m.kind == "compliance":
        frozen = None
        if m.frozen_box is not None:
            bx0, by0, bx1, by1 = m.frozen_box
            frozen = lambda p: (
                (p[:, 0] >= bx0) & (p[:, 0] <= bx1)
                & (p[:, 1] >= by0) & (p[:, 1] <= by1)
            )
        return ComplianceModel(
            mesh, m.fixed_tag, m.load_tag, m.load, m.volume, frozen=frozen
        )
    if m.kind == "heat":
        source, gradient = _heat_source_closures(m.source or SourceSpec())
        return HeatModel(
            mesh, m.fixed_tag, source, m.volume, source_gradient=gradient
        )
    if m.kind == "logistic":
        return LogisticModel(mesh, m.growth, m.volume)
    if twin_values is None:
        twin_values = twin_measurement_values(config)
    vector = FunctionSpace(mesh, 2)
    pairs = [
        MeasurementPair(traction, tags, FemField(vector, values.copy()))
        for traction, tags, values in twin_values
    ]
    return InverseElasticityModel(
        mesh, m.fixed_tag, m.measured_tag, pairs,
        contrast=m.contrast, alpha=m.alpha, beta=m.beta,
    )


class _ExplicitAdjointModel:
    """Verification wrapper: adjoints come from explicit solves of the shared
    state matrix with the load scaled by the closed-form factor."""

    def __init__(self, inner, scale: float):
        self._inner = inner
        self._scale = scale

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def adjoint(self, phi, states):
        return [
            LinearProblem(p.space, p.matrix, self._scale * p.rhs, p.bc)
            for p in self._inner.pde(phi)
        ]


def with_explicit_adjoints(model, kind: str):
    if kind not in ADJOINT_SCALE:
        raise ConfigError(f"no closed-form adjoint to verify for model kind {kind!r}")
    return _ExplicitAdjointModel(model, ADJOINT_SCALE[kind])
