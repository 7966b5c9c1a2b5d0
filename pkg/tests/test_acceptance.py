"""End-to-end acceptance checks.

Every advertised guarantee of the package is measured here at its stated
tolerance, one test per guarantee, and each test prints a single PASS line
with the observed numbers (run with ``pytest -s`` or ``-rA`` to see them,
so a log of the suite doubles as an acceptance report). The long tests
drive the shipped example configurations unmodified; the cheaper identity
checks run on 32x32 coarsenings of the same configurations.
"""

import dataclasses
import math
import os
import time
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

import lsopt.driver
from lsopt.cli import derivative_report
from lsopt.config import (
    build_initial,
    build_mesh,
    build_model,
    parse_config,
    twin_measurement_values,
    with_explicit_adjoints,
)
from lsopt.driver import RunParams, run, solve_concurrent
from lsopt.fem import FemField, FunctionSpace
from lsopt.levelset import (
    InitialLevelSpec,
    LevelSetField,
    initial_level,
    reinitialize,
    transport,
    zero_contour_segments,
    zero_set_displacement,
)
from lsopt.mesh import build_rect_mesh
from lsopt.models.base import resolve_adjoints, solve_problem
from lsopt.output import write_history_csv
from lsopt.ppl import ppl_init, ppl_update
from lsopt.velocity import VelocitySolver

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def report(label, detail):
    print(f"PASS {label}: {detail}")


def shipped(name):
    return parse_config(CONFIG_DIR / name)


def coarsened(config, nx, ny, **run_overrides):
    mesh = dataclasses.replace(config.mesh, nx=nx, ny=ny)
    params = dataclasses.replace(config.params, **run_overrides)
    return dataclasses.replace(config, mesh=mesh, params=params)


def prepare(config):
    mesh = build_mesh(config)
    phi0 = build_initial(config, mesh)
    twin = twin_measurement_values(config) if config.model.kind == "inverse" else None
    return mesh, phi0, build_model(config, mesh, twin)


def material_volume(phi):
    return float(np.sum(phi.space.quad_weights * phi.indicator_quad()))


def material_components(phi):
    """Connected components of the subzero region, as sets of triangle ids.

    A triangle counts as material when the majority of its quadrature points
    lie inside; components connect across shared edges.
    """
    mesh = phi.mesh
    solid = np.nonzero(phi.indicator_quad().mean(axis=1) > 0.5)[0]
    solid_set = set(int(t) for t in solid)
    by_edge = defaultdict(list)
    for t in solid_set:
        a, b, c = (int(v) for v in mesh.triangles[t])
        for edge in ((a, b), (b, c), (a, c)):
            by_edge[tuple(sorted(edge))].append(t)
    neighbors = defaultdict(list)
    for pair in by_edge.values():
        if len(pair) == 2:
            neighbors[pair[0]].append(pair[1])
            neighbors[pair[1]].append(pair[0])
    components = []
    seen = set()
    for start in solid_set:
        if start in seen:
            continue
        stack, comp = [start], set()
        while stack:
            t = stack.pop()
            if t in comp:
                continue
            comp.add(t)
            stack.extend(n for n in neighbors[t] if n not in comp)
        seen |= comp
        components.append(comp)
    return components


def touches_tag(component, mesh, tags):
    """True when a component triangle has a full facet on a tagged boundary."""
    tagged = mesh.boundary_facets[mesh.facets_with_tag(tags)]
    nodes = set(int(v) for v in tagged.ravel())
    for t in component:
        if sum(int(v) in nodes for v in mesh.triangles[t]) >= 2:
            return True
    return False


# -- derivative oracle ---------------------------------------------------------


class TestDerivativeOracle:
    """Finite-difference quotients of the cost under mesh perturbation agree
    with the distributed derivative on every shipped model, coarsened to a
    32x32 grid, and the agreement tightens when the step halves.

    The symmetric hole lattices of the heat and logistic examples nearly
    cancel dJ along the fixed probe direction, which turns the relative
    quotient into a 0/0 comparison; those two get a single off-center ball
    instead so the derivative stays generic.
    """

    @pytest.mark.parametrize("name,initial", [
        ("compliance_ex1.toml", None),
        ("heat_ex3.toml", ((0.61, 0.43), 0.3, 1.0)),
        ("logistic.toml", ((0.48, 0.52), 0.35, -1.0)),
        ("inverse_twin.toml", None),
    ])
    def test_quotient_matches_distributed_derivative(self, name, initial):
        config = coarsened(shipped(name), 32, 32)
        if initial is not None:
            center, radius, factor = initial
            config = dataclasses.replace(
                config,
                initial=dataclasses.replace(
                    config.initial, centers=(center,), radii=(radius,),
                    factor=factor,
                ),
            )
        start = time.perf_counter()
        verdict = derivative_report(config, step=1e-4)
        elapsed = time.perf_counter() - start
        assert verdict == 0
        assert elapsed < 30.0
        report(f"derivative oracle [{name}]",
               f"5% at t=1e-4 and shrinking, {elapsed:.1f} s (budget 30 s)")


# -- descent identity ----------------------------------------------------------


class TestDescentIdentity:
    def test_holds_at_every_iteration(self, monkeypatch):
        solves = []

        class Recording(VelocitySolver):
            def solve(self, pair):
                result = super().solve(pair)
                solves.append(result)
                return result

        monkeypatch.setattr(lsopt.driver, "VelocitySolver", Recording)
        config = coarsened(shipped("heat_ex3.toml"), 32, 32, niter=30)
        mesh, phi0, model = prepare(config)
        run(model, phi0, config.params)

        assert len(solves) == 30
        worst = 0.0
        for r in solves:
            assert r.form_value >= 0.0
            gap = abs(r.derivative + r.form_value) / (1.0 + abs(r.form_value))
            assert gap <= 1e-8
            worst = max(worst, gap)
        report("descent identity",
               f"30 iterations, B >= 0, worst |rhs.theta + B| rel = {worst:.2e}")


# -- adjoint identities ---------------------------------------------------------


class TestAdjointIdentities:
    def test_explicit_solves_match_closed_forms(self):
        gaps = {}
        for name, kind, factor in [
            ("compliance_ex1.toml", "compliance", -2.0),
            ("heat_ex3.toml", "heat", -1.0),
        ]:
            config = coarsened(shipped(name), 32, 32)
            mesh, phi0, model = prepare(config)
            states = [solve_problem(p) for p in model.pde(phi0)]
            explicit = resolve_adjoints(with_explicit_adjoints(model, kind),
                                        phi0, states)
            gap = max(
                float(np.max(np.abs(p.values - factor * u.values)))
                for p, u in zip(explicit, states)
            )
            assert gap <= 1e-9
            gaps[kind] = gap
        report("adjoint identities",
               f"p = -2u gap {gaps['compliance']:.1e}, "
               f"p = -u gap {gaps['heat']:.1e} (tol 1e-9)")


# -- multiplier update hand table -----------------------------------------------


class TestMultiplierHandTable:
    def test_two_step_sequence(self):
        s1 = ppl_update(ppl_init(1), [1.1])
        s2 = ppl_update(s1, [1.05])
        expected = {
            "lam1": 0.1998001998001998,
            "z1": 9.99000999000999e-05,
            "mu2": 0.09596910175710005,
            "lam2": 0.19586920165719995,
            "z2": 4.995004995004995e-05,
        }
        worst = max(
            abs(s1.lam[0] - expected["lam1"]),
            abs(s1.mu[0] - 0.0),
            abs(s1.z[0] - expected["z1"]),
            abs(s1.delta - 0.4995),
            abs(s2.mu[0] - expected["mu2"]),
            abs(s2.lam[0] - expected["lam2"]),
            abs(s2.z[0] - expected["z2"]),
            abs(s2.delta - 0.4990005),
        )
        assert worst <= 1e-9
        report("multiplier hand table",
               f"two-step C=(1.1),(1.05) worst gap {worst:.1e} (tol 1e-9)")


# -- transport ------------------------------------------------------------------


class TestTransport:
    def test_zero_velocity_identity_and_disk_advection(self):
        space = FunctionSpace(build_rect_mesh((0.0, 0.0, 1.0, 1.0), 32, 32))
        spec = InitialLevelSpec(centers=((0.5, 0.5),), radii=(0.3,), factor=-1.0)
        phi = initial_level(spec, space)
        theta0 = FunctionSpace(space.mesh, value_rank=2).zero_field()
        frozen = transport(phi, theta0, t_end=5e-2, steps=5, smooth=False)
        drift = float(np.max(np.abs(frozen.values - phi.values)))
        assert drift <= 1e-10

        space = FunctionSpace(build_rect_mesh((0.0, 0.0, 1.0, 1.0), 128, 128))
        phi = initial_level(spec, space)
        center = np.array([0.5, 0.5])

        def radial(pts):
            d = pts - center
            return d / np.sqrt(np.sum(d * d, axis=1, keepdims=True) + 0.02**2)

        theta = FunctionSpace(space.mesh, value_rank=2).interpolate(radial)
        moved = transport(phi, theta, t_end=0.02, steps=8, smooth=False)
        radius = lambda lv: float(np.mean(np.linalg.norm(
            zero_contour_segments(lv).reshape(-1, 2) - center, axis=1)))
        growth = radius(moved) - radius(phi)
        assert growth == pytest.approx(0.02, rel=0.20)
        report("transport",
               f"zero-velocity drift {drift:.1e} (tol 1e-10), "
               f"disk radius growth {growth:.4f} vs 0.02 (20%)")


# -- reinitialization -----------------------------------------------------------


class TestReinitialization:
    def test_line_and_disk_distances(self):
        space = FunctionSpace(build_rect_mesh((0.0, 0.0, 1.0, 1.0), 32, 32))
        line = LevelSetField.from_field(space.interpolate(lambda p: p[:, 0] - 0.5))
        disk = initial_level(
            InitialLevelSpec(centers=((0.5, 0.5),), radii=(0.3,), factor=-1.0),
            space,
        )
        results = {}
        for label, phi in [("line", line), ("disk", disk)]:
            out = reinitialize(phi, iters=8, t_final=0.1)
            vals = phi.values[phi.mesh.triangles]
            band = (vals.min(axis=1) < 0.0) & (vals.max(axis=1) > 0.0)
            band |= np.abs(vals).min(axis=1) <= 3.0 * phi.h
            grad_norm = np.linalg.norm(space.grad_at_quad(out.values), axis=1)
            slope_gap = float(np.max(np.abs(grad_norm[band] - 1.0)))
            moved = zero_set_displacement(
                zero_contour_segments(phi), zero_contour_segments(out)
            )
            assert slope_gap <= 0.1
            assert moved <= 2.0 * phi.h
            results[label] = (slope_gap, moved / phi.h)
        report("reinitialization",
               f"line slope gap {results['line'][0]:.3f}, "
               f"zero-set move {results['line'][1]:.2f}h; "
               f"disk {results['disk'][0]:.3f}, {results['disk'][1]:.2f}h "
               "(tols 0.1, 2h)")


# -- shipped example runs --------------------------------------------------------


class TestCantileverExample:
    def test_run_meets_targets(self):
        config = shipped("compliance_ex1.toml")
        mesh, phi0, model = prepare(config)
        start = time.perf_counter()
        phi, history = run(model, phi0, config.params)
        elapsed = time.perf_counter() - start

        assert len(history) < config.params.niter
        assert history[-1].ctrn_err <= 1e-2
        assert history[-1].cost < history[0].cost
        assert elapsed < 180.0

        bridges = [
            comp for comp in material_components(phi)
            if touches_tag(comp, mesh, config.model.fixed_tag)
            and touches_tag(comp, mesh, config.model.load_tag)
        ]
        assert bridges
        report("cantilever example",
               f"stopped at {len(history)}/{config.params.niter}, "
               f"J {history[0].cost:.4f} -> {history[-1].cost:.4f}, "
               f"|C-1| = {history[-1].ctrn_err:.1e}, "
               f"clamp-to-load component present, {elapsed:.0f} s (budget 180 s)")


class TestHeatExample:
    def test_run_meets_targets(self):
        config = shipped("heat_ex3.toml")
        mesh, phi0, model = prepare(config)
        start = time.perf_counter()
        phi, history = run(model, phi0, config.params)
        elapsed = time.perf_counter() - start

        assert len(history) < config.params.niter
        assert history[-1].ctrn_err <= 1e-2
        assert elapsed < 180.0

        components = material_components(phi)
        grounded = [
            comp for comp in components
            if touches_tag(comp, mesh, config.model.fixed_tag)
        ]
        assert len(components) == 1 and grounded
        report("heat example",
               f"stopped at {len(history)}/{config.params.niter}, "
               f"|C-1| = {history[-1].ctrn_err:.1e}, "
               f"domain connected to the grounded boundary, "
               f"{elapsed:.0f} s (budget 180 s)")


class NewtonWatch:
    """Model wrapper that keeps every nonlinear problem handed to the solver
    so the iteration counts can be audited after the run."""

    def __init__(self, inner):
        self._inner = inner
        self.problems = []

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def pde(self, phi):
        out = self._inner.pde(phi)
        self.problems.extend(out)
        return out


class TestLogisticExample:
    def test_newton_budget_volume_and_descent(self):
        config = shipped("logistic.toml")
        mesh, phi0, model = prepare(config)
        watch = NewtonWatch(model)
        start = time.perf_counter()
        phi, history = run(watch, phi0, config.params)
        elapsed = time.perf_counter() - start

        steps = [len(p.norms) for p in watch.problems]
        assert steps and max(steps) <= 10
        volume = material_volume(phi)
        assert abs(volume - 0.5) <= 1e-2
        assert history[-1].cost < history[0].cost
        report("logistic example",
               f"newton max {max(steps)}/10 over {len(steps)} solves, "
               f"volume {volume:.4f} (target 0.5 +- 1e-2), "
               f"J {history[0].cost:.5f} -> {history[-1].cost:.5f}, "
               f"{elapsed:.0f} s")


class TestInclusionRecovery:
    def test_twin_run_recovers_disk(self):
        config = shipped("inverse_twin.toml")
        mesh, phi0, model = prepare(config)
        start = time.perf_counter()
        phi, history = run(model, phi0, config.params)
        elapsed = time.perf_counter() - start

        ratio = history[-1].cost / history[0].cost
        assert ratio <= 1e-2
        assert elapsed < 300.0

        twin = config.model.twin
        space = phi.space
        centered = space.quad_points - np.asarray(twin.center)
        true_inside = np.linalg.norm(centered, axis=2) < twin.radius
        recovered = space.at_quad(phi.values) < 0.0
        sym_diff = float(np.sum(space.quad_weights * (true_inside != recovered)))
        true_area = math.pi * twin.radius**2
        assert sym_diff <= 0.2 * true_area
        report("inclusion recovery",
               f"J ratio {ratio:.1e} (tol 1e-2), "
               f"symmetric difference {sym_diff / true_area:.1%} of the disk "
               f"(tol 20%), {elapsed:.0f} s (budget 300 s)")


# -- concurrency -----------------------------------------------------------------


class TestConcurrency:
    def test_task_parallel_bitwise_and_timing(self):
        config = coarsened(shipped("inverse_twin.toml"), 32, 16)
        mesh, phi0, model = prepare(config)
        assert len(model.pde(phi0)) >= 4

        start = time.perf_counter()
        serial = solve_concurrent(model.pde(phi0), parallel=False)
        serial_s = time.perf_counter() - start
        start = time.perf_counter()
        parallel = solve_concurrent(model.pde(phi0), parallel=True)
        parallel_s = time.perf_counter() - start

        assert len(serial) == len(parallel)
        for a, b in zip(serial, parallel):
            assert a.values.dtype == b.values.dtype
            assert np.array_equal(a.values, b.values)

        cores = os.cpu_count() or 1
        if cores >= 4:
            assert parallel_s <= 0.7 * serial_s
            timing_note = f"speedup x{serial_s / parallel_s:.2f} on {cores} cores"
        else:
            warnings.warn(
                f"task-parallel timing not asserted: {cores} core(s) available, "
                "need 4; bitwise agreement still checked"
            )
            timing_note = f"timing soft-passed on {cores} core(s)"
        report("concurrency",
               f"{len(serial)} systems bitwise-identical, {timing_note}")


# -- determinism -----------------------------------------------------------------


class TestDeterminism:
    def test_same_seed_runs_write_identical_histories(self, tmp_path):
        config = coarsened(shipped("heat_ex3.toml"), 32, 32, niter=12)
        histories = []
        for _ in range(2):
            mesh, phi0, model = prepare(config)
            _, history = run(model, phi0, config.params, timing=False)
            histories.append(history)
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        write_history_csv(first, histories[0])
        write_history_csv(second, histories[1])
        a, b = first.read_bytes(), second.read_bytes()
        assert a == b
        assert len(histories[0]) == 12
        report("determinism",
               f"two seed-{config.params.seed} runs, "
               f"{len(a)} history bytes identical")


# -- frozen-region velocity suppression -------------------------------------------


class TestFrozenRegion:
    def test_velocity_suppressed_in_kept_solid_box(self):
        """The penalized keep-solid box around the load strip damps the
        descent velocity there.

        The box contains the loaded strip, so the local derivative tensor is
        the largest in the domain and the mass penalty can only divide it
        down; the recorded ratio at penalty 1e4 is 2.5e-2 against 1.1e-1
        without the box (scaling on down to 1.7e-3 at penalty 1e6).
        """
        config = shipped("compliance_ex1.toml")
        assert config.model.frozen_box is not None

        def velocity_magnitudes(cfg):
            mesh, phi0, model = prepare(cfg)
            states = [solve_problem(p) for p in model.pde(phi0)]
            adjoints = resolve_adjoints(model, phi0, states)
            cost_pair, _ = model.derivative(phi0, states, adjoints)
            solver = VelocitySolver(model.bilinear_form(), FunctionSpace(mesh, 2))
            theta = solver.solve(cost_pair).theta.values.reshape(-1, 2)
            return mesh, np.linalg.norm(theta, axis=1)

        mesh, magnitude = velocity_magnitudes(config)
        bx0, by0, bx1, by1 = config.model.frozen_box
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        box = (x > bx0) & (x <= bx1) & (y > by0) & (y < by1)
        assert box.any()
        ratio = float(magnitude[box].max() / magnitude.max())

        unpinned = dataclasses.replace(
            config, model=dataclasses.replace(config.model, frozen_box=None)
        )
        _, free = velocity_magnitudes(unpinned)
        free_ratio = float(free[box].max() / free.max())

        assert ratio <= 0.03
        assert ratio <= free_ratio / 3.0
        report("frozen-region suppression",
               f"max |theta| in box / global = {ratio:.2e} "
               f"(recorded envelope 0.03, {free_ratio / ratio:.1f}x below the "
               "unpenalized solve)")
