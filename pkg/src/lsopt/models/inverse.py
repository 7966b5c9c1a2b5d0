"""Inclusion recovery from boundary force/displacement measurements.

The unknown stiff inclusion (contrast kappa) is the subzero set. For every
measurement pair, two states are solved against the same operator: u driven
by the applied traction f, and a lifted correction v in H^1_0 carrying the
measured displacement g. The misfit between u and y = v + g, in the bulk
and on the measured boundary, is the cost. There is no volume constraint.

Ground-truth data for twin experiments comes from a finer nested mesh:
solve with the true inclusion, restrict the trace, extend harmonically.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..fem import (
    DirichletSet,
    FemField,
    FunctionSpace,
    SparseSystem,
    apply_dirichlet,
    boundary_vector_load,
    elasticity_matrix,
    integrate_boundary,
    integrate_scalar,
    mass_matrix,
    scalar_load,
    solve_linear,
    stiffness_matrix,
    strain,
    stress,
    vector_load,
)
from ..velocity import BilinearSpec, DerivativePair
from .base import MaterialIndicator, ModelProblem, LinearProblem, as_lame

__all__ = [
    "MeasurementPair",
    "InverseElasticityModel",
    "dirichlet_extension",
    "generate_measurements",
]


@dataclass(frozen=True)
class MeasurementPair:
    """One experiment: a traction on a boundary strip and the displacement
    field it produced, already extended into the bulk."""

    traction: object
    force_tags: object
    measured: FemField


def _tag_tuple(tags):
    if isinstance(tags, (int, np.integer)):
        return (int(tags),)
    return tuple(int(t) for t in tags)


def _assemble_traction(space, tags, traction):
    facets = space.mesh.facets_with_tag(tags)
    if facets.size == 0:
        raise ConfigError(f"no boundary facets carry force tags {tags}")
    if callable(traction):
        g = traction
    else:
        vec = np.asarray(traction, dtype=float)
        if vec.shape != (2,):
            raise ConfigError(f"traction must be a 2-vector, got shape {vec.shape}")
        g = lambda pts: np.broadcast_to(vec, pts.shape)
    elems = boundary_vector_load(space, facets, g)
    return space.assemble_boundary_vector(facets, elems)


class InverseElasticityModel(ModelProblem):
    """Kohn-Vogelius style misfit over measurement pairs.

    J = sum_k alpha/2 |u_k - v_k - g_k|^2_D  +  beta/2 |u_k - g_k|^2_Gamma1.

    States are listed u_1..u_N then v_1..v_N; adjoints p_1..p_N then
    q_1..q_N, matching positions. The gradient of eps(g), which vanishes
    elementwise for nodal fields, is kept alive by projecting each strain
    component onto the nodal space once and differentiating the projection.
    """

    def __init__(self, mesh, fixed_tags, measured_tags, pairs,
                 contrast=10.0, alpha=1.0, beta=1.0, lame=None, bilinear=None):
        if not pairs:
            raise ConfigError("need at least one measurement pair")
        self.space = FunctionSpace(mesh, 2)
        self.lame = as_lame(lame)
        self.material = MaterialIndicator(contrast, 1.0)
        self.alpha = float(alpha)
        self.beta = float(beta)
        if min(self.alpha, self.beta) < 0.0:
            raise ConfigError("misfit weights must be nonnegative")
        if mesh.facets_with_tag(fixed_tags).size == 0:
            raise ConfigError(f"no boundary facets carry fixed tags {fixed_tags}")
        self.bc_partial = DirichletSet.on_tags(self.space, fixed_tags)
        self.bc_total = DirichletSet.whole_boundary(self.space)
        self.measured_facets = mesh.facets_with_tag(measured_tags)
        if self.measured_facets.size == 0:
            raise ConfigError(
                f"no boundary facets carry measurement tags {measured_tags}"
            )
        self.pairs = list(pairs)
        self._force_loads = []
        self._jac_g = []
        self._grad_eps_g = []
        scalar = FunctionSpace(mesh, 1)
        mass = scalar.assemble_matrix(mass_matrix(scalar))
        for pair in self.pairs:
            g = pair.measured
            if not isinstance(g, FemField) or g.space.value_rank != 2:
                raise ConfigError("measured displacement must be a vector field")
            if g.space.mesh is not mesh:
                raise ConfigError("measured displacement lives on another mesh")
            self._force_loads.append(
                _assemble_traction(self.space, pair.force_tags, pair.traction)
            )
            jac = self.space.grad_at_quad(g.values)
            self._jac_g.append(jac)
            self._grad_eps_g.append(self._project_strain_gradient(scalar, mass, jac))
        if bilinear is not None:
            self._bilinear = bilinear
        else:
            self._bilinear = BilinearSpec(
                mass_weight=0.1, stiffness_weight=1.0, zero_dirichlet=True
            )

    @staticmethod
    def _project_strain_gradient(scalar, mass, jac_g):
        """Gradients of the nodal projections of eps(g): (nt, 2, 2, 2)."""
        eps = strain(jac_g)
        nt, nq = scalar.quad_weights.shape
        out = np.empty((nt, 2, 2, 2))
        for i, j in ((0, 0), (0, 1), (1, 1)):
            comp_q = np.broadcast_to(eps[:, i, j][:, None], (nt, nq))
            rhs = scalar.assemble_vector(scalar_load(scalar, comp_q))
            nodal = solve_linear(SparseSystem(mass, rhs))
            out[:, i, j, :] = scalar.grad_at_quad(nodal)
        out[:, 1, 0, :] = out[:, 0, 1, :]
        return out

    def _operator(self, phi):
        a_q = self.material.at_quad(phi)
        matrix = self.space.assemble_matrix(
            elasticity_matrix(self.space, a_q, self.lame)
        )
        return a_q, matrix

    def pde(self, phi):
        self._check_level(phi)
        matrix = self._operator(phi)[1]
        forced = [
            LinearProblem(self.space, matrix, rhs, self.bc_partial)
            for rhs in self._force_loads
        ]
        lifted = [
            LinearProblem(
                self.space, matrix, -(matrix @ p.measured.values), self.bc_total
            )
            for p in self.pairs
        ]
        return forced + lifted

    def _misfits(self, states):
        """Per-pair (u, v, bulk misfit at quad, trace misfit at facet quad)."""
        n = len(self.pairs)
        out = []
        for pair, u, v in zip(self.pairs, states[:n], states[n:]):
            bulk = self.space.at_quad(u.values - v.values - pair.measured.values)
            tr = self.space.at_facet_quad(
                u.values - pair.measured.values, self.measured_facets
            )
            out.append((u, v, bulk, tr))
        return out

    def adjoint(self, phi, states):
        self._check_level(phi)
        matrix = self._operator(phi)[1]
        head, tail = [], []
        for _, _, bulk, tr in self._misfits(states):
            vol_vec = self.space.assemble_vector(vector_load(self.space, bulk))
            bnd_vec = self.space.assemble_boundary_vector(
                self.measured_facets,
                boundary_vector_load(self.space, self.measured_facets, tr),
            )
            head.append(LinearProblem(
                self.space, matrix,
                -self.alpha * vol_vec - self.beta * bnd_vec, self.bc_partial,
            ))
            tail.append(LinearProblem(
                self.space, matrix, self.alpha * vol_vec, self.bc_total,
            ))
        return head + tail

    def cost(self, phi, states):
        self._check_level(phi)
        total = 0.0
        for _, _, bulk, tr in self._misfits(states):
            total += 0.5 * self.alpha * integrate_scalar(
                self.space, np.einsum("tqc,tqc->tq", bulk, bulk)
            )
            total += 0.5 * self.beta * integrate_boundary(
                self.space, self.measured_facets,
                np.einsum("fqc,fqc->fq", tr, tr),
            )
        return total

    def derivative(self, phi, states, adjoints):
        self._check_level(phi)
        a_q = self.material.at_quad(phi)
        n = len(self.pairs)
        nt, nq = a_q.shape
        eye = np.eye(2)
        s0 = np.zeros((nt, nq, 2))
        s1 = np.zeros((nt, nq, 2, 2))
        misfits = self._misfits(states)
        for k, (u, v, bulk, _) in enumerate(misfits):
            p, q = adjoints[k], adjoints[n + k]
            jac_u = self.space.grad_at_quad(u.values)
            jac_v = self.space.grad_at_quad(v.values)
            jac_p = self.space.grad_at_quad(p.values)
            jac_q = self.space.grad_at_quad(q.values)
            jac_g = self._jac_g[k]
            sig_u = stress(strain(jac_u), self.lame)
            sig_p = stress(strain(jac_p), self.lame)
            sig_q = stress(strain(jac_q), self.lame)
            sig_y = stress(strain(jac_v + jac_g), self.lame)

            s0 -= self.alpha * np.einsum("tji,tqj->tqi", jac_g, bulk)
            drift = np.einsum("tij,tijk->tk", sig_q, self._grad_eps_g[k])
            s0 += a_q[:, :, None] * drift[:, None, :]

            scal = 0.5 * self.alpha * np.einsum("tqc,tqc->tq", bulk, bulk)
            pairing = (
                np.einsum("tij,tij->t", sig_u, strain(jac_p))
                + np.einsum("tij,tij->t", sig_y, strain(jac_q))
            )
            scal = scal + a_q * pairing[:, None]
            mat = (
                np.einsum("tki,tkj->tij", jac_u, sig_p)
                + np.einsum("tki,tkj->tij", jac_p, sig_u)
                + np.einsum("tki,tkj->tij", jac_v, sig_q)
                + np.einsum("tki,tkj->tij", jac_q, sig_y)
            )
            s1 += scal[:, :, None, None] * eye
            s1 -= a_q[:, :, None, None] * mat[:, None, :, :]
        cost_pair = DerivativePair(
            s0=lambda space: s0, s1=lambda space: s1
        )
        return cost_pair, []


def dirichlet_extension(mesh, tags, traces):
    """Harmonic extension of boundary data given on the tagged facets.

    Every trace is a full field on one shared space; only its values on the
    tagged boundary nodes matter. Componentwise Laplace for vector fields.
    """
    if not traces:
        raise ConfigError("no boundary traces to extend")
    space = traces[0].space
    if space.mesh is not mesh:
        raise ConfigError("traces live on another mesh")
    facets = mesh.facets_with_tag(tags)
    if facets.size == 0:
        raise ConfigError(f"no boundary facets carry tags {tags}")
    nodes = np.unique(mesh.boundary_facets[facets])
    if space.value_rank == 1:
        dofs = nodes
    else:
        dofs = np.column_stack([2 * nodes, 2 * nodes + 1]).reshape(-1)
    matrix = space.assemble_matrix(stiffness_matrix(space))
    out = []
    for trace in traces:
        if trace.space is not space:
            raise ConfigError("all traces must share one space")
        bc = DirichletSet(dofs, np.asarray(trace.values, dtype=float)[dofs])
        system = apply_dirichlet(
            SparseSystem(matrix, np.zeros(space.dof_count)), bc
        )
        out.append(FemField(space, solve_linear(system)))
    return out


def _vertex_injection(fine_mesh, coarse_mesh):
    """Fine vertex index of every coarse vertex; requires nested meshes."""
    def keys(pts):
        return np.round(pts * 1e9).astype(np.int64)

    lookup = {tuple(k): i for i, k in enumerate(keys(fine_mesh.vertices))}
    idx = np.empty(coarse_mesh.num_vertices, dtype=np.int64)
    for c, k in enumerate(keys(coarse_mesh.vertices)):
        hit = lookup.get(tuple(k))
        if hit is None:
            raise ConfigError(
                "meshes are not nested: a coarse vertex is missing from the fine mesh"
            )
        idx[c] = hit
    return idx


def generate_measurements(fine_mesh, coarse_mesh, inclusion, forces,
                          fixed_tags, measured_tags, contrast=10.0, lame=None):
    """Twin-experiment data: solve with the true inclusion on the fine mesh,
    restrict each displacement trace to the coarse boundary, extend inward.

    ``inclusion`` maps points (n, 2) to level values (negative inside);
    ``forces`` is a list of (traction, force_tags). Both meshes must carry
    the same boundary tagging and the fine one must contain every coarse
    vertex (2x refinement does).
    """
    if not forces:
        raise ConfigError("no forces given")
    injection = _vertex_injection(fine_mesh, coarse_mesh)
    lame = as_lame(lame)
    material = MaterialIndicator(contrast, 1.0)

    fine_scalar = FunctionSpace(fine_mesh, 1)
    level = fine_scalar.interpolate(inclusion)
    chi = (fine_scalar.at_quad(level.values) < 0.0).astype(float)
    a_q = material.inside * chi + material.outside * (1.0 - chi)

    fine_space = FunctionSpace(fine_mesh, 2)
    if fine_mesh.facets_with_tag(fixed_tags).size == 0:
        raise ConfigError(f"no boundary facets carry fixed tags {fixed_tags}")
    bc = DirichletSet.on_tags(fine_space, fixed_tags)
    matrix = fine_space.assemble_matrix(
        elasticity_matrix(fine_space, a_q, lame)
    )

    coarse_space = FunctionSpace(coarse_mesh, 2)
    injected = []
    for traction, tags in forces:
        load = _assemble_traction(fine_space, tags, traction)
        system = apply_dirichlet(SparseSystem(matrix, load), bc)
        fine_u = solve_linear(system).reshape(-1, 2)
        injected.append(
            FemField(coarse_space, fine_u[injection].reshape(-1))
        )
    # the clamp is part of the measurement: those nodes carry known zeros
    extended = dirichlet_extension(
        coarse_mesh, _tag_tuple(fixed_tags) + _tag_tuple(measured_tags), injected
    )
    return [
        MeasurementPair(traction, tags, g)
        for (traction, tags), g in zip(forces, extended)
    ]
