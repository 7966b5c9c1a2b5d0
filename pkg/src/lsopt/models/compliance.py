"""Minimum-compliance models under a volume equality constraint.

The structure occupies the subzero set; its complement keeps a weak ersatz
stiffness (factor 1e-4) so the elasticity operator stays invertible on the
whole box. Loads are boundary tractions; the clamped boundary is eliminated
strongly. The adjoint is never solved: it equals -2u.
"""

import numpy as np

from ..errors import ConfigError
from ..fem import (
    DirichletSet,
    FemField,
    FunctionSpace,
    boundary_vector_load,
    elasticity_matrix,
    integrate_scalar,
    strain,
    stress,
)
from ..velocity import BilinearSpec, DerivativePair
from .base import (
    MaterialIndicator,
    ModelProblem,
    LinearProblem,
    as_lame,
    volume_fraction,
    volume_pair,
)

__all__ = ["ComplianceModel", "CompliancePlusModel"]

ERSATZ = 1e-4


class ComplianceModel(ModelProblem):
    """Single traction load: J = integral of A_Omega sigma(u):eps(u).

    Parameters
    ----------
    mesh : RectMesh with boundary tags
    fixed_tags : tags of the clamped boundary (nonempty)
    load_tags : tags of the loaded strip
    traction : length-2 load vector g
    volume : target area of the structure (constraint C = area/volume = 1)
    lame : ElasticCoefficients or (lam, mu); defaults to (1.25, 1.0)
    frozen : optional predicate marking a keep-solid region near the load,
        enforced through the velocity form, not through the state problem
    bilinear : velocity form override
    """

    def __init__(self, mesh, fixed_tags, load_tags, traction, volume,
                 lame=None, frozen=None, bilinear=None):
        self._setup(mesh, fixed_tags, [(traction, load_tags)], volume,
                    lame, frozen, bilinear)

    def _setup(self, mesh, fixed_tags, loads, volume, lame, frozen, bilinear):
        self.space = FunctionSpace(mesh, 2)
        self.lame = as_lame(lame)
        self.material = MaterialIndicator(1.0, ERSATZ)
        if volume <= 0.0:
            raise ConfigError(f"target volume must be positive, got {volume}")
        self.volume = float(volume)
        if mesh.facets_with_tag(fixed_tags).size == 0:
            raise ConfigError(f"no boundary facets carry fixed tags {fixed_tags}")
        self.bc = DirichletSet.on_tags(self.space, fixed_tags)
        self._load_vectors = []
        for traction, tags in loads:
            facets = mesh.facets_with_tag(tags)
            if facets.size == 0:
                raise ConfigError(f"no boundary facets carry load tags {tags}")
            g = np.asarray(traction, dtype=float)
            if g.shape != (2,):
                raise ConfigError(f"traction must be a 2-vector, got shape {g.shape}")
            elems = boundary_vector_load(
                self.space, facets, lambda pts, g=g: np.broadcast_to(g, pts.shape)
            )
            self._load_vectors.append(
                self.space.assemble_boundary_vector(facets, elems)
            )
        if bilinear is not None:
            self._bilinear = bilinear
        else:
            self._bilinear = BilinearSpec(
                mass_weight=0.1,
                stiffness_weight=1.0,
                boundary_normal_penalty=1e4,
                frozen_subdomain=frozen,
                frozen_penalty=1e4 if frozen is not None else 0.0,
            )

    @property
    def constraint_count(self):
        return 1

    def pde(self, phi):
        self._check_level(phi)
        a_q = self.material.at_quad(phi)
        matrix = self.space.assemble_matrix(
            elasticity_matrix(self.space, a_q, self.lame)
        )
        return [
            LinearProblem(self.space, matrix, rhs, self.bc)
            for rhs in self._load_vectors
        ]

    def adjoint(self, phi, states):
        return [FemField(self.space, -2.0 * u.values) for u in states]

    def _energy_density(self, u):
        jac = self.space.grad_at_quad(u.values)
        sig = stress(strain(jac), self.lame)
        return jac, sig, np.einsum("tij,tij->t", sig, strain(jac))

    def cost(self, phi, states):
        self._check_level(phi)
        a_q = self.material.at_quad(phi)
        total = 0.0
        for u in states:
            dens = self._energy_density(u)[2]
            total += integrate_scalar(self.space, a_q * dens[:, None])
        return total

    def constraint(self, phi, states):
        return np.array([volume_fraction(phi, self.volume)])

    def derivative(self, phi, states, adjoints):
        self._check_level(phi)
        a_q = self.material.at_quad(phi)
        nt, nq = a_q.shape
        s1 = np.zeros((nt, nq, 2, 2))
        for u in states:
            jac, sig, dens = self._energy_density(u)
            bulk = 2.0 * np.einsum("tki,tkj->tij", jac, sig)
            bulk -= dens[:, None, None] * np.eye(2)
            s1 += a_q[:, :, None, None] * bulk[:, None, :, :]
        cost_pair = DerivativePair(s1=lambda space: s1)
        return cost_pair, [volume_pair(phi, self.volume)]


class CompliancePlusModel(ComplianceModel):
    """Sum of compliances over several independently applied loads.

    ``loads`` is a list of (traction, load_tags) entries; each spawns its own
    state problem against the shared stiffness operator.
    """

    def __init__(self, mesh, fixed_tags, loads, volume,
                 lame=None, frozen=None, bilinear=None):
        if len(loads) < 2:
            raise ConfigError(
                "compliance sum needs at least two loads; "
                "use ComplianceModel for a single one"
            )
        self._setup(mesh, fixed_tags, list(loads), volume, lame, frozen, bilinear)
