"""Thermal compliance models: distribute conductive material under a heat load.

The conductor occupies the subzero set; the complement keeps contrast 1e-3.
J = integral of A_Omega |grad u|^2 with u the temperature under source f and
a grounded boundary. The adjoint is -u and is never solved. Several
source/sink terms combine into a weighted sum in the plus variant.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError
from ..fem import (
    DirichletSet,
    FemField,
    FunctionSpace,
    integrate_scalar,
    scalar_load,
    stiffness_matrix,
)
from ..velocity import BilinearSpec, DerivativePair
from .base import (
    MaterialIndicator,
    ModelProblem,
    LinearProblem,
    volume_fraction,
    volume_pair,
)

__all__ = ["HeatModel", "HeatTerm", "HeatPlusModel"]

CONTRAST = 1e-3


@dataclass(frozen=True)
class HeatTerm:
    """One source/ground pairing of a summed thermal compliance.

    ``source`` maps points (n, 2) to values (n,); ``source_gradient``, when
    the source varies in space, maps points to (n, 2). Omitting the gradient
    treats the source as (piecewise) constant, dropping the S0 term. A None
    weight means equidistribution over the terms of the sum.
    """

    source: Callable
    fixed_tags: object
    weight: Optional[float] = None
    source_gradient: Optional[Callable] = None


class _TermData:
    """Samples and assembled load of one heat term, fixed at construction."""

    def __init__(self, space, term, weight):
        mesh = space.mesh
        if mesh.facets_with_tag(term.fixed_tags).size == 0:
            raise ConfigError(
                f"no boundary facets carry ground tags {term.fixed_tags}"
            )
        self.bc = DirichletSet.on_tags(space, term.fixed_tags)
        self.weight = weight
        nt, nq = space.quad_weights.shape
        pts = space.quad_points.reshape(-1, 2)
        self.f_q = np.asarray(term.source(pts), dtype=float).reshape(nt, nq)
        if not np.all(np.isfinite(self.f_q)):
            raise ConfigError("heat source evaluates to non-finite values")
        if term.source_gradient is None:
            self.gradf_q = None
        else:
            self.gradf_q = np.asarray(
                term.source_gradient(pts), dtype=float
            ).reshape(nt, nq, 2)
        self.load = space.assemble_vector(scalar_load(space, self.f_q))


class HeatModel(ModelProblem):
    """Single-term thermal compliance with a volume constraint."""

    def __init__(self, mesh, fixed_tags, source, volume,
                 source_gradient=None, bilinear=None):
        term = HeatTerm(source, fixed_tags, 1.0, source_gradient)
        self._setup(mesh, [term], volume, bilinear)

    def _setup(self, mesh, terms, volume, bilinear):
        self.space = FunctionSpace(mesh, 1)
        self.material = MaterialIndicator(1.0, CONTRAST)
        if volume <= 0.0:
            raise ConfigError(f"target volume must be positive, got {volume}")
        self.volume = float(volume)
        default_w = 1.0 / len(terms)
        self._terms = [
            _TermData(self.space, t, default_w if t.weight is None else t.weight)
            for t in terms
        ]
        if bilinear is not None:
            self._bilinear = bilinear
        else:
            self._bilinear = BilinearSpec(
                stiffness_weight=1.0, boundary_normal_penalty=1e4
            )

    @property
    def constraint_count(self):
        return 1

    def pde(self, phi):
        self._check_level(phi)
        a_q = self.material.at_quad(phi)
        matrix = self.space.assemble_matrix(stiffness_matrix(self.space, a_q))
        return [
            LinearProblem(self.space, matrix, t.load, t.bc) for t in self._terms
        ]

    def adjoint(self, phi, states):
        return [
            FemField(self.space, -t.weight * u.values)
            for t, u in zip(self._terms, states)
        ]

    def cost(self, phi, states):
        self._check_level(phi)
        a_q = self.material.at_quad(phi)
        total = 0.0
        for t, u in zip(self._terms, states):
            g = self.space.grad_at_quad(u.values)
            dens = np.einsum("td,td->t", g, g)
            total += t.weight * integrate_scalar(self.space, a_q * dens[:, None])
        return total

    def constraint(self, phi, states):
        return np.array([volume_fraction(phi, self.volume)])

    def derivative(self, phi, states, adjoints):
        self._check_level(phi)
        a_q = self.material.at_quad(phi)
        nt, nq = a_q.shape
        s0 = np.zeros((nt, nq, 2))
        s1 = np.zeros((nt, nq, 2, 2))
        any_s0 = False
        for t, u in zip(self._terms, states):
            u_q = self.space.at_quad(u.values)
            g = self.space.grad_at_quad(u.values)
            dens = np.einsum("td,td->t", g, g)
            if t.gradf_q is not None:
                s0 += t.weight * 2.0 * u_q[:, :, None] * t.gradf_q
                any_s0 = True
            scal = 2.0 * u_q * t.f_q - a_q * dens[:, None]
            outer = np.einsum("ti,tj->tij", g, g)
            s1 += t.weight * (
                scal[:, :, None, None] * np.eye(2)
                + 2.0 * a_q[:, :, None, None] * outer[:, None, :, :]
            )
        cost_pair = DerivativePair(
            s0=(lambda space: s0) if any_s0 else None,
            s1=lambda space: s1,
        )
        return cost_pair, [volume_pair(phi, self.volume)]


class HeatPlusModel(HeatModel):
    """Weighted sum of thermal compliances over several source/ground terms."""

    def __init__(self, mesh, terms, volume, bilinear=None):
        if len(terms) < 2:
            raise ConfigError(
                "heat sum needs at least two terms; use HeatModel for one"
            )
        self._setup(mesh, list(terms), volume, bilinear)
