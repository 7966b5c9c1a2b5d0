"""Descent velocities from distributed shape derivatives.

A raw sensitivity is carried as a tensor pair (S0, S1) acting on vector test
fields xi through dJ(xi) = int S0 . xi + S1 : Dxi. The velocity solve picks a
symmetric positive definite form B and returns theta with B(theta, xi) =
-dJ(xi) for all xi, so dJ(theta) = -B(theta, theta) <= 0 and theta is a
smoothed descent direction regardless of how rough the tensors are.
"""

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError
from .fem import (
    DirichletSet,
    FemField,
    SparseSystem,
    apply_dirichlet,
    boundary_normal_matrix,
    mass_matrix,
    stiffness_matrix,
    vector_load,
)

__all__ = ["BilinearSpec", "DerivativePair", "VelocityResult", "VelocitySolver"]


@dataclass(frozen=True)
class BilinearSpec:
    """Weights of the velocity form.

    B(th, xi) = mass_weight * int th . xi
              + stiffness_weight * int Dth : Dxi
              + boundary_normal_penalty * int_bd (th . n)(xi . n)
              + frozen_penalty * int th . xi restricted to the frozen subdomain.

    ``frozen_subdomain`` is a predicate on an ``(m, 2)`` array of points
    returning a boolean mask; it marks a region that must not move and comes
    paired with a positive ``frozen_penalty``. ``zero_dirichlet`` pins the
    velocity to zero on the whole outer boundary.

    Definiteness: stiffness alone has constants in its kernel, so a valid
    spec needs stiffness_weight > 0 plus at least one of zero_dirichlet,
    mass_weight > 0, or boundary_normal_penalty > 0.
    """

    mass_weight: float = 0.0
    stiffness_weight: float = 1.0
    boundary_normal_penalty: float = 0.0
    frozen_subdomain: Optional[Callable] = None
    frozen_penalty: float = 0.0
    zero_dirichlet: bool = False

    def __post_init__(self):
        if min(self.mass_weight, self.boundary_normal_penalty, self.frozen_penalty) < 0:
            raise ConfigError("velocity form weights must be nonnegative")
        if self.stiffness_weight <= 0:
            raise ConfigError("velocity form needs stiffness_weight > 0")
        if not (self.zero_dirichlet or self.mass_weight > 0 or self.boundary_normal_penalty > 0):
            raise ConfigError(
                "velocity form is indefinite: constants are stiffness-kernel fields; "
                "enable zero_dirichlet, a mass term, or a boundary normal penalty"
            )
        if (self.frozen_subdomain is None) != (self.frozen_penalty == 0.0):
            raise ConfigError("frozen_subdomain and a positive frozen_penalty go together")


@dataclass(frozen=True)
class DerivativePair:
    """Tensor representation (S0, S1) of a distributed shape derivative.

    Each component is a closure evaluated on the velocity space's quadrature
    grid: ``s0(space) -> (nt, nq, 2)`` and ``s1(space) -> (nt, nq, 2, 2)``.
    ``None`` stands for an identically zero component.
    """

    s0: Optional[Callable] = None
    s1: Optional[Callable] = None


class VelocityResult(NamedTuple):
    theta: FemField
    form_value: float  # B(theta, theta)
    derivative: float  # dJ(theta), equals -form_value up to solver roundoff


class VelocitySolver:
    """Factorized velocity form, reused across all solves on one mesh.

    The matrix depends only on the spec and the space, never on the tensors,
    so it is assembled and LU-factorized once at construction.
    """

    def __init__(self, spec: BilinearSpec, space):
        if space.value_rank != 2:
            raise ConfigError("velocity solves need a vector-valued space")
        self.spec = spec
        self.space = space
        elems = spec.stiffness_weight * stiffness_matrix(space)
        if spec.mass_weight > 0:
            elems = elems + spec.mass_weight * mass_matrix(space)
        if spec.frozen_subdomain is not None:
            pts = space.quad_points
            inside = np.asarray(spec.frozen_subdomain(pts.reshape(-1, 2)), dtype=bool)
            chi = inside.reshape(pts.shape[:2]).astype(float)
            elems = elems + spec.frozen_penalty * mass_matrix(space, chi)
        matrix = space.assemble_matrix(elems)
        if spec.boundary_normal_penalty > 0:
            facets = np.arange(len(space.mesh.boundary_facets))
            matrix = matrix + spec.boundary_normal_penalty * space.assemble_boundary_matrix(
                facets, boundary_normal_matrix(space, facets)
            )
        self.form_matrix = matrix.tocsr()
        self.bc = DirichletSet.whole_boundary(space) if spec.zero_dirichlet else None
        solvable = self.form_matrix
        if self.bc is not None:
            solvable = apply_dirichlet(
                SparseSystem(self.form_matrix, np.zeros(space.dof_count)), self.bc
            ).matrix
        try:
            self._lu = spla.splu(solvable.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"velocity form factorization failed: {exc}", residual=math.inf)

    def _derivative_vector(self, pair: DerivativePair):
        space = self.space
        vec = np.zeros(space.dof_count)
        if pair.s0 is not None:
            s0_q = np.asarray(pair.s0(space), dtype=float)
            _require_finite(s0_q, "S0")
            vec += space.assemble_vector(vector_load(space, s0_q))
        if pair.s1 is not None:
            s1_q = np.asarray(pair.s1(space), dtype=float)
            _require_finite(s1_q, "S1")
            # int S1 : Dxi for xi = N_a e_c contracts row c of S1 with grad N_a.
            elems = np.einsum("tq,tqcd,tad->tac", space.quad_weights, s1_q, space.grads)
            vec += space.assemble_vector(elems.reshape(len(space.grads), 6))
        return vec

    def solve(self, pair: DerivativePair) -> VelocityResult:
        derivative_vec = self._derivative_vector(pair)
        rhs = -derivative_vec
        if self.bc is not None:
            rhs = rhs.copy()
            rhs[self.bc.dofs] = 0.0
        values = self._lu.solve(rhs)
        form_value = float(values @ (self.form_matrix @ values))
        return VelocityResult(
            FemField(self.space, values), form_value, float(derivative_vec @ values)
        )


def _require_finite(arr, label):
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{label} tensor has non-finite quadrature values")
