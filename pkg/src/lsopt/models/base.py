"""Shared contract for the optimization models.

A model owns one state space on one mesh and exposes six capabilities:
``pde``, ``adjoint``, ``cost``, ``constraint``, ``derivative`` and
``bilinear_form``. State and adjoint systems are returned as declarative
problem records so the caller decides how (and how concurrently) to solve
them; everything a problem record captures is immutable for fixed phi.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError
from ..fem import (
    DirichletSet,
    FemField,
    FunctionSpace,
    SparseSystem,
    apply_dirichlet,
    integrate_scalar,
    solve_linear,
    solve_newton,
)
from ..velocity import DerivativePair

__all__ = [
    "LinearProblem",
    "NewtonProblem",
    "solve_problem",
    "resolve_adjoints",
    "ModelProblem",
    "MaterialIndicator",
    "ElasticCoefficients",
    "as_lame",
    "volume_fraction",
    "volume_pair",
]


@dataclass
class LinearProblem:
    """One assembled linear state or adjoint system.

    ``matrix`` is the raw (pre-elimination) operator; boundary conditions
    are applied at solve time so several problems may share one matrix.
    """

    space: FunctionSpace
    matrix: object
    rhs: np.ndarray
    bc: Optional[DirichletSet] = None


@dataclass
class NewtonProblem:
    """A nonlinear system handed to the Newton driver.

    ``residual(u) -> (n,)`` and ``jacobian(u) -> sparse`` act on raw dof
    vectors. ``norms`` is filled by :func:`solve_problem` with the residual
    history of the last solve.
    """

    space: FunctionSpace
    residual: Callable
    jacobian: Callable
    init: np.ndarray
    bc: Optional[DirichletSet] = None
    tol: float = 1e-10
    max_iter: int = 25
    norms: Optional[list] = field(default=None, compare=False)


def solve_problem(problem, x0=None) -> FemField:
    """Solve a problem record, returning the solution field."""
    if isinstance(problem, NewtonProblem):
        values, norms = solve_newton(
            problem.residual,
            problem.jacobian,
            problem.init,
            bc=problem.bc,
            tol=problem.tol,
            max_iter=problem.max_iter,
        )
        problem.norms = norms
        return FemField(problem.space, values)
    system = apply_dirichlet(SparseSystem(problem.matrix, problem.rhs), problem.bc)
    return FemField(problem.space, solve_linear(system, x0=x0))


def resolve_adjoints(model, phi, states):
    """Adjoint fields for given states, solving where no closed form exists."""
    out = []
    for item in model.adjoint(phi, states):
        out.append(item if isinstance(item, FemField) else solve_problem(item))
    return out


@dataclass(frozen=True)
class MaterialIndicator:
    """Two-phase coefficient switched by the sign of the level set.

    Evaluates to ``inside`` where phi < 0 and ``outside`` elsewhere, sampled
    at quadrature points. Both values must stay positive so the operators
    remain coercive (the outside value is the ersatz/contrast constant).
    """

    inside: float
    outside: float

    def __post_init__(self):
        if min(self.inside, self.outside) <= 0.0:
            raise ConfigError(
                f"material values must be positive, got "
                f"({self.inside}, {self.outside})"
            )

    def at_quad(self, phi):
        chi = phi.indicator_quad()
        return self.inside * chi + self.outside * (1.0 - chi)


@dataclass(frozen=True)
class ElasticCoefficients:
    """Lame pair for the isotropic stress law sigma = lam tr(eps) I + 2 mu eps."""

    lam: float = 1.25
    mu: float = 1.0

    def __post_init__(self):
        if self.lam <= 0.0 or self.mu <= 0.0:
            raise ConfigError(f"Lame parameters must be positive, got {self}")

    @property
    def pair(self):
        return (self.lam, self.mu)


def as_lame(value) -> tuple:
    """Normalize a Lame specification to a plain (lam, mu) tuple."""
    if value is None:
        return ElasticCoefficients().pair
    if isinstance(value, ElasticCoefficients):
        return value.pair
    lam, mu = value
    return ElasticCoefficients(float(lam), float(mu)).pair


def volume_fraction(phi, volume) -> float:
    """Subzero area divided by the target volume; the raw constraint value."""
    return integrate_scalar(phi.space, phi.indicator_quad()) / volume


def volume_pair(phi, volume) -> DerivativePair:
    """Tensor pair of the normalized volume constraint: S1 = chi/V * I."""
    s1 = phi.indicator_quad()[:, :, None, None] * (np.eye(2) / volume)
    return DerivativePair(s1=lambda space: s1)


class ModelProblem:
    """Base class wiring the capability contract.

    Subclasses set ``self.space`` (the state space), ``self._bilinear`` and
    implement the abstract methods. ``phi`` arguments are level-set fields
    living on the same mesh as the state space.
    """

    space: FunctionSpace

    def pde(self, phi) -> list:
        raise NotImplementedError

    def adjoint(self, phi, states) -> list:
        raise NotImplementedError

    def cost(self, phi, states) -> float:
        raise NotImplementedError

    def constraint(self, phi, states) -> np.ndarray:
        return np.zeros(0)

    def derivative(self, phi, states, adjoints):
        raise NotImplementedError

    def bilinear_form(self):
        return self._bilinear

    @property
    def constraint_count(self) -> int:
        return 0

    def _check_level(self, phi):
        if phi.space.mesh is not self.space.mesh:
            raise ConfigError("level set and model live on different meshes")
