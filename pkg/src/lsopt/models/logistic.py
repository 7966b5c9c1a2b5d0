"""Population-maximizing design for a diffusive logistic steady state.

The habitat's carrying capacity is K = 1 on the subzero set and 1e-2 on the
complement. The state is the nonlinear steady state of u_t = div(grad u) +
r u (1 - u/K) with natural boundary conditions; the cost is the negative
total population. Its adjoint problem is linear.
"""

import math

import numpy as np

from ..errors import ConfigError
from ..fem import (
    FemField,
    FunctionSpace,
    integrate_scalar,
    mass_matrix,
    scalar_load,
    stiffness_matrix,
)
from ..velocity import BilinearSpec, DerivativePair
from .base import (
    MaterialIndicator,
    ModelProblem,
    LinearProblem,
    NewtonProblem,
    volume_fraction,
    volume_pair,
)

__all__ = ["LogisticModel", "default_population_guess"]

CAPACITY_CONTRAST = 1e-2


def default_population_guess(pts):
    """Symmetry-breaking Newton start: 1 + 0.2 sin(6 pi x) sin(6 pi y)."""
    return 1.0 + 0.2 * np.sin(6.0 * math.pi * pts[:, 0]) * np.sin(
        6.0 * math.pi * pts[:, 1]
    )


class LogisticModel(ModelProblem):
    """Maximize total population under a habitat-area constraint.

    ``growth`` is the intrinsic rate r > 0. The Newton initial guess is a
    closure on vertex coordinates; the default perturbs the constant 1.
    """

    def __init__(self, mesh, growth, volume, initial_guess=None, bilinear=None):
        if growth <= 0.0:
            raise ConfigError(f"growth rate must be positive, got {growth}")
        self.growth = float(growth)
        self.space = FunctionSpace(mesh, 1)
        self.material = MaterialIndicator(1.0, CAPACITY_CONTRAST)
        if volume <= 0.0:
            raise ConfigError(f"target volume must be positive, got {volume}")
        self.volume = float(volume)
        guess = initial_guess if initial_guess is not None else default_population_guess
        self._init_values = self.space.interpolate(guess).values
        self._stiffness = self.space.assemble_matrix(stiffness_matrix(self.space))
        self._ones_load = self.space.assemble_vector(
            scalar_load(self.space, np.ones_like(self.space.quad_weights))
        )
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
        k_q = self.material.at_quad(phi)
        r = self.growth
        space, stiff = self.space, self._stiffness

        def residual(values):
            u_q = space.at_quad(values)
            reaction = r * u_q * (1.0 - u_q / k_q)
            return stiff @ values - space.assemble_vector(
                scalar_load(space, reaction)
            )

        def jacobian(values):
            u_q = space.at_quad(values)
            coeff = r * (1.0 - 2.0 * u_q / k_q)
            return stiff - space.assemble_matrix(mass_matrix(space, coeff))

        return [
            NewtonProblem(space, residual, jacobian, self._init_values.copy())
        ]

    def adjoint(self, phi, states):
        self._check_level(phi)
        k_q = self.material.at_quad(phi)
        u_q = self.space.at_quad(states[0].values)
        coeff = self.growth * (2.0 * u_q / k_q - 1.0)
        matrix = self._stiffness + self.space.assemble_matrix(
            mass_matrix(self.space, coeff)
        )
        return [LinearProblem(self.space, matrix, self._ones_load, None)]

    def cost(self, phi, states):
        return -integrate_scalar(self.space, self.space.at_quad(states[0].values))

    def constraint(self, phi, states):
        return np.array([volume_fraction(phi, self.volume)])

    def derivative(self, phi, states, adjoints):
        self._check_level(phi)
        k_q = self.material.at_quad(phi)
        u, p = states[0], adjoints[0]
        u_q = self.space.at_quad(u.values)
        p_q = self.space.at_quad(p.values)
        gu = self.space.grad_at_quad(u.values)
        gp = self.space.grad_at_quad(p.values)
        reaction = self.growth * u_q * (1.0 - u_q / k_q)
        scal = np.einsum("td,td->t", gu, gp)[:, None] - u_q - reaction * p_q
        cross = np.einsum("ti,tj->tij", gu, gp)
        mat = cross + np.swapaxes(cross, -1, -2)
        s1 = scal[:, :, None, None] * np.eye(2) - mat[:, None, :, :]
        cost_pair = DerivativePair(s1=lambda space: s1)
        return cost_pair, [volume_pair(phi, self.volume)]
