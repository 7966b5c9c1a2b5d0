"""Proximal-perturbed Lagrangian treatment of equality constraints C = 1.

Multiplier updates follow a fixed first-order recursion; the descent step
that would normally minimize the Lagrangian in the primal variable is played
by the level-set transport, so this module only tracks (z, lambda, mu, delta)
and combines derivative tensors with the current multiplier.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .velocity import DerivativePair

__all__ = ["PplState", "ppl_init", "ppl_update", "combine_derivatives", "lagrangian_value"]


@dataclass(frozen=True)
class PplState:
    """Value-semantics multiplier state; one instance per outer iteration."""

    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    delta: float = 0.5
    r: float = 0.999
    alpha: float = 2000.0
    beta: float = 0.5

    @property
    def nc(self) -> int:
        return len(self.lam)

    @property
    def enabled(self) -> bool:
        """False when the model declares no constraints; the cost is then used bare."""
        return self.nc > 0


def ppl_init(nc: int = 0) -> PplState:
    if nc < 0:
        raise ConfigError("constraint count must be nonnegative")
    return PplState(z=np.zeros(nc), lam=np.zeros(nc), mu=np.zeros(nc))


def ppl_update(state: PplState, constraint_values) -> PplState:
    """One multiplier step for measured constraint values C.

    mu moves toward lam by a vanishing step delta/(|lam-mu|^2+1), lam absorbs
    the constraint violation scaled by alpha/(1+alpha*beta), and z keeps the
    exact identity z = (lam-mu)/alpha. delta decays geometrically.
    """
    c = np.asarray(constraint_values, dtype=float).reshape(-1)
    if c.shape != state.lam.shape:
        raise ConfigError(f"expected {state.nc} constraint values, got {c.size}")
    if not np.all(np.isfinite(c)):
        raise ConfigError("constraint values must be finite")
    gap = state.lam - state.mu
    mu = state.mu + state.delta * gap / (float(gap @ gap) + 1.0)
    lam = mu + state.alpha / (1.0 + state.alpha * state.beta) * (c - 1.0)
    z = (lam - mu) / state.alpha
    return replace(state, z=z, lam=lam, mu=mu, delta=state.r * state.delta)


def combine_derivatives(cost_pair: DerivativePair, constraint_pairs, lam) -> DerivativePair:
    """Weight constraint tensors by the multiplier and add them to the cost's.

    S0 = S0_J + sum_i lam_i S0_Ci and likewise for S1; with no constraints the
    cost pair is returned unchanged.
    """
    weights = np.asarray(lam, dtype=float).reshape(-1)
    constraint_pairs = list(constraint_pairs)
    if len(constraint_pairs) != weights.size:
        raise ConfigError(
            f"{len(constraint_pairs)} constraint tensors for {weights.size} multipliers"
        )
    if weights.size == 0:
        return cost_pair

    def summed(parts):
        live = [(w, f) for w, f in parts if f is not None]
        if not live:
            return None

        def total(space):
            acc = None
            for w, f in live:
                term = w * np.asarray(f(space), dtype=float)
                acc = term if acc is None else acc + term
            return acc

        return total

    s0 = summed([(1.0, cost_pair.s0)] + [(w, p.s0) for w, p in zip(weights, constraint_pairs)])
    s1 = summed([(1.0, cost_pair.s1)] + [(w, p.s1) for w, p in zip(weights, constraint_pairs)])
    return DerivativePair(s0=s0, s1=s1)


def lagrangian_value(cost: float, constraint_values, state: PplState) -> float:
    """L = J + <lam, C-1> + <mu, z> + (alpha/2)|z|^2 + (beta/2)|lam-mu|^2."""
    if state.nc == 0:
        return float(cost)
    c = np.asarray(constraint_values, dtype=float).reshape(-1)
    if c.shape != state.lam.shape:
        raise ConfigError(f"expected {state.nc} constraint values, got {c.size}")
    gap = state.lam - state.mu
    return float(
        cost
        + state.lam @ (c - 1.0)
        + state.mu @ state.z
        + 0.5 * state.alpha * float(state.z @ state.z)
        + 0.5 * state.beta * float(gap @ gap)
    )
