"""Multiplier recursion against hand-evaluated tables and exact identities."""

import numpy as np
import pytest

from lsopt.errors import ConfigError
from lsopt.fem import FunctionSpace
from lsopt.mesh import build_rect_mesh
from lsopt.ppl import combine_derivatives, lagrangian_value, ppl_init, ppl_update
from lsopt.velocity import DerivativePair

STEP = 2000.0 / 1001.0  # alpha/(1+alpha*beta) with the default parameters


class TestInit:
    def test_defaults(self):
        state = ppl_init(1)
        assert state.r == 0.999
        assert state.delta == 0.5
        assert state.alpha == 2000.0
        assert state.beta == 0.5
        assert state.lam.shape == state.mu.shape == state.z.shape == (1,)
        assert not state.lam.any() and not state.mu.any() and not state.z.any()

    def test_no_constraints_sentinel(self):
        state = ppl_init(0)
        assert not state.enabled
        assert state.nc == 0

    def test_two_constraints(self):
        state = ppl_init(2)
        assert state.enabled
        np.testing.assert_array_equal(state.lam, np.zeros(2))

    def test_negative_count_rejected(self):
        with pytest.raises(ConfigError):
            ppl_init(-1)


class TestUpdate:
    def test_satisfied_constraint_keeps_zeros(self):
        state = ppl_update(ppl_init(1), [1.0])
        assert state.lam[0] == 0.0
        assert state.mu[0] == 0.0
        assert state.z[0] == 0.0
        assert state.delta == pytest.approx(0.4995, abs=1e-15)

    def test_hand_table_first_step(self):
        state = ppl_update(ppl_init(1), [1.1])
        assert state.mu[0] == 0.0
        assert abs(state.lam[0] - STEP * 0.1) <= 1e-9
        assert abs(state.lam[0] - 0.199800) <= 1e-6
        assert abs(state.z[0] - 9.99001e-5) <= 1e-9
        assert abs(state.delta - 0.4995) <= 1e-15

    def test_hand_table_second_step(self):
        state = ppl_update(ppl_update(ppl_init(1), [1.1]), [1.05])
        lam1 = STEP * 0.1
        mu2 = 0.4995 * lam1 / (lam1**2 + 1.0)
        lam2 = mu2 + STEP * 0.05
        assert abs(state.mu[0] - mu2) <= 1e-9
        assert abs(state.lam[0] - lam2) <= 1e-9
        assert abs(state.mu[0] - 0.09596907) <= 1e-7
        assert abs(state.lam[0] - 0.19586917) <= 1e-7
        assert abs(state.z[0] - (lam2 - mu2) / 2000.0) <= 1e-12
        assert state.delta == pytest.approx(0.999**2 * 0.5, abs=1e-15)

    def test_invariants_over_many_updates(self):
        rng = np.random.default_rng(7)
        state = ppl_init(3)
        delta = 0.5
        for _ in range(40):
            state = ppl_update(state, 1.0 + 0.2 * rng.standard_normal(3))
            delta *= 0.999
            np.testing.assert_array_equal(state.z, (state.lam - state.mu) / state.alpha)
            assert state.delta == delta

    def test_pure_function(self):
        state = ppl_update(ppl_init(2), [1.2, 0.9])
        a = ppl_update(state, [1.05, 1.01])
        b = ppl_update(state, [1.05, 1.01])
        np.testing.assert_array_equal(a.lam, b.lam)
        np.testing.assert_array_equal(a.mu, b.mu)
        assert state.delta == 0.4995  # input untouched

    def test_bad_inputs(self):
        with pytest.raises(ConfigError):
            ppl_update(ppl_init(1), [1.0, 2.0])
        with pytest.raises(ConfigError):
            ppl_update(ppl_init(1), [np.nan])


class TestLagrangian:
    def test_zero_state_gives_cost(self):
        assert lagrangian_value(3.25, [1.0], ppl_init(1)) == 3.25

    def test_hand_arithmetic(self):
        state = ppl_init(1)
        state = state.__class__(
            z=np.array([5e-4]), lam=np.array([1.0]), mu=np.array([0.0]),
            delta=state.delta, r=state.r, alpha=state.alpha, beta=state.beta,
        )
        # J + lam(C-1) + mu z + alpha/2 z^2 + beta/2 (lam-mu)^2
        expected = 0.0 + 0.1 + 0.0 + 1000.0 * 25e-8 + 0.25
        assert lagrangian_value(0.0, [1.1], state) == pytest.approx(expected, abs=1e-15)

    def test_disabled_returns_cost(self):
        assert lagrangian_value(-7.5, [], ppl_init(0)) == -7.5


class TestCombine:
    @staticmethod
    def space():
        return FunctionSpace(build_rect_mesh((0.0, 0.0, 1.0, 1.0), 3, 3), value_rank=2)

    @staticmethod
    def pair(scale):
        def s0(space):
            return scale * space.quad_points

        def s1(space):
            x = space.quad_points[..., 0]
            out = np.zeros(x.shape + (2, 2))
            out[..., 0, 0] = scale * x
            out[..., 1, 1] = scale
            return out

        return DerivativePair(s0=s0, s1=s1)

    def test_zero_multiplier_reproduces_cost_pair(self):
        space = self.space()
        combined = combine_derivatives(self.pair(1.0), [self.pair(9.0)], [0.0])
        np.testing.assert_allclose(combined.s0(space), self.pair(1.0).s0(space))
        np.testing.assert_allclose(combined.s1(space), self.pair(1.0).s1(space))

    def test_linearity(self):
        space = self.space()
        zero = DerivativePair()
        combined = combine_derivatives(zero, [self.pair(1.0)], [2.0])
        np.testing.assert_allclose(combined.s0(space), 2.0 * self.pair(1.0).s0(space))
        np.testing.assert_allclose(combined.s1(space), 2.0 * self.pair(1.0).s1(space))

    def test_no_constraints_returns_same_object(self):
        pair = self.pair(1.0)
        assert combine_derivatives(pair, [], np.zeros(0)) is pair

    def test_none_components_stay_none(self):
        combined = combine_derivatives(DerivativePair(), [DerivativePair()], [1.0])
        assert combined.s0 is None and combined.s1 is None

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            combine_derivatives(self.pair(1.0), [self.pair(1.0)], [0.1, 0.2])
