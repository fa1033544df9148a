import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import random_stable
from l2game.errors import InvalidHorizon, ValidationError
from l2game.system import (
    BlockSystem,
    BlockVector,
    ClosedFormControl,
    FunctionControl,
    PiecewiseConstantControl,
    QuadratureSpec,
    ZeroControl,
    free_decay,
    is_admissible,
    l2_energy,
    propagate,
    trajectory,
)


def _random_system(rng, n=6, dims=(2, 4)):
    blocks = [random_stable(rng, int(rng.integers(dims[0], dims[1] + 1))) for _ in range(n)]
    return BlockSystem(blocks)


def _random_vector(rng, system, tail=0.0):
    return BlockVector([rng.standard_normal(d) for d in system.dims], tail)


def _smooth_forcing(rng, size, horizon):
    c = rng.standard_normal((3, size))
    f = lambda ts: c[0] + np.outer(np.sin(1.3 * ts), c[1]) + np.outer(np.exp(-0.5 * ts), c[2])
    return FunctionControl(lambda ts: f(np.asarray(ts)).reshape(-1, size), size, horizon)


class TestBlockSystem:
    def test_layout(self, rng):
        sys = BlockSystem([-np.eye(2), random_stable(rng, 3), -2 * np.eye(2)])
        assert sys.dims == (2, 3, 2)
        assert sys.offsets == (0, 2, 5, 7)
        assert sys.size == 7
        assert [g.dim for g in sys.groups] == [2, 3]
        np.testing.assert_array_equal(sys.groups[0].index, [0, 2])

    def test_unstable_block_rejected_with_index(self):
        with pytest.raises(ValidationError, match=r"block 1: spectral abscissa 0 >= 0"):
            BlockSystem([-np.eye(2), [[0.0, 1.0], [-1.0, 0.0]]])

    def test_dim1_needs_oracle_mode(self):
        with pytest.raises(ValidationError):
            BlockSystem([[[-1.0]]])
        assert BlockSystem([[[-1.0]]], allow_dim1=True).size == 1

    def test_dim_above_dmax_rejected(self):
        with pytest.raises(ValidationError):
            BlockSystem([-np.eye(9)])
        assert BlockSystem([-np.eye(9)], d_max=9).size == 9

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            BlockSystem([])

    def test_alpha_min(self):
        sys = BlockSystem([-np.eye(2), np.diag([-0.4, -5.0])])
        assert sys.alpha_min == pytest.approx(0.4)

    def test_vector_shape_checked(self, unit_system):
        sys, _ = unit_system
        with pytest.raises(ValidationError):
            propagate(sys, BlockVector([[1.0, 0.0, 0.0]]), None, 1.0)


class TestBlockVector:
    def test_norm_includes_tail(self):
        x = BlockVector([[3.0, 0.0], [0.0, 0.0, 0.0]], tail_bound=4.0)
        assert x.retained_norm == 3.0
        assert x.norm == 5.0
        np.testing.assert_array_equal(x.block_norms(), [3.0, 0.0])

    def test_arithmetic_and_tail_triangle(self):
        x = BlockVector([[1.0, 2.0]], 0.5)
        y = BlockVector([[3.0, -1.0]], 0.25)
        np.testing.assert_array_equal((x + y).flat, [4.0, 1.0])
        assert (x + y).tail_bound == 0.75
        assert (x - y).tail_bound == 0.75
        np.testing.assert_array_equal((2.0 * x).flat, [2.0, 4.0])
        assert (-x).tail_bound == 0.5

    def test_rejects_negative_tail_and_nan(self):
        with pytest.raises(ValidationError):
            BlockVector([[1.0, 0.0]], -1.0)
        with pytest.raises(ValidationError):
            BlockVector([[np.nan, 0.0]])

    def test_from_flat_roundtrip(self):
        x = BlockVector.from_flat((2, 3), np.arange(5.0), 0.1)
        assert [p.tolist() for p in x.parts] == [[0.0, 1.0], [2.0, 3.0, 4.0]]
        with pytest.raises(ValidationError):
            BlockVector.from_flat((2, 3), np.arange(4.0))

    def test_immutable(self):
        x = BlockVector([[1.0, 2.0]])
        with pytest.raises(ValueError):
            x.flat[0] = 5.0


class TestPropagate:
    def test_scalar_decay(self, unit_system):
        sys, x0 = unit_system
        np.testing.assert_allclose(propagate(sys, x0, None, math.log(2.0)).flat, [0.5, 0.0], rtol=1e-15)

    def test_t_zero_returns_x0_exactly(self, rng, unit_system):
        sys, x0 = unit_system
        w = ClosedFormControl("constant", [3.0, 4.0], 1.0)
        assert np.array_equal(propagate(sys, x0, w, 0.0).flat, x0.flat)

    def test_closed_form_steering(self, unit_system):
        sys, x0 = unit_system
        tau = 0.5 * math.log(3.0)
        w = ClosedFormControl("exponential", [-1.0, 0.0], tau, rate=1.0)
        assert propagate(sys, x0, w, tau).retained_norm <= 1e-13

    def test_matches_adaptive_oracle(self, rng):
        sys = _random_system(rng, 4)
        x0 = _random_vector(rng, sys)
        t = 2.3
        w = _smooth_forcing(rng, sys.size, t)
        got = propagate(sys, x0, w, t)
        for i, a in enumerate(sys.blocks):
            lo, hi = sys.offsets[i], sys.offsets[i + 1]
            f = lambda s: scipy.linalg.expm((t - s) * a.entries) @ w(s)[lo:hi]
            integral, _ = scipy.integrate.quad_vec(f, 0.0, t, epsrel=1e-13, epsabs=0.0)
            ref = scipy.linalg.expm(t * a.entries) @ x0.parts[i] + integral
            np.testing.assert_allclose(got.parts[i], ref, rtol=1e-11, atol=1e-13)

    def test_piecewise_control_split_at_jumps(self, unit_system):
        sys, x0 = unit_system
        w = PiecewiseConstantControl([0.0, 0.7, 1.5], [[1.0, 0.0], [0.0, 2.0]])
        got = propagate(sys, x0, w, 1.5)
        # x1: e^{-1.5} + int_0^0.7 e^{-(1.5-s)} ds ; x2: 2 int_0.7^1.5 e^{-(1.5-s)} ds
        x1 = math.exp(-1.5) + math.exp(-0.8) - math.exp(-1.5)
        x2 = 2.0 * (1.0 - math.exp(-0.8))
        np.testing.assert_allclose(got.flat, [x1, x2], rtol=1e-14)

    def test_outside_horizon(self, unit_system):
        sys, x0 = unit_system
        w = ClosedFormControl("constant", [1.0, 0.0], 1.0)
        with pytest.raises(InvalidHorizon):
            propagate(sys, x0, w, 1.5)
        with pytest.raises(InvalidHorizon):
            propagate(sys, x0, w, -0.1)

    def test_tail_decay(self, unit_system):
        sys, _ = unit_system
        x0 = BlockVector([[1.0, 0.0]], 0.2)
        assert propagate(sys, x0, None, 2.0).tail_bound == 0.2
        assert propagate(sys, x0, None, 2.0, tail_decay=0.5).tail_bound == pytest.approx(0.2 * math.exp(-1.0))

    def test_linearity(self, rng):
        sys = _random_system(rng)
        x0, y0 = _random_vector(rng, sys), _random_vector(rng, sys)
        t = 1.7
        w1, w2 = _smooth_forcing(rng, sys.size, t), _smooth_forcing(rng, sys.size, t)
        a, b = 0.7, -2.3
        lhs = propagate(sys, a * x0 + b * y0, a * w1 + b * w2, t).flat
        rhs = a * propagate(sys, x0, w1, t).flat + b * propagate(sys, y0, w2, t).flat
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 8.0), s=st.floats(0.0, 8.0))
    def test_flow_property(self, seed, t, s):
        rng = np.random.default_rng(seed)
        sys = _random_system(rng, 3)
        x0 = _random_vector(rng, sys)
        direct = propagate(sys, x0, None, t + s).flat
        stepped = propagate(sys, propagate(sys, x0, None, t), None, s).flat
        assert np.linalg.norm(direct - stepped) <= 1e-11 * max(np.linalg.norm(direct), 1e-300)

    def test_quadrature_convergence(self, rng):
        sys = _random_system(rng, 8)
        x0 = _random_vector(rng, sys)
        t = 3.0
        w = _smooth_forcing(rng, sys.size, t)
        q = QuadratureSpec()
        a = propagate(sys, x0, w, t, q).flat
        b = propagate(sys, x0, w, t, q.doubled()).flat
        assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)

    def test_trajectory_steps_match_direct(self, rng):
        sys = _random_system(rng, 3)
        x0 = _random_vector(rng, sys)
        w = _smooth_forcing(rng, sys.size, 2.0)
        times = np.linspace(0.0, 2.0, 9)
        states = trajectory(sys, x0, w, times)
        for t, x in zip(times, states):
            ref = propagate(sys, x0, w, t).flat
            assert np.linalg.norm(x.flat - ref) <= 1e-12 * max(np.linalg.norm(ref), 1.0)

    def test_trajectory_norm_continuity(self, rng):
        sys = _random_system(rng, 5)
        x0 = _random_vector(rng, sys)
        w = _smooth_forcing(rng, sys.size, 1.0)
        times = np.linspace(0.0, 1.0, 2001)
        norms = np.array([x.norm for x in trajectory(sys, x0, w, times)])
        assert np.max(np.abs(np.diff(norms))) < 0.05 * np.max(norms)


class TestFreeDecay:
    def test_zero_state(self, unit_system):
        sys, _ = unit_system
        assert all(n == 0.0 for _, n in free_decay(sys, sys.zero_vector(), [0.0, 1.0, 5.0]))

    def test_scalar(self, unit_system):
        sys, x0 = unit_system
        (_, n), = free_decay(sys, x0, [1.0])
        assert n == pytest.approx(0.36787944117144233, rel=1e-15)

    def test_two_blocks(self):
        sys = BlockSystem([-np.eye(2), -2 * np.eye(2)])
        x0 = BlockVector([[1.0, 0.0], [1.0, 0.0]])
        (_, n), = free_decay(sys, x0, [1.0])
        assert n == pytest.approx(math.sqrt(math.exp(-2) + math.exp(-4)), rel=1e-15)

    def test_tail_is_carried(self, unit_system):
        sys, _ = unit_system
        (_, n), = free_decay(sys, BlockVector([[0.0, 0.0]], 0.3), [4.0])
        assert n == 0.3


class TestEnergy:
    def test_zero(self):
        assert l2_energy(ZeroControl(3, 2.0)) == 0.0

    def test_constant(self):
        assert l2_energy(ClosedFormControl("constant", [0.0, 2.0], 3.0)) == pytest.approx(12.0, rel=1e-14)

    def test_exponential(self):
        w = ClosedFormControl("exponential", [-1.0, 0.0], 0.5 * math.log(3.0), rate=1.0)
        assert l2_energy(w) == pytest.approx(1.0, rel=1e-14)

    def test_sinusoid_against_closed_form(self):
        w = ClosedFormControl("sinusoid", [1.0, 1.0], 2.0, frequency=0.3, phase=0.2)
        om = 2 * math.pi * 0.3
        # two components of int_0^T sin^2(om t + phi) dt = T/2 - (sin(2 om T + 2 phi) - sin 2 phi) / (4 om)
        exact = 2.0 - (math.sin(2 * om * 2.0 + 0.4) - math.sin(0.4)) / (2 * om)
        assert l2_energy(w) == pytest.approx(exact, rel=1e-13)

    def test_piecewise_exact(self):
        w = PiecewiseConstantControl([0.0, 0.5, 2.0], [[1.0, 1.0], [3.0, 0.0]])
        assert l2_energy(w) == 0.5 * 2.0 + 1.5 * 9.0

    def test_admissibility(self):
        assert is_admissible(ZeroControl(2, 1.0), 1e-3)
        assert is_admissible(ClosedFormControl("constant", [1.0, 0.0], 1.0), 1.0)
        assert not is_admissible(ClosedFormControl("constant", [2.0, 0.0], 1.0), 1.0)
        with pytest.raises(ValidationError):
            is_admissible(ZeroControl(2, 1.0), 0.0)

    def test_infinite_horizon_rejected(self):
        with pytest.raises(InvalidHorizon):
            l2_energy(ClosedFormControl("constant", [1.0], math.inf))


class TestQuadratureSpec:
    def test_minimum_node_count(self):
        q = QuadratureSpec(1, 1)
        assert q.panels_for(1e-6) * q.nodes >= 8

    def test_panels_scale_with_horizon(self):
        q = QuadratureSpec(32, 8)
        assert q.panels_for(1.0) == 32
        assert q.panels_for(2.5) == 80
        assert q.doubled().panels_for(1.0) == 64

    @pytest.mark.parametrize("ppu, nodes", [(0, 8), (4, 0), (4, 33), (1.5, 8)])
    def test_invalid(self, ppu, nodes):
        with pytest.raises(ValidationError):
            QuadratureSpec(ppu, nodes)
