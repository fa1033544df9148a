import math

import numpy as np
import pytest
import scipy.linalg

from l2game.control import (
    NullControl,
    certify_optimality,
    null_control,
    optimal_time,
    solve_optimal_time,
    time_optimal_control,
)
from l2game.errors import InvalidHorizon, InvalidTestHorizon, NonConvergence, ValidationError
from l2game.gramian import assemble_gramian
from l2game.scenario import generate_scenario
from l2game.system import (
    BlockSystem,
    BlockVector,
    ClosedFormControl,
    QuadratureSpec,
    ZeroControl,
    is_admissible,
    l2_energy,
    propagate,
)

LN3_2 = 0.5 * math.log(3.0)
LN2_2 = 0.5 * math.log(2.0)


@pytest.fixture(scope="module")
def scenario():
    return generate_scenario(20, seed=11)


class TestNullControl:
    def test_zero_state(self, unit_system):
        sys, _ = unit_system
        u = null_control(sys, sys.zero_vector(), 1.0)
        assert np.all(u.sample(np.linspace(0, 1, 7)) == 0.0)
        assert u.energy() == 0.0

    def test_closed_form(self, unit_system):
        sys, x0 = unit_system
        u = null_control(sys, x0, LN3_2)
        np.testing.assert_allclose(u(0.0), [-1.0, 0.0], rtol=1e-14, atol=1e-15)
        ts = np.linspace(0.0, LN3_2, 11)
        np.testing.assert_allclose(u.sample(ts)[:, 0], -np.exp(ts), rtol=1e-13)
        np.testing.assert_allclose(u.y.flat, x0.flat, rtol=1e-14, atol=1e-15)
        assert u.energy() == pytest.approx(1.0, rel=1e-13)
        assert u.cost == pytest.approx(1.0, rel=1e-14)

    def test_formula_against_scipy(self, scenario):
        sys, x0 = scenario.system, scenario.initial_state
        tau = 1.3
        u = null_control(sys, x0, tau)
        y = u.y
        for t in (0.0, 0.4, tau):
            ref = np.concatenate([-scipy.linalg.expm(-t * b.entries.T) @ p for b, p in zip(sys.blocks, y.parts)])
            np.testing.assert_allclose(u(t), ref, rtol=1e-9, atol=1e-12 * np.abs(ref).max())

    def test_fast_grid_sampling_matches_pointwise(self, scenario):
        sys, x0 = scenario.system, scenario.initial_state
        u = null_control(sys, x0, 2.0)
        q = QuadratureSpec(16, 6)
        for a, b in ((0.0, 2.0), (0.3, 1.1), (1.5, 2.0)):
            grid = q.grid(a, b)
            fast = u.sample_grid(grid)
            slow = u.sample(grid.times().ravel()).reshape(fast.shape)
            np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-14 * np.abs(slow).max())

    def test_steers_to_origin(self, scenario):
        sys, x0 = scenario.system, scenario.initial_state
        for tau in (0.2, 1.0, 4.0):
            u = null_control(sys, x0, tau)
            assert propagate(sys, x0, u, tau).retained_norm <= 1e-6 * x0.retained_norm
            assert u.energy() == pytest.approx(u.cost, rel=1e-8)

    def test_is_minimum_energy(self, unit_system):
        # any other control reaching zero at tau differs by an element orthogonal to u0
        sys, x0 = unit_system
        u = null_control(sys, x0, LN3_2)
        c = -math.exp(-LN3_2) / (1.0 - math.exp(-LN3_2))
        other = ClosedFormControl("constant", [c, 0.0], LN3_2)
        assert propagate(sys, x0, other, LN3_2).retained_norm < 1e-13
        assert l2_energy(other) > u.energy()

    @pytest.mark.parametrize("tau", [0.0, -1.0, math.nan])
    def test_bad_horizon(self, unit_system, tau):
        sys, x0 = unit_system
        with pytest.raises(InvalidHorizon):
            null_control(sys, x0, tau)

    def test_immutable_shared_state(self, unit_system):
        sys, x0 = unit_system
        u = null_control(sys, x0, 1.0)
        assert isinstance(u, NullControl)
        with pytest.raises(ValueError):
            u.eta.flat[0] = 1.0


class TestOptimalTime:
    def test_zero_state(self, unit_system):
        sys, _ = unit_system
        assert optimal_time(sys, sys.zero_vector(), 1.0) == 0.0
        tau, u = time_optimal_control(sys, sys.zero_vector(), 1.0)
        assert tau == 0.0 and isinstance(u, ZeroControl)

    @pytest.mark.parametrize("theta, expected", [(1.0, LN3_2), (math.sqrt(2.0), LN2_2)])
    def test_closed_form(self, unit_system, theta, expected):
        sys, x0 = unit_system
        assert abs(optimal_time(sys, x0, theta) - expected) <= 1e-9

    def test_tolerance_met_and_bracket_ordered(self, scenario):
        sys, x0, theta = scenario.system, scenario.initial_state, scenario.theta
        r = solve_optimal_time(sys, x0, theta)
        assert abs(r.cost - theta ** 2) <= 1e-10 * theta ** 2
        c_lo, c_hi = r.bracket_costs
        assert c_lo > theta ** 2 > c_hi
        assert r.bracket[0] < r.vartheta < r.bracket[1]
        assert r.evaluations == len(r.history)

    def test_scaling_invariance(self, scenario):
        sys, x0, theta = scenario.system, scenario.initial_state, scenario.theta
        base = optimal_time(sys, x0, theta)
        for a in (0.01, 3.0, 250.0):
            assert optimal_time(sys, a * x0, a * theta) == pytest.approx(base, rel=1e-9)

    def test_admissible_at_optimal_time(self, scenario):
        sys, x0, theta = scenario.system, scenario.initial_state, scenario.theta
        tau, u = time_optimal_control(sys, x0, theta)
        assert is_admissible(u, theta)
        assert u.energy() == pytest.approx(theta ** 2, rel=1e-7)

    def test_no_bracket_above_horizon_cap(self, unit_system):
        sys, x0 = unit_system
        with pytest.raises(NonConvergence) as info:
            solve_optimal_time(sys, x0, 0.01, tau_max=1.0)
        assert info.value.bracket is not None

    def test_no_bracket_below_resolution(self, unit_system):
        sys, x0 = unit_system
        with pytest.raises(NonConvergence):
            solve_optimal_time(sys, x0, 1e8)

    def test_iteration_budget_reports_bracket(self, scenario):
        sys, x0, theta = scenario.system, scenario.initial_state, scenario.theta
        with pytest.raises(NonConvergence) as info:
            solve_optimal_time(sys, x0, theta, tol=1e-15, max_iter=2)
        lo, hi, c_lo, c_hi = info.value.bracket
        assert lo < hi and c_lo > theta ** 2 > c_hi

    def test_invalid_theta(self, unit_system):
        sys, x0 = unit_system
        with pytest.raises(ValidationError):
            optimal_time(sys, x0, 0.0)


class TestCertificate:
    def test_closed_form(self, unit_system):
        sys, x0 = unit_system
        r = certify_optimality(sys, x0, 1.0, LN2_2)
        assert abs(r.j_min - 2.0) <= 1e-9
        assert r.inadmissible and r.margin > 0

    def test_second_closed_form(self, unit_system):
        sys, x0 = unit_system
        r = certify_optimality(sys, x0, math.sqrt(2.0), 0.25 * math.log(2.0))
        assert r.j_min == pytest.approx(2.0 / (math.sqrt(2.0) - 1.0), rel=1e-12)
        assert r.inadmissible

    def test_limit_from_above(self, unit_system):
        sys, x0 = unit_system
        margins = [certify_optimality(sys, x0, 1.0, LN3_2 * (1 - e)).margin for e in (1e-1, 1e-2, 1e-3, 1e-4)]
        assert all(m > 0 for m in margins)
        assert all(b < a for a, b in zip(margins, margins[1:]))
        assert margins[-1] < 1e-3

    @pytest.mark.parametrize("factor", [1.0, 1.5, 0.0, -0.2])
    def test_invalid_test_horizon(self, unit_system, factor):
        sys, x0 = unit_system
        vartheta = optimal_time(sys, x0, 1.0)
        with pytest.raises(InvalidTestHorizon):
            certify_optimality(sys, x0, 1.0, factor * vartheta)

    def test_report_dict(self, unit_system):
        sys, x0 = unit_system
        d = certify_optimality(sys, x0, 1.0, 0.3).as_dict()
        assert set(d) == {"tau_test", "vartheta", "j_min", "theta_sq", "margin", "inadmissible"}
        assert d["j_min"] == pytest.approx(assemble_gramian(sys, 0.3).cost(x0))
