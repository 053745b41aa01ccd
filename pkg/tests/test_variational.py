# tests/test_variational.py
# Tests for the variational response, Franck-Condon factor and alpha sweeps

from types import SimpleNamespace

import numpy as np
import pytest

from polaron_qrt.bath import build_frequency_grid
from polaron_qrt.models import ConvergenceError, DomainError, Frame, SpectralDensityParams
from polaron_qrt.variational import (
    SolverOptions, alpha_sweep, czz_weight_diagnostic, find_free_energy_crossing, find_jump, fixed_frame,
    franck_condon, free_energy_gap, solve_frame, solve_self_consistent, variational_response, variational_scan,
)


@pytest.mark.unit
class TestVariationalResponse:
    """Test F(nu; Delta_R, beta)"""

    def test_limits(self):
        """Test F -> 0 at low frequency and F -> 1 at high frequency"""
        F = variational_response(np.array([1e-6, 1e4]), 0.8, 1.0)
        assert F[0] < 1e-6
        assert F[1] == pytest.approx(1.0, abs=1e-3)

    def test_bounded(self):
        """Test 0 < F < 1 on a range of frequencies"""
        F = variational_response(np.geomspace(1e-3, 1e3, 50), 0.5, 2.0)
        assert np.all((F > 0) & (F < 1))

    def test_zero_renormalized_tunnelling(self):
        """Test Delta_R = 0 gives full displacement"""
        np.testing.assert_array_equal(variational_response(np.array([0.1, 1.0]), 0.0, 1.0), 1.0)

    def test_scalar_returns_float(self):
        """Test scalar input returns a float"""
        assert isinstance(variational_response(1.0, 0.5, 1.0), float)

    @pytest.mark.parametrize('nu,delta_r', [(0.0, 0.5), (-1.0, 0.5), (1.0, -0.1)])
    def test_domain(self, nu, delta_r):
        """Test nu <= 0 or Delta_R < 0 is rejected"""
        with pytest.raises(DomainError):
            variational_response(nu, delta_r, 1.0)


@pytest.mark.unit
class TestFranckCondon:
    """Test <B> from a response profile"""

    def test_decoupled(self, free_params):
        """Test alpha = 0 gives <B> = 1"""
        assert franck_condon(1.0, free_params) == 1.0

    def test_zero_response(self, default_params):
        """Test F = 0 gives <B> = 1"""
        assert franck_condon(0.0, default_params) == 1.0

    def test_ohmic_full_polaron_diverges(self):
        """Test s <= 2 with F = 1 collapses <B> to zero"""
        p = SpectralDensityParams(alpha=0.05, nu_c=10.0, s=1.0, beta=1.0)
        assert franck_condon(1.0, p) == 0.0

    def test_superohmic_full_polaron_finite(self, default_params):
        """Test s = 3 with F = 1 gives a finite <B>"""
        value = franck_condon(1.0, default_params)
        assert 0.0 < value < 1.0


@pytest.mark.physics
class TestSelfConsistency:
    """Test the damped fixed-point solver"""

    def test_default_point_converges(self, default_solution):
        """Test convergence to a delocalized solution"""
        assert default_solution.converged
        assert 0.0 < default_solution.B_avg < 1.0
        assert not default_solution.localized
        assert default_solution.Delta_R == pytest.approx(default_solution.B_avg * default_solution.Delta)

    def test_fixed_point_residual(self, default_solution):
        """Test <B> reproduces itself through F"""
        assert default_solution.residual() < 1e-8

    def test_decoupled_bath(self, free_params):
        """Test alpha = 0 leaves Delta unrenormalized"""
        sol = solve_self_consistent(free_params, 0.7)
        assert sol.B_avg == 1.0
        assert sol.Delta_R == pytest.approx(0.7)

    def test_invalid_delta(self, default_params):
        """Test Delta <= 0 is rejected"""
        with pytest.raises(DomainError):
            solve_self_consistent(default_params, 0.0)

    def test_iteration_budget(self, default_params):
        """Test an exhausted iteration budget raises with the trace"""
        with pytest.raises(ConvergenceError) as exc_info:
            solve_self_consistent(default_params, 1.0, SolverOptions(max_iterations=1, tolerance=1e-14))
        assert len(exc_info.value.trace) == 2
        assert exc_info.value.diagnostics['iterations'] == 2

    def test_to_dict(self, default_solution):
        """Test serialized fields"""
        data = default_solution.to_dict()
        assert data['frame'] == 'variational'
        assert data['alpha'] == 0.1
        assert data['B_avg'] == default_solution.B_avg


@pytest.mark.physics
class TestFixedFrames:
    """Test the weak and full-polaron limits"""

    def test_weak_frame(self, default_params):
        """Test F = 0 keeps <B> = 1"""
        sol = fixed_frame(default_params, 1.0, Frame.WEAK)
        assert sol.B_avg == 1.0
        assert sol.Delta_R == 1.0
        np.testing.assert_array_equal(sol.response(np.array([0.5, 5.0])), 0.0)

    def test_full_polaron_ohmic_localizes(self):
        """Test F = 1 at s = 1 gives <B> = 0"""
        p = SpectralDensityParams(alpha=0.05, nu_c=10.0, s=1.0, beta=1.0)
        sol = fixed_frame(p, 1.0, 'full_polaron')
        assert sol.B_avg == 0.0
        assert sol.localized

    def test_full_polaron_response(self, default_params):
        """Test F = 1 everywhere"""
        sol = solve_frame(default_params, 1.0, Frame.FULL_POLARON)
        np.testing.assert_array_equal(sol.response(np.array([0.01, 1.0, 100.0])), 1.0)

    def test_variational_frame_delegates(self, default_params, default_solution):
        """Test the variational frame runs the solver"""
        sol = solve_frame(default_params, 1.0, 'variational')
        assert sol.B_avg == pytest.approx(default_solution.B_avg, rel=1e-12)


@pytest.mark.physics
class TestAlphaSweep:
    """Test continuation over coupling strength"""

    def test_results_follow_input_order(self):
        """Test solutions are returned in the order of the alpha list"""
        p = SpectralDensityParams(alpha=0.0, nu_c=10.0, s=3.0, beta=1.0)
        alphas = [0.1, 0.0, 0.05]
        for direction in ('up', 'down'):
            sols = alpha_sweep(p, alphas, 1.0, direction)
            assert [sol.params.alpha for sol in sols] == alphas

    def test_monotone_in_coupling(self):
        """Test <B> decreases with alpha along a delocalized branch"""
        p = SpectralDensityParams(alpha=0.0, nu_c=10.0, s=3.0, beta=1.0)
        sols = alpha_sweep(p, [0.0, 0.02, 0.05, 0.1], 1.0, 'up')
        values = [sol.B_avg for sol in sols]
        assert values[0] == 1.0
        assert all(a > b for a, b in zip(values[:-1], values[1:]))

    def test_invalid_direction(self, default_params):
        """Test unknown sweep directions are rejected"""
        with pytest.raises(DomainError):
            alpha_sweep(default_params, [0.1], 1.0, 'sideways')

    def test_find_jump(self):
        """Test the bracket around the first collapse"""
        sols = [SimpleNamespace(localized=flag) for flag in (False, False, True, True)]
        assert find_jump([0.1, 0.2, 0.3, 0.4], sols) == (0.2, 0.3)

    def test_find_jump_none(self):
        """Test no bracket without a collapse"""
        sols = [SimpleNamespace(localized=False) for _ in range(3)]
        assert find_jump([0.1, 0.2, 0.3], sols) is None

    def test_collapse_is_flagged(self):
        """Test a solve past the ohmic transition is reported as localized with <B> = 0"""
        p = SpectralDensityParams(alpha=0.3, nu_c=10.0, s=1.0, beta=1.0)
        sol = solve_self_consistent(p, 1.0)
        assert sol.converged
        assert sol.localized
        assert sol.B_avg == 0.0
        assert sol.Delta_R == 0.0

    @pytest.mark.slow
    def test_ohmic_sweep_finds_jump(self):
        """Test an upward ohmic sweep collapses once, from a diminished <B> of about one half"""
        p = SpectralDensityParams(alpha=0.0, nu_c=10.0, s=1.0, beta=1.0)
        alphas = [round(0.01 * k, 2) for k in range(5, 21)]
        sols = alpha_sweep(p, alphas, 1.0, 'up')
        jump = find_jump(alphas, sols)
        assert jump is not None
        before, after = jump
        assert after - before == pytest.approx(0.01)
        assert 0.12 <= before <= 0.18
        assert sols[alphas.index(before)].B_avg == pytest.approx(0.5, abs=0.1)
        flags = [sol.localized for sol in sols]
        assert flags == sorted(flags)
        assert all(sol.B_avg == 0.0 for sol in sols if sol.localized)

    @pytest.mark.slow
    def test_superohmic_sweep_is_smooth(self):
        """Test s = 3 stays delocalized and monotone over alpha in [0, 0.5]"""
        p = SpectralDensityParams(alpha=0.0, nu_c=10.0, s=3.0, beta=1.0)
        alphas = [0.05 * k for k in range(11)]
        sols = alpha_sweep(p, alphas, 1.0, 'up')
        assert find_jump(alphas, sols) is None
        values = [sol.B_avg for sol in sols]
        assert all(a > b > 0 for a, b in zip(values[:-1], values[1:]))


@pytest.mark.physics
class TestFreeEnergy:
    """Test the free-energy gap between the delocalized and collapsed branches"""

    def test_decoupled_gap(self, free_params):
        """Test alpha = 0 leaves only the two-level term"""
        sol = solve_self_consistent(free_params, 1.0)
        assert free_energy_gap(sol) == pytest.approx(-np.log(np.cosh(0.5)))

    def test_superohmic_delocalized_is_lower(self, default_solution):
        """Test the delocalized branch wins at s = 3, alpha = 0.1"""
        assert free_energy_gap(default_solution) < 0.0

    def test_localized_gap_is_zero(self):
        """Test a collapsed solution has no gap to itself"""
        p = SpectralDensityParams(alpha=0.3, nu_c=10.0, s=1.0, beta=1.0)
        assert free_energy_gap(solve_self_consistent(p, 1.0)) == 0.0

    def test_ohmic_crossing_precedes_jump(self):
        """Test the ohmic gap changes sign before the delocalized branch disappears"""
        p = SpectralDensityParams(alpha=0.0, nu_c=10.0, s=1.0, beta=1.0)
        alphas = [0.05, 0.15]
        sols = alpha_sweep(p, alphas, 1.0, 'up')
        assert not any(sol.localized for sol in sols)
        assert free_energy_gap(sols[0]) < 0.0 < free_energy_gap(sols[1])
        assert find_free_energy_crossing(alphas, sols) == (0.05, 0.15)


@pytest.mark.physics
class TestScan:
    """Test the phase-diagram scan"""

    def test_czz_weight(self, default_solution, default_tables, free_params):
        """Test the C_ZZ weight is positive at finite coupling and zero without it"""
        assert czz_weight_diagnostic(default_solution, T_max=20.0, tables=default_tables) > 0.0
        free = solve_self_consistent(free_params, 1.0)
        assert czz_weight_diagnostic(free, T_max=20.0) == 0.0

    @pytest.mark.slow
    def test_czz_weight_falls_with_ohmicity(self):
        """Test the C_ZZ weight at alpha = 0.1 decreases strictly over s = 1, 1.5, 2, 3"""
        weights = []
        for s in (1.0, 1.5, 2.0, 3.0):
            sol = solve_self_consistent(SpectralDensityParams(alpha=0.1, nu_c=10.0, s=s, beta=1.0), 1.0)
            assert not sol.localized
            weights.append(czz_weight_diagnostic(sol, T_max=50.0, dtau=0.05))
        assert all(w > 0.0 for w in weights)
        assert all(a > b for a, b in zip(weights[:-1], weights[1:]))

    @pytest.mark.slow
    def test_small_scan(self):
        """Test scan frame layout and summary keys"""
        base = SpectralDensityParams(alpha=0.0, nu_c=10.0, s=3.0, beta=1.0)
        frame, summary = variational_scan(base, [0.0, 0.05], [3.0], czz_T_max=5.0, czz_dtau=0.05)
        assert list(frame.columns) == ['s', 'alpha', 'B_avg', 'Delta_R', 'localized_flag', 'czz_weight', 'sweep']
        assert len(frame) == 4
        assert set(frame['sweep']) == {'up', 'down'}
        assert 's=3' in summary
        assert summary['s=3']['jumps'] == {'up': None, 'down': None}
        assert summary['s=3']['free_energy_crossing'] == {'up': None, 'down': None}

    def test_shared_grid(self, default_params):
        """Test a supplied grid is carried on the solution"""
        grid = build_frequency_grid(default_params)
        sol = solve_self_consistent(default_params, 1.0, grid=grid)
        assert sol.grid is grid
        assert sol.F_grid.shape == grid.nodes.shape
